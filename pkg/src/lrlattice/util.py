"""Shared numerical helpers: lattice grids, tail sums, oscillatory quadrature, fits, reporting."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special, stats

TWO_PI = 2.0 * math.pi

# surface area of the unit sphere S^{d-1}
SPHERE_AREA = {1: 2.0, 2: TWO_PI, 3: 4.0 * math.pi, 4: 2.0 * math.pi**2}


def sphere_area(d: int) -> float:
    if d in SPHERE_AREA:
        return SPHERE_AREA[d]
    return 2.0 * math.pi ** (d / 2.0) / special.gamma(d / 2.0)


def fft_coords(M: int) -> np.ndarray:
    """Integer coordinates of the torus representatives in FFT index order."""
    return np.fft.fftfreq(M, d=1.0 / M).astype(np.int64)


def grid_radius_sq(d: int, M: int, shift: Sequence[float] | None = None,
                   dtype=np.float64) -> np.ndarray:
    """|x + shift|^2 on the full (M,)*d torus grid, FFT index order."""
    c = fft_coords(M).astype(dtype)
    if shift is None:
        shift = [0.0] * d
    total = np.zeros((1,) * d, dtype=dtype)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = M
        total = total + ((c + dtype(shift[axis])) ** 2).reshape(shape)
    return total


def apply_radial(fn: Callable[[np.ndarray], np.ndarray], d: int, M: int,
                 shift: Sequence[float] | None = None) -> np.ndarray:
    """Evaluate fn(r) on the torus grid where r = |x + shift|, chunked along axis 0."""
    c = fft_coords(M).astype(np.float64)
    if shift is None:
        shift = [0.0] * d
    out = np.empty((M,) * d, dtype=np.float64)
    if d == 1:
        return fn(np.abs(c + shift[0]))
    # r^2 for the trailing axes, built once
    tail_sq = np.zeros((M,) * (d - 1))
    for axis in range(1, d):
        shape = [1] * (d - 1)
        shape[axis - 1] = M
        tail_sq = tail_sq + ((c + shift[axis]) ** 2).reshape(shape)
    chunk = max(1, (2 ** 22) // max(1, M ** (d - 1)))
    for lo in range(0, M, chunk):
        hi = min(M, lo + chunk)
        r2 = (c[lo:hi] + shift[0])[(slice(None),) + (None,) * (d - 1)] ** 2 + tail_sq
        out[lo:hi] = fn(np.sqrt(r2))
    return out


def window_coords(W: int, d: int) -> tuple[np.ndarray, ...]:
    """Open meshgrid of coordinates -W..W per axis."""
    ax = np.arange(-W, W + 1)
    return np.meshgrid(*([ax] * d), indexing="ij", sparse=True)


def window_radius(W: int, d: int) -> np.ndarray:
    grids = window_coords(W, d)
    r2 = np.zeros((1,) * d)
    for g in grids:
        r2 = r2 + g.astype(np.float64) ** 2
    return np.sqrt(r2)


def zeta_tail(s: float, n0: int) -> float:
    """Sum of t^-s for integer t > n0 (s > 1)."""
    if s <= 1.0:
        raise ValueError(f"zeta tail diverges for s={s}")
    return float(special.zeta(s, n0 + 1))


def riemann_zeta(s: float) -> float:
    return float(special.zeta(s, 1))


# ---------------------------------------------------------------------------
# oscillatory radial quadrature
# ---------------------------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (x, w)
    return _GL_CACHE[n]


def gauss_panel(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                order: int = 24) -> float:
    x, w = _gauss_nodes(order)
    mid, half = 0.5 * (b + a), 0.5 * (b - a)
    return float(half * np.dot(w, f(mid + half * x)))


def _kernel_zeros(d: int, r: float, count: int) -> np.ndarray:
    """First positive zeros of the angular-average kernel Omega_d(k r) in k."""
    if d == 2:
        z = special.jn_zeros(0, count)
    else:
        # cos (d=1) and sinc (d=3) both have zeros at multiples/offsets of pi
        if d == 1:
            z = (np.arange(count) + 0.5) * math.pi
        else:
            z = (np.arange(count) + 1.0) * math.pi
    return z / r


def angular_kernel(d: int, z: np.ndarray) -> np.ndarray:
    """Spherical average of e^{i k.x} over directions: Omega_d(|k||x|)."""
    z = np.asarray(z, dtype=np.float64)
    if d == 1:
        return np.cos(z)
    if d == 2:
        return special.j0(z)
    if d == 3:
        return np.sinc(z / math.pi)  # sin z / z
    # general d via Bessel
    nu = d / 2.0 - 1.0
    out = np.empty_like(z)
    small = np.abs(z) < 1e-12
    out[small] = 1.0
    zb = z[~small]
    out[~small] = special.gamma(d / 2.0) * (2.0 / zb) ** nu * special.jv(nu, zb)
    return out


def radial_oscillatory_integral(envelope: Callable[[np.ndarray], np.ndarray],
                                d: int, r: float,
                                lower: float = 0.0, upper: float = math.inf,
                                tol: float = 1e-13, order: int = 24,
                                max_panels: int = 200000) -> float:
    """Integrate envelope(k) * Omega_d(k r) for k in (lower, upper).

    The envelope must decay (absolutely integrable against the oscillation);
    panels follow the kernel zeros so partial sums alternate.
    """
    if r <= 0.0:
        # no oscillation
        def g(k):
            return envelope(k)
        total, a = 0.0, lower
        step = 1.0 if not math.isfinite(upper) else (upper - lower) / 64.0
        step = max(step, 1e-3)
        while a < upper:
            b = min(upper, a + step)
            piece = gauss_panel(g, a, b, order)
            total += piece
            if abs(piece) < tol * max(1.0, abs(total)) and b - lower > 10 * step:
                break
            a = b
            step *= 1.5
        return total

    def g(k):
        return envelope(k) * angular_kernel(d, k * r)

    zero_block = 512
    zeros = _kernel_zeros(d, r, zero_block)
    cuts = [lower]
    total = 0.0
    zi = 0
    last = lower
    tail_piece = math.inf
    for _ in range(max_panels):
        while zi < len(zeros) and zeros[zi] <= last + 1e-300:
            zi += 1
        if zi >= len(zeros):
            zeros = np.concatenate([zeros, zeros[-1] + (np.arange(1, zero_block + 1)) * (math.pi / r)])
        nxt = zeros[zi]
        if nxt >= upper:
            total += gauss_panel(g, last, upper, order) if math.isfinite(upper) else 0.0
            return total
        piece = gauss_panel(g, last, nxt, order)
        total += piece
        tail_piece = abs(piece)
        last = nxt
        zi += 1
        if tail_piece < tol * max(1e-300, abs(total)) and last > lower + 5 * math.pi / r:
            break
    return total


def stable_density(alpha: float, d: int, s: float, r: float,
                   tol: float = 1e-12) -> float:
    """Transition density p_s(x) of the alpha (min 2)-stable/Gaussian process at |x| = r.

    p_s(x) = (2 pi)^-d Int e^{-i k.x - s |k|^(alpha^2... a = alpha min 2)} d^d k,
    reduced to a radial integral against the angular kernel.
    """
    a = min(alpha, 2.0)
    if s <= 0:
        raise ValueError("s must be positive")
    if a >= 2.0:
        return float((4.0 * math.pi * s) ** (-d / 2.0) * math.exp(-r * r / (4.0 * s)))
    pref = sphere_area(d) / TWO_PI ** d

    def env(k):
        return k ** (d - 1) * np.exp(-s * k ** a)

    val = pref * radial_oscillatory_integral(env, d, r, tol=tol)
    return float(val)


def stable_resolvent_tail(alpha: float, d: int, v: float, T: float, r: float,
                          k_lo: float = 0.0, k_hi: float = math.inf,
                          tol: float = 1e-12) -> float:
    """Int_T^inf p_{v t}(x) dt restricted to |k| in (k_lo, k_hi) in Fourier space.

    Equals (2 pi)^-d Int_{k_lo<|k|<k_hi} e^{-i k.x} e^{-v T |k|^a} / (v |k|^a) d^d k.
    """
    a = min(alpha, 2.0)
    pref = sphere_area(d) / TWO_PI ** d

    def env(k):
        ka = k ** a
        return k ** (d - 1) * np.exp(-v * T * ka) / (v * ka)

    return float(pref * radial_oscillatory_integral(env, d, r, lower=max(k_lo, 1e-300),
                                                    upper=k_hi, tol=tol))


def stable_density_dt(alpha: float, d: int, v: float, t: float, r: float,
                      tol: float = 1e-12) -> float:
    """d/dt p_{v t}(x): radial integral with an extra -v|k|^a factor."""
    a = min(alpha, 2.0)
    pref = sphere_area(d) / TWO_PI ** d

    def env(k):
        ka = k ** a
        return -v * ka * k ** (d - 1) * np.exp(-v * t * ka)

    return float(pref * radial_oscillatory_integral(env, d, r, tol=tol))


def riesz_amplitude(d: int, alpha: float) -> float:
    """gamma such that Int_0^inf p_t(x) dt = gamma |x|^{(a)-d} with a = alpha min 2."""
    a = min(alpha, 2.0)
    if d <= a:
        raise ValueError("requires d > alpha min 2")
    return float(special.gamma((d - a) / 2.0)
                 / (2.0 ** a * math.pi ** (d / 2.0) * special.gamma(a / 2.0)))


# ---------------------------------------------------------------------------
# fits and statistics
# ---------------------------------------------------------------------------

def loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope of log y vs log x; returns (slope, intercept, rms residual)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def fit_plateau_with_correction(x: np.ndarray, y: np.ndarray,
                                mu_grid: np.ndarray | None = None
                                ) -> tuple[float, float, float, float]:
    """Fit y ~ A + B x^-mu over a 1-d grid of mu; returns (A, B, mu, rms)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if mu_grid is None:
        mu_grid = np.linspace(0.05, 2.5, 120)
    best = (np.mean(y), 0.0, mu_grid[0], math.inf)
    for mu in mu_grid:
        A = np.vstack([np.ones_like(x), x ** (-mu)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        rms = float(np.sqrt(np.mean((y - A @ coef) ** 2)))
        if rms < best[3]:
            best = (float(coef[0]), float(coef[1]), float(mu), rms)
    return best


def wilson_ci(successes: int | np.ndarray, n: int, z: float = 1.96
              ) -> tuple[np.ndarray, np.ndarray]:
    """Wilson score interval for a binomial proportion."""
    k = np.asarray(successes, dtype=np.float64)
    phat = k / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return center - half, center + half


def kendall_increase_pvalue(seq: Sequence[float]) -> float:
    """One-sided Kendall tau p-value against a monotone increasing trend."""
    seq = np.asarray(seq, float)
    if len(seq) < 3 or np.allclose(seq, seq[0]):
        return 1.0
    res = stats.kendalltau(np.arange(len(seq)), seq, alternative="greater")
    return float(res.pvalue)


# ---------------------------------------------------------------------------
# reproducibility plumbing
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence],
              meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")


def _fmt_cell(c) -> str:
    if isinstance(c, float):
        return repr(c)
    return str(c)


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
