"""Numerical laboratory for long-range lattice random walks and their critical models."""

__version__ = "0.1.0"

from .stepdist import (  # noqa: F401
    LatticeParams,
    StepDistribution,
    BlockDistribution,
    SubordinatorWeights,
    build_power_law,
    build_subordinated,
    fourier_D,
    v_alpha,
)
