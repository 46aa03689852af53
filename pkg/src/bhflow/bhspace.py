"""Centered log-density coordinates for positive probability densities.

A state is stored as a mean-zero coordinate field h together with its
normalized density w = e^h / int e^h dnu0.  The coordinate map (centered
log of the density) and the normalized exponential are exact inverses of
each other on the grid, and weighted means/covariances computed against w
are the derivatives of the normalization map, which is what every Jacobian
in the package ultimately reduces to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class AdmissibleBounds:
    """Pointwise density bounds 0 < lower <= w <= upper defining admissibility."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (0.0 < self.lower < self.upper):
            raise ValueError("bounds must satisfy 0 < lower < upper")

    def admits(self, state: "CoordState") -> bool:
        return bool(state.w.min() >= self.lower and state.w.max() <= self.upper)


@dataclass(frozen=True)
class CoordState:
    """A coordinate field h (mean-zero) with its cached density and log-normalizer."""

    grid: Grid
    h: np.ndarray
    w: np.ndarray
    log_z: float

    def admissible(self, bounds: AdmissibleBounds) -> bool:
        return bounds.admits(self)


def exp_normalize(grid: Grid, h: np.ndarray) -> CoordState:
    """Map a coordinate field to its normalized density state.

    The input is centered first (states are shift-invariant), and the max is
    subtracted before exponentiation so large-amplitude fields cannot
    overflow; the normalization cancels the shift exactly.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != grid.shape:
        raise ValueError(f"field shape {h.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("coordinate field contains non-finite entries")
    h = grid.project_mean_zero(h)
    m = h.max()
    e = np.exp(h - m)
    z_shifted = e.mean()          # int e^(h-m) dnu0
    w = e / z_shifted
    log_z = float(m + np.log(z_shifted))
    return CoordState(grid=grid, h=h, w=w, log_z=log_z)


def clr(grid: Grid, w: np.ndarray) -> np.ndarray:
    """Centered log of a positive density; inverse of `exp_normalize`."""
    w = np.asarray(w, dtype=float)
    if w.shape != grid.shape:
        raise ValueError(f"field shape {w.shape} does not match grid {grid.shape}")
    if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("density must be strictly positive and finite")
    return grid.project_mean_zero(np.log(w))


def mean_under(state: CoordState, f: np.ndarray) -> float:
    """Expectation of a cell field under the state's density.

    Normalized by the quadrature mass of w so that means, covariances and
    the Jacobians built from them are exact derivatives of `exp_normalize`.
    """
    g = state.grid
    f = np.asarray(f, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {g.shape}")
    mass = state.w.mean()
    return float((f * state.w).mean() / mass)


def cov_under(state: CoordState, f: np.ndarray, g: np.ndarray) -> float:
    """Weighted covariance of two cell fields under the state's density."""
    fbar = f - mean_under(state, f)
    gbar = g - mean_under(state, g)
    mass = state.w.mean()
    return float((fbar * gbar * state.w).mean() / mass)


def center_under(state: CoordState, f: np.ndarray) -> np.ndarray:
    """f minus its expectation under the state's density."""
    return np.asarray(f, dtype=float) - mean_under(state, f)


def log_density_rate(state: CoordState, hdot: np.ndarray) -> np.ndarray:
    """Time derivative of the log-density along a coordinate path.

    For h(t) with derivative hdot, the log-density of the induced states
    evolves as hdot minus its current weighted mean.
    """
    return center_under(state, hdot)
