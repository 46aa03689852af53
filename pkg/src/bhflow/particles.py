"""Particle ensembles advected by the canonical velocity field.

Lagrangian check of the continuity-equation realization: sample the initial
density by inverse-CDF, push the ensemble with RK4 through time-interpolated
face velocities, and compare the empirical terminal law against the
prescribed one.  Boundary reflection mirrors the zero-flux condition at the
particle level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bhspace import CoordState
from .grid import FaceField, Grid
from .neumann import DEFAULT_TOL
from .reduction import Basis, CoefficientPath, reduced_velocity, state_of


@dataclass(frozen=True)
class Ensemble:
    positions: np.ndarray   # (n, dim)
    time: float
    seed: int

    @property
    def size(self) -> int:
        return self.positions.shape[0]


def _cell_probabilities(grid: Grid, state: CoordState) -> np.ndarray:
    p = state.w * grid.nu0_cell_weight
    return p / p.sum()


def _sample_axis(faces: np.ndarray, probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse CDF for a piecewise-constant density with cell masses `probs`."""
    cdf = np.concatenate([[0.0], np.cumsum(probs)])
    cdf[-1] = 1.0
    idx = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, probs.size - 1)
    width = faces[1:] - faces[:-1]
    frac = (u - cdf[idx]) / np.maximum(probs[idx], 1e-300)
    return faces[idx] + np.clip(frac, 0.0, 1.0) * width[idx]


def sample_initial(grid: Grid, state: CoordState, n: int, seed: int) -> Ensemble:
    """Draw n particles from the state's density (inverse CDF per axis)."""
    if n < 1:
        raise ValueError("need at least one particle")
    rng = np.random.Generator(np.random.Philox(seed))
    p = _cell_probabilities(grid, state)
    if grid.dim == 1:
        u = rng.random(n)
        x = _sample_axis(grid.faces[0], p, u)
        positions = x[:, None]
    else:
        u = rng.random((n, 2))
        marginal = p.sum(axis=1)
        x = _sample_axis(grid.faces[0], marginal, u[:, 0])
        ix = np.clip(np.searchsorted(grid.faces[0], x, side="right") - 1,
                     0, grid.shape[0] - 1)
        y = np.empty(n)
        conditionals = p / np.maximum(marginal[:, None], 1e-300)
        for i in np.unique(ix):
            mask = ix == i
            y[mask] = _sample_axis(grid.faces[1], conditionals[i], u[mask, 1])
        positions = np.column_stack([x, y])
    return Ensemble(positions=positions, time=0.0, seed=seed)


def _reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    length = hi - lo
    y = np.mod(x - lo, 2.0 * length)
    return lo + np.minimum(y, 2.0 * length - y)


def _interp_axis_velocity(grid: Grid, comp: np.ndarray, axis: int,
                          positions: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of one face-normal component at positions."""
    if grid.dim == 1:
        return np.interp(positions[:, 0], grid.faces[0], comp)
    # along `axis` the component lives on faces, along the other on centers
    other = 1 - axis
    fa = grid.faces[axis]
    ca = grid.centers[other]
    pa = positions[:, axis]
    po = np.clip(positions[:, other], ca[0], ca[-1])
    ia = np.clip(np.searchsorted(fa, pa) - 1, 0, fa.size - 2)
    io = np.clip(np.searchsorted(ca, po) - 1, 0, ca.size - 2)
    ta = (pa - fa[ia]) / (fa[ia + 1] - fa[ia])
    to = (po - ca[io]) / (ca[io + 1] - ca[io])
    ta = np.clip(ta, 0.0, 1.0)
    to = np.clip(to, 0.0, 1.0)
    if axis == 0:
        v00 = comp[ia, io]
        v10 = comp[ia + 1, io]
        v01 = comp[ia, io + 1]
        v11 = comp[ia + 1, io + 1]
    else:
        v00 = comp[io, ia]
        v10 = comp[io, ia + 1]
        v01 = comp[io + 1, ia]
        v11 = comp[io + 1, ia + 1]
    return ((1 - ta) * (1 - to) * v00 + ta * (1 - to) * v10
            + (1 - ta) * to * v01 + ta * to * v11)


def _evaluate_velocity(grid: Grid, field: FaceField, positions: np.ndarray) -> np.ndarray:
    out = np.empty_like(positions)
    for a in range(grid.dim):
        out[:, a] = _interp_axis_velocity(grid, field.components[a], a, positions)
    return out


def advect(grid: Grid, basis: Basis, path: CoefficientPath, ensemble: Ensemble,
           substeps: int, tol: float = DEFAULT_TOL) -> Ensemble:
    """RK4 push of the ensemble along the path's canonical velocity.

    Node velocity fields are computed once; within each substep the field is
    frozen at the substep midpoint (linear interpolation in time between the
    bracketing nodes), and one RK4 step of the autonomous ODE is taken.
    """
    if substeps < 1:
        raise ValueError("need at least one substep")
    adot = path.node_velocities()
    node_fields = [
        reduced_velocity(grid, basis, path.coeffs[i], adot[i], tol=tol)
        for i in range(path.n_nodes)
    ]

    def field_at(t: float) -> FaceField:
        s = (t - path.times[0]) / path.dt
        i = int(np.clip(np.floor(s), 0, path.n_nodes - 2))
        theta = s - i
        return (1.0 - theta) * node_fields[i] + theta * node_fields[i + 1]

    x = ensemble.positions.copy()
    dt = path.horizon / substeps
    t = float(path.times[0])
    for _ in range(substeps):
        frozen = field_at(t + 0.5 * dt)

        def vel(pos):
            return _evaluate_velocity(grid, frozen, pos)

        k1 = vel(x)
        k2 = vel(x + 0.5 * dt * k1)
        k3 = vel(x + 0.5 * dt * k2)
        k4 = vel(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        for a in range(grid.dim):
            lo, hi = grid.extents[a]
            x[:, a] = _reflect(x[:, a], lo, hi)
        t += dt
    return Ensemble(positions=x, time=float(path.times[-1]), seed=ensemble.seed)


def density_cdf(grid: Grid, state: CoordState, axis: int = 0) -> np.ndarray:
    """Cumulative distribution of the (marginal) density at the axis faces."""
    p = _cell_probabilities(grid, state)
    if grid.dim == 2:
        p = p.sum(axis=1 - axis)
    cdf = np.concatenate([[0.0], np.cumsum(p)])
    cdf[-1] = 1.0
    return cdf


def ks_distance(grid: Grid, positions: np.ndarray, cdf_at_faces: np.ndarray,
                axis: int = 0) -> float:
    """Kolmogorov-Smirnov distance of sampled positions to a face-sampled CDF."""
    x = np.sort(np.asarray(positions)[:, axis])
    F = np.interp(x, grid.faces[axis], cdf_at_faces)
    n = x.size
    upper = np.max(np.arange(1, n + 1) / n - F)
    lower = np.max(F - np.arange(0, n) / n)
    return float(max(upper, lower))
