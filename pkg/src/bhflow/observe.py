"""Feature-expectation observations through Markov smoothing kernels.

An observation model pairs a row-stochastic kernel with a stack of feature
fields.  Observing a state takes the weighted mean of each kernel-smoothed
feature, so the Jacobian with respect to basis coefficients is exactly a
covariance matrix between effective features and basis functions.  The
observability constant is the smallest singular value of that Jacobian
measured against the reference-measure geometry of the subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bhspace import CoordState, cov_under, mean_under
from .grid import Grid
from .reduction import Basis, CoefficientPath, state_of


def gaussian_kernel_matrix(points: np.ndarray, sigma: float) -> np.ndarray:
    """Row-stochastic truncated-Gaussian smoothing matrix on a 1D point set."""
    if sigma <= 0:
        raise ValueError("smoothing bandwidth must be positive")
    diff = points[:, None] - points[None, :]
    K = np.exp(-0.5 * (diff / sigma) ** 2)
    K[np.abs(diff) > 4.0 * sigma] = 0.0
    K /= K.sum(axis=1, keepdims=True)
    return K


class ObservationModel:
    """Markov kernel plus feature fields; caches kernel-smoothed features."""

    def __init__(self, grid: Grid, features: np.ndarray, kernel: str = "identity",
                 sigma: float | None = None):
        features = np.asarray(features, dtype=float)
        if features.ndim != grid.dim + 1 or features.shape[1:] != grid.shape:
            raise ValueError(
                f"feature array shape {features.shape} does not match grid {grid.shape}"
            )
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite entries")
        if kernel not in ("identity", "gaussian"):
            raise ValueError(f"unknown kernel '{kernel}'")
        self.grid = grid
        self.features = features
        self.kernel = kernel
        self.sigma = float(sigma) if sigma is not None else None
        if kernel == "gaussian":
            if self.sigma is None:
                raise ValueError("gaussian kernel needs a bandwidth")
            self._axis_kernels = [
                gaussian_kernel_matrix(grid.centers[a], self.sigma)
                for a in range(grid.dim)
            ]
            self.effective_features = np.stack(
                [self._smooth(f) for f in features]
            )
        else:
            self._axis_kernels = None
            self.effective_features = features.copy()

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def _smooth(self, f: np.ndarray) -> np.ndarray:
        out = f
        for a in range(self.grid.dim):
            out = np.moveaxis(self._axis_kernels[a] @ np.moveaxis(out, a, 0), 0, a)
        return out

    def kernel_matrix(self) -> np.ndarray | None:
        """Dense kernel matrix on flattened cells (None for identity)."""
        if self.kernel == "identity":
            return None
        K = self._axis_kernels[0]
        for a in range(1, self.grid.dim):
            K = np.kron(K, self._axis_kernels[a])
        return K


def monomial_features(grid: Grid, degree: int) -> np.ndarray:
    """x, x^2, ..., x^degree on each axis coordinate."""
    if degree < 1:
        raise ValueError("monomial degree must be >= 1")
    coords = grid.mesh()
    feats = []
    for a in range(grid.dim):
        x = np.broadcast_to(coords[a], grid.shape)
        for p in range(1, degree + 1):
            feats.append(x ** p)
    return np.stack(feats)


def fourier_features(grid: Grid, count: int) -> np.ndarray:
    """cos(k pi xhat), k = 1..count, on each normalized axis coordinate."""
    if count < 1:
        raise ValueError("feature count must be >= 1")
    coords = grid.mesh()
    feats = []
    for a in range(grid.dim):
        lo, hi = grid.extents[a]
        xhat = np.broadcast_to((coords[a] - lo) / (hi - lo), grid.shape)
        for k in range(1, count + 1):
            feats.append(np.cos(k * np.pi * xhat))
    return np.stack(feats)


def observe(grid: Grid, model: ObservationModel, state: CoordState) -> np.ndarray:
    """Expected effective features under the state's density."""
    return np.array([mean_under(state, z) for z in model.effective_features])


@dataclass(frozen=True)
class ObservabilityReport:
    J: np.ndarray           # (r, m)
    gram: np.ndarray        # (m, m) = J^T J
    kappa: float            # smallest singular value of J against the basis Gram
    singular_values: np.ndarray


def observation_jacobian(grid: Grid, basis: Basis, model: ObservationModel,
                         a: np.ndarray) -> ObservabilityReport:
    """Jacobian of the observation map at coefficients a.

    Column k is the covariance of each effective feature with basis function
    k, which is the exact derivative of `observe` composed with the
    normalized exponential map.
    """
    state = state_of(grid, basis, a)
    J = np.array([
        [cov_under(state, z, basis.functions[k]) for k in range(basis.size)]
        for z in model.effective_features
    ])
    gram = J.T @ J
    sv = np.linalg.svd(J @ basis.gram_inverse_sqrt(), compute_uv=False)
    kappa = float(sv[-1]) if sv.size >= basis.size else 0.0
    if J.shape[0] < basis.size:
        kappa = 0.0
    return ObservabilityReport(J=J, gram=gram, kappa=kappa, singular_values=sv)


@dataclass(frozen=True)
class StabilityRecord:
    data_gap: float
    state_gap: float
    kappa: float
    ratio: float            # data_gap / state_gap (inf when states coincide)
    bound_holds: bool       # data_gap >= (kappa / 2) * state_gap
    observable: bool


def _state_distance(basis: Basis, a1: np.ndarray, a2: np.ndarray) -> float:
    d = np.asarray(a1, dtype=float) - np.asarray(a2, dtype=float)
    return float(np.sqrt(d @ basis.gram @ d))


def stability_check(grid: Grid, basis: Basis, model: ObservationModel,
                    a1, a2) -> StabilityRecord:
    """Compare the observation gap with the coordinate gap for two states.

    Accepts coefficient vectors, or two `CoefficientPath`s whose pointwise
    gaps are integrated in time (trapezoid) before comparison.  The local
    observability constant is the smaller of the two endpoint values; for
    paths it is the minimum along the first path.
    """
    if isinstance(a1, CoefficientPath) and isinstance(a2, CoefficientPath):
        if a1.n_nodes != a2.n_nodes or a1.dimension != a2.dimension:
            raise ValueError("paths must share node count and dimension")
        weights = a1.trapezoid_weights()
        data_sq = 0.0
        state_sq = 0.0
        kappa = np.inf
        for i in range(a1.n_nodes):
            g1 = observe(grid, model, state_of(grid, basis, a1.coeffs[i]))
            g2 = observe(grid, model, state_of(grid, basis, a2.coeffs[i]))
            data_sq += weights[i] * float(np.sum((g1 - g2) ** 2))
            state_sq += weights[i] * _state_distance(basis, a1.coeffs[i], a2.coeffs[i]) ** 2
            kappa = min(kappa, observation_jacobian(grid, basis, model, a1.coeffs[i]).kappa)
        data_gap = float(np.sqrt(data_sq))
        state_gap = float(np.sqrt(state_sq))
    else:
        a1 = np.asarray(a1, dtype=float)
        a2 = np.asarray(a2, dtype=float)
        g1 = observe(grid, model, state_of(grid, basis, a1))
        g2 = observe(grid, model, state_of(grid, basis, a2))
        data_gap = float(np.linalg.norm(g1 - g2))
        state_gap = _state_distance(basis, a1, a2)
        kappa = min(observation_jacobian(grid, basis, model, a1).kappa,
                    observation_jacobian(grid, basis, model, a2).kappa)
    observable = kappa > 1e-12
    bound_holds = data_gap >= 0.5 * kappa * state_gap - 1e-14
    ratio = data_gap / state_gap if state_gap > 0 else np.inf
    return StabilityRecord(data_gap=data_gap, state_gap=state_gap, kappa=float(kappa),
                           ratio=float(ratio), bound_holds=bool(bound_holds),
                           observable=bool(observable))
