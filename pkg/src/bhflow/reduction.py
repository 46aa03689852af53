"""Finite-dimensional coordinate subspaces and reduced transport quantities.

A basis spans an m-dimensional subspace of mean-zero coordinate fields; a
coefficient vector a determines the state with coordinate sum_k a_k phi_k.
The transport form pulled back to the subspace is the m x m kinetic tensor
H(a), evaluated with m forward solves (one per basis function) whose
velocity fields are cached and paired.  Coefficient paths are sampled at
uniform time nodes and interpolated piecewise linearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bhspace import AdmissibleBounds, CoordState, center_under, cov_under, exp_normalize
from .grid import FaceField, Grid
from .neumann import DEFAULT_TOL, assemble, solve, solve_linearized


class Basis:
    """Mean-zero basis fields phi_1..phi_m with their reference Gram matrix.

    Fields are stored stacked as an array of shape (m, *grid.shape).  All
    constructors center the fields and reject families whose Gram matrix has
    smallest eigenvalue below 1e-8 (linear dependence on the grid).
    """

    def __init__(self, grid: Grid, functions: np.ndarray, family: str = "custom"):
        functions = np.asarray(functions, dtype=float)
        if functions.ndim != grid.dim + 1 or functions.shape[1:] != grid.shape:
            raise ValueError(
                f"basis array shape {functions.shape} does not match grid {grid.shape}"
            )
        centered = np.stack([grid.project_mean_zero(f) for f in functions])
        self.grid = grid
        self.functions = centered
        self.family = family
        m = centered.shape[0]
        flat = centered.reshape(m, -1)
        self.gram = (flat @ flat.T) * grid.nu0_cell_weight
        self.gram = 0.5 * (self.gram + self.gram.T)
        smallest = float(np.linalg.eigvalsh(self.gram)[0])
        if smallest <= 1e-8:
            raise ValueError(
                f"basis is numerically dependent: smallest Gram eigenvalue {smallest:.3e}"
            )
        self._gram_inv_sqrt = None

    @property
    def size(self) -> int:
        return self.functions.shape[0]

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.size,):
            raise ValueError(f"expected {self.size} coefficients, got shape {coeffs.shape}")
        return np.tensordot(coeffs, self.functions, axes=1)

    def gram_inverse_sqrt(self) -> np.ndarray:
        if self._gram_inv_sqrt is None:
            vals, vecs = np.linalg.eigh(self.gram)
            self._gram_inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
        return self._gram_inv_sqrt


def fourier_basis(grid: Grid, m: int) -> Basis:
    """Cosine modes sqrt(2) cos(k pi xhat) (1D) or their tensor products (2D).

    On the normalized axis coordinate these are orthonormal for the
    reference measure up to quadrature error (exactly, for midpoint points).
    """
    if m < 1:
        raise ValueError("basis size must be >= 1")
    coords = grid.mesh()
    xhat = []
    for a in range(grid.dim):
        lo, hi = grid.extents[a]
        xhat.append(np.broadcast_to((coords[a] - lo) / (hi - lo), grid.shape))

    def mode(k: int, axis: int) -> np.ndarray:
        if k == 0:
            return np.ones(grid.shape)
        return np.sqrt(2.0) * np.cos(k * np.pi * xhat[axis])

    if grid.dim == 1:
        funcs = [mode(k, 0) for k in range(1, m + 1)]
    else:
        orders = []
        k = 1
        while len(orders) < m:
            orders.extend(sorted((kx, k - kx) for kx in range(0, k + 1)))
            k += 1
        funcs = [mode(kx, 0) * mode(ky, 1) for kx, ky in orders[:m]]
    return Basis(grid, np.stack(funcs), family="fourier")


def legendre_basis(grid: Grid, m: int) -> Basis:
    """Shifted Legendre polynomials of degree 1..m per axis, centered (1D only)."""
    if grid.dim != 1:
        raise ValueError("legendre basis is built in for 1D grids only")
    lo, hi = grid.extents[0]
    s = 2.0 * (grid.centers[0] - lo) / (hi - lo) - 1.0
    funcs = []
    for k in range(1, m + 1):
        coeff = np.zeros(k + 1)
        coeff[k] = 1.0
        funcs.append(np.sqrt(2.0 * k + 1.0) * np.polynomial.legendre.legval(s, coeff))
    return Basis(grid, np.stack(funcs), family="legendre")


def basis_from_array(grid: Grid, functions: np.ndarray) -> Basis:
    return Basis(grid, functions, family="custom")


@dataclass(frozen=True)
class CoefficientPath:
    """Coefficient vectors sampled at uniform time nodes, linear in between."""

    times: np.ndarray      # (N+1,)
    coeffs: np.ndarray     # (N+1, m)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=float)
        if times.ndim != 1 or coeffs.ndim != 2 or coeffs.shape[0] != times.size:
            raise ValueError("times must be (N+1,) and coeffs (N+1, m)")
        if times.size < 3:
            raise ValueError("a path needs at least 3 time nodes")
        steps = np.diff(times)
        if not np.all(steps > 0):
            raise ValueError("time nodes must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-10, atol=1e-12):
            raise ValueError("time nodes must be uniformly spaced")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_nodes(self) -> int:
        return self.times.size

    @property
    def dimension(self) -> int:
        return self.coeffs.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def node_velocities(self) -> np.ndarray:
        """Central-difference rates at nodes, one-sided at the endpoints."""
        a = self.coeffs
        v = np.empty_like(a)
        v[1:-1] = (a[2:] - a[:-2]) / (2.0 * self.dt)
        v[0] = (a[1] - a[0]) / self.dt
        v[-1] = (a[-1] - a[-2]) / self.dt
        return v

    def interval_midpoints(self) -> np.ndarray:
        return 0.5 * (self.coeffs[:-1] + self.coeffs[1:])

    def interval_rates(self) -> np.ndarray:
        return np.diff(self.coeffs, axis=0) / self.dt

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def inadmissible_nodes(self, grid: Grid, basis: Basis, bounds: AdmissibleBounds) -> list[int]:
        bad = []
        for i, a in enumerate(self.coeffs):
            if not state_of(grid, basis, a).admissible(bounds):
                bad.append(i)
        return bad


def fisher_rao_path(a0, a1, n_nodes: int, horizon: float = 1.0) -> CoefficientPath:
    """Straight line in coordinates from a0 to a1 (geometric annealing)."""
    a0 = np.atleast_1d(np.asarray(a0, dtype=float))
    a1 = np.atleast_1d(np.asarray(a1, dtype=float))
    if a0.shape != a1.shape:
        raise ValueError("endpoint coefficient vectors must have the same size")
    times = np.linspace(0.0, horizon, n_nodes)
    s = (times / horizon)[:, None]
    return CoefficientPath(times=times, coeffs=(1.0 - s) * a0 + s * a1)


def polynomial_path(coeff_table, n_nodes: int, horizon: float = 1.0) -> CoefficientPath:
    """Componentwise polynomial in time: a_k(t) = sum_j c[k][j] t^j."""
    table = np.atleast_2d(np.asarray(coeff_table, dtype=float))
    times = np.linspace(0.0, horizon, n_nodes)
    powers = times[:, None] ** np.arange(table.shape[1])[None, :]
    return CoefficientPath(times=times, coeffs=powers @ table.T)


@dataclass(frozen=True)
class KineticTensor:
    H: np.ndarray                 # (m, m)
    dH: np.ndarray | None = None  # (m, m, m), dH[j] = derivative in direction phi_j


def state_of(grid: Grid, basis: Basis, a: np.ndarray) -> CoordState:
    """State induced by a coefficient vector."""
    return exp_normalize(grid, basis.synthesize(a))


def kinetic_tensor(grid: Grid, basis: Basis, a: np.ndarray,
                   with_derivative: bool = False,
                   tol: float = DEFAULT_TOL) -> KineticTensor:
    """Kinetic tensor H(a), optionally with its coefficient derivatives.

    Uses m forward solves whose velocity fields are cached, pairing them in
    the weighted face quadrature; the derivative tensor additionally needs
    the m^2 linearized solves.
    """
    m = basis.size
    state = state_of(grid, basis, a)
    op = assemble(grid, state)
    sols = [solve(grid, state, basis.functions[k], tol=tol, operator=op) for k in range(m)]
    V = np.stack([grid.faces_to_vector(s.grad_psi) for s in sols])
    fw = op.face_weight
    H = (V * fw) @ V.T
    H = 0.5 * (H + H.T)
    if not with_derivative:
        return KineticTensor(H=H)

    dH = np.zeros((m, m, m))
    chi = {}
    for j in range(m):
        for k in range(m):
            chi[j, k] = solve_linearized(
                grid, state, basis.functions[j], basis.functions[k], sols[k],
                tol=tol, operator=op,
            )
    for j in range(m):
        etabar = center_under(state, basis.functions[j])
        weta = grid.faces_to_vector(grid.face_average(state.w * etabar)) * grid.nu0_cell_weight
        measure = (V * weta) @ V.T
        C = np.stack([grid.faces_to_vector(chi[j, k].grad_psi) for k in range(m)])
        cross = (C * fw) @ V.T
        dHj = measure + cross + cross.T
        dH[j] = 0.5 * (dHj + dHj.T)
    return KineticTensor(H=H, dH=dH)


def reduced_velocity(grid: Grid, basis: Basis, a: np.ndarray, adot: np.ndarray,
                     tol: float = DEFAULT_TOL) -> FaceField:
    """Canonical velocity of a coefficient rate: sum_k adot_k T(phi_k).

    By linearity of the solve this equals the transport of the synthesized
    rate field directly.
    """
    adot = np.asarray(adot, dtype=float)
    if adot.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} rate coefficients")
    state = state_of(grid, basis, a)
    op = assemble(grid, state)
    out = grid.zeros_faces()
    for k in range(basis.size):
        sol = solve(grid, state, basis.functions[k], tol=tol, operator=op)
        out = out + adot[k] * sol.grad_psi
    return out


def reduced_flow_match_loss(grid: Grid, basis: Basis, path: CoefficientPath,
                            beta: np.ndarray, tol: float = DEFAULT_TOL) -> float:
    """Trapezoid-in-time quadratic mismatch (beta - adot)^T H(a) (beta - adot)."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != path.coeffs.shape:
        raise ValueError(
            f"candidate rates shape {beta.shape} does not match path nodes "
            f"{path.coeffs.shape}"
        )
    adot = path.node_velocities()
    weights = path.trapezoid_weights()
    total = 0.0
    for i in range(path.n_nodes):
        H = kinetic_tensor(grid, basis, path.coeffs[i], tol=tol).H
        diff = beta[i] - adot[i]
        total += weights[i] * float(diff @ H @ diff)
    return total


def kinetic_energy_terms(grid: Grid, basis: Basis, a: np.ndarray, adot: np.ndarray,
                         with_derivative: bool = False, tol: float = DEFAULT_TOL,
                         x0: np.ndarray | None = None):
    """Kinetic quadratic form adot^T H(a) adot from a single forward solve.

    Returns (value, H_adot, curvature, psi) where H_adot[k] = (H(a) adot)_k
    and curvature[j] is the derivative of the value with respect to a_j.
    Both derivative vectors are exact for the assembled discrete system, via
    the self-adjointness of the solve (no linearized solves needed):

        d/da_j (b^T A^-1 b) = 2 bdot_j^T psi - psi^T Adot_j psi.
    """
    m = basis.size
    state = state_of(grid, basis, a)
    op = assemble(grid, state)
    hdot = basis.synthesize(adot)
    sol = solve(grid, state, hdot, tol=tol, operator=op, x0=x0)
    gpsi = grid.faces_to_vector(sol.grad_psi)
    value = float((gpsi * op.face_weight) @ gpsi)
    psi_flat = sol.psi.ravel()
    G = grid.stacked_gradient_matrix()

    H_adot = np.empty(m)
    for k in range(m):
        phibar = center_under(state, basis.functions[k])
        b_k = (state.w * phibar).ravel() * grid.nu0_cell_weight
        H_adot[k] = b_k @ psi_flat

    curvature = None
    if with_derivative:
        hdotbar = center_under(state, hdot)
        curvature = np.empty(m)
        gpsi_sq = gpsi * gpsi
        for j in range(m):
            phibar = center_under(state, basis.functions[j])
            cov = cov_under(state, basis.functions[j], hdot)
            bdot = (state.w * (phibar * hdotbar - cov)).ravel() * grid.nu0_cell_weight
            weta = grid.faces_to_vector(grid.face_average(state.w * phibar)) * grid.nu0_cell_weight
            curvature[j] = 2.0 * (bdot @ psi_flat) - float(weta @ gpsi_sq)
    return value, H_adot, curvature, sol.psi
