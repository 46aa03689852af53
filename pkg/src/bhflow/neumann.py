"""Weighted zero-flux elliptic solves and their state linearization.

The forward problem: given a density state w and a mean-zero tangent field
xi, find the mean-zero potential psi with

    -div(w grad psi) = w (xi - E_w[xi]),      w dpsi/dn = 0 on the boundary.

The operator is assembled as G^T diag(w_face) G from the grid's gradient
matrix with arithmetically face-averaged w, which makes it symmetric
positive semidefinite with exactly the constants in its kernel.  It is
solved by conjugate gradients with Jacobi preconditioning and explicit
deflation of the constant mode.

The linearized solve returns the derivative of psi with respect to the
state coordinate in a direction eta.  Its right-hand side is assembled
with face averages of the product field w*(eta - E_w[eta]), so it is the
exact derivative of the assembled discrete system, not merely a consistent
discretization; finite differences of the forward solve then agree with it
to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bhspace import CoordState, center_under, cov_under
from .grid import FaceField, Grid

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    """Conjugate-gradient stagnation; carries the last relative residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class WeightedOperator:
    """Assembled weighted zero-flux operator for one density state."""

    grid: Grid
    state: CoordState
    matrix: sp.csr_matrix          # G^T diag(face_weight) G
    face_weight: np.ndarray        # packed w_face * nu0 face weight
    jacobi: np.ndarray             # diagonal of `matrix`

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f


@dataclass(frozen=True)
class NeumannSolution:
    psi: np.ndarray
    grad_psi: FaceField
    iterations: int
    residual: float


def assemble(grid: Grid, state: CoordState) -> WeightedOperator:
    if np.any(state.w <= 0.0):
        raise ValueError("density must be strictly positive to assemble the operator")
    G = grid.stacked_gradient_matrix()
    wf = grid.faces_to_vector(grid.face_average(state.w)) * grid.nu0_cell_weight
    A = (G.T @ sp.diags(wf) @ G).tocsr()
    # enforce exact symmetry and an exactly zero row sum (constants in kernel);
    # both hold analytically and this removes the last-ulp assembly noise
    A = (0.5 * (A + A.T)).tocsr()
    rowsums = np.asarray(A.sum(axis=1)).ravel()
    A.setdiag(A.diagonal() - rowsums)
    A = A.tocsr()
    diag = A.diagonal()
    return WeightedOperator(grid=grid, state=state, matrix=A, face_weight=wf, jacobi=diag)


def _deflated_pcg(op: WeightedOperator, b: np.ndarray, tol: float,
                  max_iterations: int, x0: np.ndarray | None):
    """Jacobi-preconditioned CG on the mean-zero complement of the kernel."""
    n = b.size
    b = b - b.mean()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), 0, 0.0
    inv_diag = 1.0 / op.jacobi
    if x0 is not None:
        x = x0 - x0.mean()
        r = b - op.matrix @ x
    else:
        x = np.zeros(n)
        r = b.copy()
    z = inv_diag * r
    z -= z.mean()
    p = z.copy()
    rz = r @ z
    residual = np.linalg.norm(r) / b_norm
    iterations = 0
    while residual > tol:
        if iterations >= max_iterations:
            raise SolverError(
                f"conjugate gradients stalled at relative residual {residual:.3e} "
                f"after {iterations} iterations (tol {tol:.1e})",
                residual=residual, iterations=iterations,
            )
        Ap = op.matrix @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        z -= z.mean()
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        iterations += 1
        residual = np.linalg.norm(r) / b_norm
    return x, iterations, residual


def _is_negligible(centered: np.ndarray, original: np.ndarray) -> bool:
    """Centered field is pure rounding dust of the original (constant input)."""
    return np.max(np.abs(centered)) <= 1e-13 * max(1.0, float(np.max(np.abs(original))))


def _zero_solution(grid: Grid) -> NeumannSolution:
    return NeumannSolution(psi=np.zeros(grid.shape), grad_psi=grid.zeros_faces(),
                           iterations=0, residual=0.0)


def _run_solve(grid: Grid, op: WeightedOperator, rhs: np.ndarray, tol: float,
               max_iterations: int | None, x0: np.ndarray | None) -> NeumannSolution:
    if abs(rhs.sum()) > 1e-8:
        raise AssertionError(
            f"incompatible right-hand side: sum {rhs.sum():.3e} exceeds 1e-8"
        )
    if max_iterations is None:
        max_iterations = 10 * grid.n_cells
    x, iterations, residual = _deflated_pcg(op, rhs, tol, max_iterations, x0)
    psi = (x - x.mean()).reshape(grid.shape)
    return NeumannSolution(
        psi=psi, grad_psi=grid.gradient(psi), iterations=iterations, residual=residual,
    )


def solve(grid: Grid, state: CoordState, xi: np.ndarray, tol: float = DEFAULT_TOL,
          operator: WeightedOperator | None = None,
          max_iterations: int | None = None,
          x0: np.ndarray | None = None) -> NeumannSolution:
    """Solve the weighted zero-flux problem for tangent direction xi.

    The forcing w*(xi - E_w[xi]) is formed internally, which makes the
    right-hand side compatible (zero sum) by construction.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != grid.shape:
        raise ValueError(f"field shape {xi.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(xi)):
        raise ValueError("tangent field contains non-finite entries")
    if operator is None:
        operator = assemble(grid, state)
    xibar = center_under(state, xi)
    if _is_negligible(xibar, xi):
        return _zero_solution(grid)
    rhs = (state.w * xibar).ravel() * grid.nu0_cell_weight
    return _run_solve(grid, operator, rhs, tol, max_iterations,
                      None if x0 is None else np.asarray(x0, dtype=float).ravel())


def linearized_rhs(grid: Grid, state: CoordState, eta: np.ndarray, xi: np.ndarray,
                   base: NeumannSolution) -> np.ndarray:
    """Right-hand side of the state-linearized system (packed cell vector).

    Two terms: the weighted source (etabar*xibar - Cov(eta, xi)) and the
    discrete divergence of etabar*w*grad(psi), assembled through the same
    gradient matrix as the operator so the pairing is exactly adjoint.
    """
    etabar = center_under(state, eta)
    xibar = center_under(state, xi)
    cov = cov_under(state, eta, xi)
    source = (state.w * (etabar * xibar - cov)).ravel() * grid.nu0_cell_weight
    G = grid.stacked_gradient_matrix()
    coeff = grid.faces_to_vector(grid.face_average(state.w * etabar)) * grid.nu0_cell_weight
    drift = G.T @ (coeff * (G @ base.psi.ravel()))
    return source - drift


def solve_linearized(grid: Grid, state: CoordState, eta: np.ndarray, xi: np.ndarray,
                     base: NeumannSolution, tol: float = DEFAULT_TOL,
                     operator: WeightedOperator | None = None,
                     max_iterations: int | None = None,
                     x0: np.ndarray | None = None) -> NeumannSolution:
    """Derivative of the forward solve with respect to the state, direction eta.

    `base` must be the forward solution for the same (state, xi).
    """
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    for f in (eta, xi):
        if f.shape != grid.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    if operator is None:
        operator = assemble(grid, state)
    if _is_negligible(center_under(state, eta), eta) or \
            _is_negligible(center_under(state, xi), xi):
        return _zero_solution(grid)
    rhs = linearized_rhs(grid, state, eta, xi, base)
    return _run_solve(grid, operator, rhs, tol, max_iterations,
                      None if x0 is None else np.asarray(x0, dtype=float).ravel())
