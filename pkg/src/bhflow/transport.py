"""Canonical minimum-energy transport of tangent directions.

The elliptic solve turns a tangent direction xi into the gradient velocity
field of least kinetic energy realizing it; pairing two such velocities in
the density-weighted face quadrature gives a symmetric bilinear form on
tangent directions.  This module evaluates that form, its directional
derivative in the state, flow-matching losses between candidate and
prescribed tangent fields, the action of a time-sampled path, and weak
continuity-equation residuals used as a discretization check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bhspace import CoordState, center_under, mean_under
from .grid import FaceField, Grid
from .neumann import (DEFAULT_TOL, NeumannSolution, WeightedOperator, assemble,
                      solve, solve_linearized)


@dataclass(frozen=True)
class TransportEval:
    velocity: FaceField
    kinetic_energy: float
    solution: NeumannSolution


def _density_face_weight(grid: Grid, state: CoordState) -> FaceField:
    return grid.face_average(state.w)


def transport_map(grid: Grid, state: CoordState, xi: np.ndarray,
                  tol: float = DEFAULT_TOL,
                  operator: WeightedOperator | None = None,
                  x0: np.ndarray | None = None) -> TransportEval:
    """Velocity field of minimum kinetic energy realizing direction xi."""
    sol = solve(grid, state, xi, tol=tol, operator=operator, x0=x0)
    wf = _density_face_weight(grid, state)
    energy = grid.face_inner(sol.grad_psi, sol.grad_psi, weight=wf)
    return TransportEval(velocity=sol.grad_psi, kinetic_energy=energy, solution=sol)


def transport_form(grid: Grid, state: CoordState, xi: np.ndarray, zeta: np.ndarray,
                   tol: float = DEFAULT_TOL,
                   operator: WeightedOperator | None = None) -> float:
    """Weighted inner product of the canonical velocities of xi and zeta."""
    if operator is None:
        operator = assemble(grid, state)
    sol_xi = solve(grid, state, xi, tol=tol, operator=operator)
    sol_zeta = solve(grid, state, zeta, tol=tol, operator=operator)
    wf = _density_face_weight(grid, state)
    return grid.face_inner(sol_xi.grad_psi, sol_zeta.grad_psi, weight=wf)


def transport_form_derivative(grid: Grid, state: CoordState, eta: np.ndarray,
                              xi: np.ndarray, zeta: np.ndarray,
                              tol: float = DEFAULT_TOL,
                              operator: WeightedOperator | None = None) -> float:
    """Directional derivative of the transport form in state direction eta.

    Three terms: the weighted-measure variation of the velocity pairing plus
    the two linearized-potential cross terms.  The first term is assembled
    with face averages of w*(eta - E[eta]) so that the value is the exact
    derivative of the discrete form.
    """
    if operator is None:
        operator = assemble(grid, state)
    sol_xi = solve(grid, state, xi, tol=tol, operator=operator)
    sol_zeta = solve(grid, state, zeta, tol=tol, operator=operator)
    chi_xi = solve_linearized(grid, state, eta, xi, sol_xi, tol=tol, operator=operator)
    chi_zeta = solve_linearized(grid, state, eta, zeta, sol_zeta, tol=tol, operator=operator)

    etabar = center_under(state, eta)
    weight_eta = grid.face_average(state.w * etabar)
    wf = _density_face_weight(grid, state)
    term_measure = grid.face_inner(sol_xi.grad_psi, sol_zeta.grad_psi, weight=weight_eta)
    term_xi = grid.face_inner(chi_xi.grad_psi, sol_zeta.grad_psi, weight=wf)
    term_zeta = grid.face_inner(sol_xi.grad_psi, chi_zeta.grad_psi, weight=wf)
    return term_measure + term_xi + term_zeta


def flow_match_loss(grid: Grid, state: CoordState, beta: np.ndarray, hdot: np.ndarray,
                    tol: float = DEFAULT_TOL,
                    operator: WeightedOperator | None = None) -> float:
    """Squared weighted distance between candidate and prescribed velocities.

    Equals the transport form of beta - hdot with itself; the identity is
    exact because the solve is linear in the tangent direction.
    """
    if operator is None:
        operator = assemble(grid, state)
    sol_beta = solve(grid, state, beta, tol=tol, operator=operator)
    sol_hdot = solve(grid, state, hdot, tol=tol, operator=operator)
    diff = sol_beta.grad_psi - sol_hdot.grad_psi
    wf = _density_face_weight(grid, state)
    return grid.face_inner(diff, diff, weight=wf)


def default_test_fields(grid: Grid) -> list[np.ndarray]:
    """Low-order moments and oscillatory modes per axis, on cell centers."""
    coords = grid.mesh()
    fields: list[np.ndarray] = []
    for a in range(grid.dim):
        lo, hi = grid.extents[a]
        xhat = (coords[a] - lo) / (hi - lo)
        xhat = np.broadcast_to(xhat, grid.shape).copy()
        fields.extend([xhat, xhat ** 2, np.cos(np.pi * xhat), np.cos(2 * np.pi * xhat)])
    return fields


def continuity_residual(grid: Grid, states: list[CoordState], hdots: list[np.ndarray],
                        dt: float, tests: list[np.ndarray] | None = None,
                        tol: float = DEFAULT_TOL) -> float:
    """Max weak-form continuity defect over tests and interior time nodes.

    At each interior node, compares the central time difference of the
    weighted mean of a test field with the weighted flux of its gradient
    against the canonical velocity.  Decays at second order under joint
    time/space refinement.
    """
    if len(states) < 3:
        raise ValueError("need at least 3 time nodes for interior central differences")
    if len(hdots) != len(states):
        raise ValueError("states and hdots must have the same length")
    if tests is None:
        tests = default_test_fields(grid)
    masses = np.array([[mean_under(s, eta) for eta in tests] for s in states])
    worst = 0.0
    for i in range(1, len(states) - 1):
        s = states[i]
        ev = transport_map(grid, s, hdots[i], tol=tol)
        wf = _density_face_weight(grid, s)
        for j, eta in enumerate(tests):
            dmass = (masses[i + 1, j] - masses[i - 1, j]) / (2.0 * dt)
            flux = grid.face_inner(grid.gradient(eta), ev.velocity, weight=wf)
            worst = max(worst, abs(dmass - flux))
    return worst


def transport_action(grid: Grid, states: list[CoordState], hdots: list[np.ndarray],
                     dt: float, tol: float = DEFAULT_TOL) -> float:
    """Trapezoid-in-time integral of the pointwise kinetic energy."""
    if len(states) < 2:
        raise ValueError("need at least 2 time nodes")
    if len(hdots) != len(states):
        raise ValueError("states and hdots must have the same length")
    energies = np.array([
        transport_map(grid, s, hd, tol=tol).kinetic_energy
        for s, hd in zip(states, hdots)
    ])
    weights = np.full(len(states), dt)
    weights[0] = weights[-1] = 0.5 * dt
    return float(weights @ energies)
