import numpy as np
import pytest

from bhflow import (CoefficientPath, Grid, basis_from_array, exp_normalize,
                    fisher_rao_path, flow_match_loss, fourier_basis,
                    kinetic_tensor, legendre_basis, polynomial_path,
                    reduced_flow_match_loss, reduced_velocity, state_of,
                    transport_form, transport_map)
from bhflow.reduction import kinetic_energy_terms
from conftest import random_modes


def test_fourier_basis_orthonormal(grid512):
    basis = fourier_basis(grid512, 4)
    assert np.max(np.abs(basis.gram - np.eye(4))) < 1e-12
    for k in range(4):
        assert abs(grid512.integrate(basis.functions[k])) < 1e-10


def test_legendre_basis_centered(grid512):
    basis = legendre_basis(grid512, 3)
    for k in range(3):
        assert abs(grid512.integrate(basis.functions[k])) < 1e-10
    assert np.linalg.eigvalsh(basis.gram)[0] > 1e-8


def test_custom_basis_centering_and_dependence(grid64):
    g = grid64
    x = g.centers[0]
    basis = basis_from_array(g, np.stack([x, x ** 2]))
    for k in range(2):
        assert abs(g.integrate(basis.functions[k])) < 1e-14
    with pytest.raises(ValueError):
        basis_from_array(g, np.stack([x, 2 * x]))


def test_tensor_fourier_2d(grid2d):
    basis = fourier_basis(grid2d, 5)
    assert basis.size == 5
    for k in range(5):
        assert abs(grid2d.integrate(basis.functions[k])) < 1e-10
    assert np.linalg.eigvalsh(basis.gram)[0] > 0.5


def test_state_of_zero_and_linearity(grid256):
    g = grid256
    basis = fourier_basis(g, 3)
    s0 = state_of(g, basis, np.zeros(3))
    assert np.max(np.abs(s0.w - 1.0)) < 1e-13
    a = np.array([0.2, -0.1, 0.05])
    s = state_of(g, basis, a)
    assert np.max(np.abs(s.h - basis.synthesize(a))) < 1e-12
    e1 = state_of(g, basis, np.array([1.0, 0.0, 0.0]))
    assert abs(g.integrate(e1.w) - 1.0) < 1e-10


def test_kinetic_tensor_uniform_diagonal(grid512):
    basis = fourier_basis(grid512, 3)
    kt = kinetic_tensor(grid512, basis, np.zeros(3))
    target = np.diag([1.0 / (k * np.pi) ** 2 for k in (1, 2, 3)])
    assert np.max(np.abs(kt.H - target)) < 1e-5


def test_kinetic_tensor_symmetric_psd_random(grid256):
    g = grid256
    basis = fourier_basis(g, 3)
    rng = np.random.default_rng(12)
    for _ in range(5):
        a = rng.uniform(-0.3, 0.3, 3)
        kt = kinetic_tensor(g, basis, a)
        assert np.max(np.abs(kt.H - kt.H.T)) < 1e-10
        assert np.linalg.eigvalsh(kt.H)[0] > 0.0


def test_kinetic_tensor_derivative_fd(grid256):
    g = grid256
    basis = fourier_basis(g, 2)
    rng = np.random.default_rng(13)
    a = rng.uniform(-0.2, 0.2, 2)
    kt = kinetic_tensor(g, basis, a, with_derivative=True, tol=1e-12)
    eps = 1e-4
    for j in range(2):
        ap, am = a.copy(), a.copy()
        ap[j] += eps
        am[j] -= eps
        fd = (kinetic_tensor(g, basis, ap, tol=1e-12).H
              - kinetic_tensor(g, basis, am, tol=1e-12).H) / (2 * eps)
        assert np.max(np.abs(fd - kt.dH[j])) < 1e-4
        assert np.max(np.abs(kt.dH[j] - kt.dH[j].T)) < 1e-12


def test_pullback_consistency(grid256):
    g = grid256
    basis = fourier_basis(g, 3)
    rng = np.random.default_rng(14)
    a = rng.uniform(-0.25, 0.25, 3)
    kt = kinetic_tensor(g, basis, a, tol=1e-12)
    alpha = rng.uniform(-1, 1, 3)
    beta = rng.uniform(-1, 1, 3)
    state = state_of(g, basis, a)
    direct = transport_form(g, state, basis.synthesize(alpha),
                            basis.synthesize(beta), tol=1e-12)
    assert abs(alpha @ kt.H @ beta - direct) < 1e-9


def test_reduced_velocity_agreement_and_energy(grid256):
    g = grid256
    basis = fourier_basis(g, 3)
    rng = np.random.default_rng(15)
    a = rng.uniform(-0.25, 0.25, 3)
    adot = rng.uniform(-1.0, 1.0, 3)
    v = reduced_velocity(g, basis, a, adot, tol=1e-12)
    state = state_of(g, basis, a)
    ev = transport_map(g, state, basis.synthesize(adot), tol=1e-12)
    assert np.max(np.abs(v.components[0] - ev.velocity.components[0])) < 1e-10
    kt = kinetic_tensor(g, basis, a, tol=1e-12)
    energy = g.face_inner(v, v, weight=g.face_average(state.w))
    assert abs(energy - adot @ kt.H @ adot) < 1e-9
    zero = reduced_velocity(g, basis, a, np.zeros(3))
    assert np.max(np.abs(zero.components[0])) == 0.0


def test_path_validation():
    with pytest.raises(ValueError):
        CoefficientPath(times=np.array([0.0, 1.0]), coeffs=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        CoefficientPath(times=np.array([0.0, 0.3, 1.0]), coeffs=np.zeros((3, 1)))
    path = fisher_rao_path([0.0], [1.0], 5, horizon=2.0)
    assert path.dt == 0.5
    assert np.allclose(path.coeffs[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])


def test_node_velocities_stencil():
    path = polynomial_path([[0.0, 0.0, 1.0]], 5, horizon=1.0)  # a(t) = t^2
    v = path.node_velocities()[:, 0]
    t = path.times
    assert np.allclose(v[1:-1], 2 * t[1:-1], atol=1e-12)   # central, exact for t^2
    assert abs(v[0] - path.dt) < 1e-12                     # one-sided forward
    assert abs(v[-1] - (2.0 - path.dt)) < 1e-12            # one-sided backward


def test_inadmissible_nodes_reported(grid64):
    g = grid64
    basis = fourier_basis(g, 1)
    from bhflow import AdmissibleBounds
    path = fisher_rao_path([0.0], [3.0], 5)
    bad = path.inadmissible_nodes(g, basis, AdmissibleBounds(0.5, 2.0))
    assert bad and bad[-1] == 4 and 0 not in bad


def test_reduced_flow_match_zero_and_node_bump(grid256):
    g = grid256
    basis = fourier_basis(g, 2)
    path = fisher_rao_path([0.0, 0.0], [0.3, -0.2], 9)
    adot = path.node_velocities()
    assert reduced_flow_match_loss(g, basis, path, adot) == 0.0
    delta = 0.05
    beta = adot.copy()
    beta[4, 1] += delta
    loss = reduced_flow_match_loss(g, basis, path, beta, tol=1e-12)
    H = kinetic_tensor(g, basis, path.coeffs[4], tol=1e-12).H
    expected = path.dt * delta ** 2 * H[1, 1]
    assert abs(loss - expected) < 1e-8
    with pytest.raises(ValueError):
        reduced_flow_match_loss(g, basis, path, beta[:-1])


def test_reduced_vs_ambient_flow_match(grid256):
    g = grid256
    basis = fourier_basis(g, 2)
    path = fisher_rao_path([0.0, 0.1], [0.3, -0.2], 7)
    rng = np.random.default_rng(16)
    beta = path.node_velocities() + rng.uniform(-0.5, 0.5, (7, 2))
    reduced = reduced_flow_match_loss(g, basis, path, beta, tol=1e-12)
    adot = path.node_velocities()
    weights = path.trapezoid_weights()
    ambient = 0.0
    for i in range(path.n_nodes):
        state = state_of(g, basis, path.coeffs[i])
        ambient += weights[i] * flow_match_loss(
            g, state, basis.synthesize(beta[i]), basis.synthesize(adot[i]), tol=1e-12)
    assert abs(reduced - ambient) < 1e-9


def test_positive_definite_along_path(grid256):
    g = grid256
    basis = fourier_basis(g, 2)
    path = fisher_rao_path([0.0, 0.0], [0.5, 0.3], 9)
    for a in path.coeffs:
        kt = kinetic_tensor(g, basis, a)
        assert np.linalg.eigvalsh(kt.H)[0] > 0.0


def test_kinetic_energy_terms_match_tensor(grid256):
    g = grid256
    basis = fourier_basis(g, 3)
    rng = np.random.default_rng(17)
    a = rng.uniform(-0.2, 0.2, 3)
    adot = rng.uniform(-1, 1, 3)
    kt = kinetic_tensor(g, basis, a, with_derivative=True, tol=1e-12)
    value, H_adot, curvature, _ = kinetic_energy_terms(
        g, basis, a, adot, with_derivative=True, tol=1e-12)
    assert abs(value - adot @ kt.H @ adot) < 1e-12
    assert np.max(np.abs(H_adot - kt.H @ adot)) < 1e-12
    expected = np.array([adot @ kt.dH[j] @ adot for j in range(3)])
    assert np.max(np.abs(curvature - expected)) < 1e-12
