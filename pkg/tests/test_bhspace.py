import numpy as np
import pytest

from bhflow import (AdmissibleBounds, clr, cov_under, exp_normalize,
                    log_density_rate, mean_under)
from conftest import random_modes

# int_0^1 exp(cos(pi x)) dx, the modified-Bessel value I_0(1)
BESSEL_I0_1 = 1.2660658777520084


def test_exp_normalize_of_zero(grid512):
    s = exp_normalize(grid512, np.zeros(grid512.shape))
    assert np.max(np.abs(s.w - 1.0)) < 1e-14
    assert abs(s.log_z) < 1e-14


def test_exp_normalize_cosine_against_quadrature_oracle(grid512):
    g = grid512
    x = g.centers[0]
    s = exp_normalize(g, np.cos(np.pi * x))
    assert abs(g.integrate(s.w) - 1.0) < 1e-10
    expected = np.exp(np.cos(np.pi * x)) / BESSEL_I0_1
    assert np.max(np.abs(s.w - expected)) < 1e-4
    assert abs(s.log_z - np.log(BESSEL_I0_1)) < 1e-5


def test_exp_normalize_shift_invariance(grid512):
    g = grid512
    h = np.cos(np.pi * g.centers[0])
    a = exp_normalize(g, h)
    b = exp_normalize(g, h + 7.0)
    assert np.max(np.abs(a.w - b.w)) < 1e-12


def test_exp_normalize_overflow_safety(grid512):
    s = exp_normalize(grid512, 800.0 * np.cos(np.pi * grid512.centers[0]))
    assert np.all(np.isfinite(s.w))
    assert abs(grid512.integrate(s.w) - 1.0) < 1e-10


def test_exp_normalize_rejects_non_finite(grid512):
    h = np.zeros(grid512.shape)
    h[3] = np.inf
    with pytest.raises(ValueError):
        exp_normalize(grid512, h)


def test_clr_uniform_and_scale_invariance(grid512):
    g = grid512
    assert np.max(np.abs(clr(g, np.ones(g.shape)))) == 0.0
    w = exp_normalize(g, np.cos(np.pi * g.centers[0])).w
    assert np.allclose(clr(g, 3.0 * w), clr(g, w), atol=1e-13)


def test_clr_round_trip(grid512):
    g = grid512
    h = np.sqrt(2) * np.cos(2 * np.pi * g.centers[0])
    s = exp_normalize(g, h)
    assert np.max(np.abs(clr(g, s.w) - h)) < 1e-10
    assert abs(g.integrate(s.h)) < 1e-10


def test_clr_rejects_nonpositive(grid512):
    w = np.ones(grid512.shape)
    w[0] = 0.0
    with pytest.raises(ValueError):
        clr(grid512, w)


def test_cov_with_constant_vanishes(grid512):
    g = grid512
    s = exp_normalize(g, 0.5 * np.cos(np.pi * g.centers[0]))
    f = np.sin(2 * np.pi * g.centers[0])
    assert abs(cov_under(s, f, np.full(g.shape, 4.2))) < 1e-12


def test_cov_uniform_cosine(grid512):
    g = grid512
    s = exp_normalize(g, np.zeros(g.shape))
    f = np.cos(np.pi * g.centers[0])
    assert abs(cov_under(s, f, f) - 0.5) < 1e-6


def test_cov_uniform_x_cosine(grid512):
    g = grid512
    x = g.centers[0]
    s = exp_normalize(g, np.zeros(g.shape))
    value = cov_under(s, x, np.sqrt(2) * np.cos(np.pi * x))
    assert abs(value - (-2 * np.sqrt(2) / np.pi ** 2)) < 1e-5


def test_cov_symmetric_bilinear_psd(grid256):
    g = grid256
    rng = np.random.default_rng(3)
    s = exp_normalize(g, random_modes(g, rng))
    f = random_modes(g, rng)
    h = random_modes(g, rng)
    assert abs(cov_under(s, f, h) - cov_under(s, h, f)) < 1e-14
    assert abs(cov_under(s, 2.0 * f + h, h)
               - 2.0 * cov_under(s, f, h) - cov_under(s, h, h)) < 1e-12
    assert cov_under(s, f, f) >= 0.0


def test_log_density_rate(grid512):
    g = grid512
    x = g.centers[0]
    uniform = exp_normalize(g, np.zeros(g.shape))
    assert np.max(np.abs(log_density_rate(uniform, np.full(g.shape, 2.0)))) < 1e-14
    cosx = np.cos(np.pi * x)
    assert np.allclose(log_density_rate(uniform, cosx), cosx, atol=1e-13)
    s = exp_normalize(g, cosx)
    rate = log_density_rate(s, x.copy())
    assert abs(mean_under(s, rate)) < 1e-10


def test_isometry_of_coordinates(grid256):
    g = grid256
    rng = np.random.default_rng(8)
    for _ in range(5):
        h1 = g.project_mean_zero(random_modes(g, rng))
        h2 = g.project_mean_zero(random_modes(g, rng))
        w1 = exp_normalize(g, h1).w
        w2 = exp_normalize(g, h2).w
        d_coord = np.sqrt(g.integrate((h1 - h2) ** 2))
        d_round = np.sqrt(g.integrate((clr(g, w1) - clr(g, w2)) ** 2))
        assert abs(d_coord - d_round) < 1e-9


def test_normalization_differential_finite_difference(grid512):
    g = grid512
    rng = np.random.default_rng(21)
    h = random_modes(g, rng)
    xi = random_modes(g, rng)
    s = exp_normalize(g, h)
    eps = 1e-5
    fd = (exp_normalize(g, h + eps * xi).w - exp_normalize(g, h - eps * xi).w) / (2 * eps)
    analytic = s.w * (xi - mean_under(s, xi))
    rel = g.integrate(np.abs(fd - analytic)) / g.integrate(np.abs(analytic))
    assert rel < 1e-5


def test_geometric_mixture_line(grid512):
    g = grid512
    rng = np.random.default_rng(4)
    h0 = random_modes(g, rng)
    h1 = random_modes(g, rng)
    w0 = exp_normalize(g, h0).w
    w1 = exp_normalize(g, h1).w
    for t in (0.0, 0.3, 0.5, 0.8, 1.0):
        w_line = exp_normalize(g, (1 - t) * h0 + t * h1).w
        mix = w0 ** (1 - t) * w1 ** t
        mix /= g.integrate(mix)
        assert np.max(np.abs(w_line - mix)) < 1e-10


def test_score_identity(grid512):
    g = grid512
    rng = np.random.default_rng(5)
    s = exp_normalize(g, random_modes(g, rng))
    grad_logw = g.gradient(np.log(s.w)).components[0]
    grad_h = g.gradient(s.h).components[0]
    assert np.max(np.abs(grad_logw - grad_h)) < 1e-11


def test_admissible_bounds(grid512):
    g = grid512
    s = exp_normalize(g, np.cos(np.pi * g.centers[0]))
    assert s.admissible(AdmissibleBounds(1e-3, 1e3))
    assert not s.admissible(AdmissibleBounds(0.5, 1e3))
    with pytest.raises(ValueError):
        AdmissibleBounds(2.0, 1.0)
