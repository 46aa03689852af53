"""Self-check battery aggregating the package's verifiable identities.

Each check runs on the configured grid/basis/path and returns a pass/fail
record with the measured value and its threshold.  The battery mixes exact
identities (flow matching, geometric mixture), oracle comparisons (closed
form), derivative cross-checks (finite differences), refinement-order ratio
tests, and a Lagrangian particle test.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import particles
from .bhspace import clr, exp_normalize
from .grid import Grid
from .inverse import InverseProblem, gradient, make_synthetic, objective
from .neumann import solve
from .observe import ObservationModel
from .reduction import Basis, CoefficientPath, fourier_basis, legendre_basis, state_of
from .transport import continuity_residual, flow_match_loss, transport_form


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str

    def as_dict(self) -> dict:
        return asdict(self)


def _random_coordinate(grid: Grid, rng: np.random.Generator, scale: float = 0.3,
                       modes: int = 3) -> np.ndarray:
    coords = grid.mesh()
    field = np.zeros(grid.shape)
    for a in range(grid.dim):
        lo, hi = grid.extents[a]
        xhat = np.broadcast_to((coords[a] - lo) / (hi - lo), grid.shape)
        for k in range(1, modes + 1):
            field = field + rng.uniform(-scale, scale) * np.cos(k * np.pi * xhat)
    return field


def check_closed_form(grid: Grid) -> CheckResult:
    """Uniform-weight solve against the analytic cosine potential."""
    lo, hi = grid.extents[0]
    length = hi - lo
    coords = grid.mesh()
    xhat = np.broadcast_to((coords[0] - lo) / length, grid.shape)
    state = exp_normalize(grid, np.zeros(grid.shape))
    sol = solve(grid, state, np.cos(np.pi * xhat))
    exact = (length / np.pi) ** 2 * np.cos(np.pi * xhat)
    err = float(np.max(np.abs(sol.psi - exact)))
    return CheckResult("closed_form_neumann", err < 1e-4, err, 1e-4,
                       f"max error vs analytic potential on {grid.cells} cells")


def check_closed_form_refinement(grid: Grid) -> CheckResult:
    def err(g: Grid) -> float:
        lo, hi = g.extents[0]
        coords = g.mesh()
        xhat = np.broadcast_to((coords[0] - lo) / (hi - lo), g.shape)
        state = exp_normalize(g, np.zeros(g.shape))
        sol = solve(g, state, np.cos(np.pi * xhat))
        exact = ((hi - lo) / np.pi) ** 2 * np.cos(np.pi * xhat)
        return float(np.max(np.abs(sol.psi - exact)))

    fine = Grid(grid.extents, [2 * n for n in grid.cells])
    ratio = err(grid) / err(fine)
    return CheckResult("closed_form_refinement", ratio >= 3.5, float(ratio), 3.5,
                       "max-error reduction under one halving of the spacing")


def check_gradient(grid: Grid, basis: Basis, model: ObservationModel,
                   bounds, lam: float, seed: int) -> CheckResult:
    """Analytic objective gradient vs central differences on a small problem."""
    rng = np.random.default_rng(seed)
    m = basis.size
    times = np.linspace(0.0, 1.0, 9)
    coeffs = rng.uniform(-0.25, 0.25, (times.size, m))
    path = CoefficientPath(times=times, coeffs=coeffs)
    problem = InverseProblem(grid=grid, basis=basis, model=model, times=times,
                             data=None, lam=max(lam, 1e-6), mu=0.05, gamma=0.02,
                             bounds=bounds)
    truth = CoefficientPath(times=times,
                            coeffs=rng.uniform(-0.2, 0.2, (times.size, m)))
    problem = problem.with_data(make_synthetic(problem, truth, 0.01, seed=seed + 1))
    analytic = gradient(problem, path)
    eps = 1e-5
    fd = np.zeros_like(analytic)
    for i in range(times.size):
        for k in range(m):
            up = coeffs.copy()
            up[i, k] += eps
            dn = coeffs.copy()
            dn[i, k] -= eps
            fp = objective(problem, CoefficientPath(times=times, coeffs=up)).total
            fm = objective(problem, CoefficientPath(times=times, coeffs=dn)).total
            fd[i, k] = (fp - fm) / (2 * eps)
    rel = float(np.linalg.norm(analytic - fd) / np.linalg.norm(fd))
    return CheckResult("inverse_gradient_fd", rel < 1e-5, rel, 1e-5,
                       "relative gap between analytic and central-difference gradients")


def check_flow_match_identity(grid: Grid, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        state = exp_normalize(grid, _random_coordinate(grid, rng))
        beta = _random_coordinate(grid, rng, scale=0.5)
        hdot = _random_coordinate(grid, rng, scale=0.5)
        loss = flow_match_loss(grid, state, beta, hdot, tol=1e-12)
        form = transport_form(grid, state, beta - hdot, beta - hdot, tol=1e-12)
        worst = max(worst, abs(loss - form))
    return CheckResult("flow_match_identity", worst < 1e-10, worst, 1e-10,
                       "candidate-velocity loss vs quadratic form on the difference")


def check_fisher_rao_identity(grid: Grid, basis: Basis, path: CoefficientPath) -> CheckResult:
    w0 = state_of(grid, basis, path.coeffs[0]).w
    w1 = state_of(grid, basis, path.coeffs[-1]).w
    worst = 0.0
    horizon = path.horizon
    for i in range(path.n_nodes):
        t = (path.times[i] - path.times[0]) / horizon
        mix = w0 ** (1.0 - t) * w1 ** t
        mix = mix / mix.mean()
        w = state_of(grid, basis, (1 - t) * path.coeffs[0] + t * path.coeffs[-1]).w
        worst = max(worst, float(np.max(np.abs(w - mix))))
    return CheckResult("fisher_rao_identity", worst < 1e-10, worst, 1e-10,
                       "coordinate-line density vs normalized geometric mixture")


def _path_residual(grid: Grid, basis: Basis, path: CoefficientPath) -> float:
    adot = path.node_velocities()
    states = [state_of(grid, basis, a) for a in path.coeffs]
    hdots = [basis.synthesize(v) for v in adot]
    return continuity_residual(grid, states, hdots, path.dt)


def check_continuity_refinement(grid: Grid, basis: Basis, path: CoefficientPath,
                                fine_path: CoefficientPath | None = None) -> CheckResult:
    """Weak continuity residual must drop >= 3x under joint (dt, dx) halving."""
    coarse = _path_residual(grid, basis, path)
    fine_grid = Grid(grid.extents, [2 * n for n in grid.cells])
    if basis.family == "fourier":
        fine_basis = fourier_basis(fine_grid, basis.size)
    elif basis.family == "legendre":
        fine_basis = legendre_basis(fine_grid, basis.size)
    else:
        return CheckResult("continuity_refinement", False, float("nan"), 3.0,
                           "refinement check needs a resamplable basis family")
    if fine_path is None:
        fine_times = np.linspace(path.times[0], path.times[-1],
                                 2 * (path.n_nodes - 1) + 1)
        fine_coeffs = np.column_stack([
            np.interp(fine_times, path.times, path.coeffs[:, k])
            for k in range(path.dimension)
        ])
        fine_path = CoefficientPath(times=fine_times, coeffs=fine_coeffs)
    fine = _path_residual(fine_grid, fine_basis, fine_path)
    ratio = coarse / fine if fine > 0 else float("inf")
    return CheckResult("continuity_refinement", ratio >= 3.0, float(ratio), 3.0,
                       f"residual {coarse:.3e} -> {fine:.3e} under joint halving")


def check_particle_ks(grid: Grid, basis: Basis, path: CoefficientPath,
                      n_particles: int, substeps: int, seed: int) -> CheckResult:
    start = state_of(grid, basis, path.coeffs[0])
    target = state_of(grid, basis, path.coeffs[-1])
    ens = particles.sample_initial(grid, start, n_particles, seed=seed)
    final = particles.advect(grid, basis, path, ens, substeps=substeps)
    ks = particles.ks_distance(grid, final.positions,
                               particles.density_cdf(grid, target))
    return CheckResult("particle_ks", ks < 0.02, float(ks), 0.02,
                       f"terminal KS distance of {n_particles} advected particles")


def check_clr_round_trip(grid: Grid, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        h = grid.project_mean_zero(_random_coordinate(grid, rng, scale=0.6))
        state = exp_normalize(grid, h)
        worst = max(worst, float(np.max(np.abs(clr(grid, state.w) - h))))
    return CheckResult("clr_round_trip", worst < 1e-10, worst, 1e-10,
                       "coordinate -> density -> coordinate reproduction")


def run_battery(grid: Grid, basis: Basis, model: ObservationModel,
                path: CoefficientPath, bounds, lam: float, seed: int,
                n_particles: int = 20000, substeps: int = 128,
                fine_path: CoefficientPath | None = None) -> list[CheckResult]:
    checks = [
        check_closed_form(grid),
        check_closed_form_refinement(grid),
        check_clr_round_trip(grid, seed),
        check_flow_match_identity(grid, seed + 1),
        check_fisher_rao_identity(grid, basis, path),
        check_continuity_refinement(grid, basis, path, fine_path=fine_path),
        check_gradient(grid, basis, model, bounds, lam, seed + 2),
        check_particle_ks(grid, basis, path, n_particles, substeps, seed + 3),
    ]
    return checks
