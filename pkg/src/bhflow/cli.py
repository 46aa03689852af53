"""Command-line driver for the four workflows plus the two study commands.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 I/O error,
4 verification failure.  All commands read one YAML experiment config and
write CSV tables, JSON summaries, and SVG figures into the output
directory; outputs are bitwise-reproducible for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import report
from .config import (ConfigError, ExperimentConfig, build_basis, build_bounds,
                     build_grid, build_observation, build_path, build_problem,
                     config_seed, load_config)
from .inverse import (make_synthetic, noise_scaling_study, recovery_errors,
                      solve_inverse)
from .neumann import SolverError
from .reduction import (CoefficientPath, fisher_rao_path, kinetic_tensor,
                        polynomial_path, state_of)
from .transport import continuity_residual, default_test_fields, transport_map
from .verify import run_battery


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _out_dir(cfg: ExperimentConfig, args) -> str:
    out = args.out or cfg.get("output", "out")
    return report.ensure_dir(out)


def _check_admissible(cfg, grid, basis, path, bounds):
    bad = path.inadmissible_nodes(grid, basis, bounds)
    if bad:
        raise ConfigError(
            f"path leaves the admissible density band at nodes {bad} "
            f"(bounds [{bounds.lower:g}, {bounds.upper:g}])",
            cfg.line("path"),
        )


def _grid_columns(grid) -> tuple[list[str], np.ndarray]:
    coords = grid.mesh()
    cols = np.column_stack([np.broadcast_to(c, grid.shape).ravel() for c in coords])
    names = [f"x{a + 1}" for a in range(grid.dim)]
    return names, cols


def cmd_forward(cfg: ExperimentConfig, args) -> int:
    grid = build_grid(cfg)
    basis = build_basis(cfg, grid)
    path = build_path(cfg, basis)
    bounds = build_bounds(cfg)
    _check_admissible(cfg, grid, basis, path, bounds)
    out = _out_dir(cfg, args)
    threshold = float(cfg.get("forward.residual_threshold", 1e-3))

    adot = path.node_velocities()
    states = [state_of(grid, basis, a) for a in path.coeffs]
    hdots = [basis.synthesize(v) for v in adot]

    def node_eval(i):
        return transport_map(grid, states[i], hdots[i])

    evals = _parallel_map(node_eval, range(path.n_nodes), args.threads)
    energies = np.array([e.kinetic_energy for e in evals])
    weights = path.trapezoid_weights()
    action = float(weights @ energies)
    residual = continuity_residual(grid, states, hdots, path.dt,
                                   tests=default_test_fields(grid))

    rows = [
        (path.times[i], energies[i], evals[i].solution.iterations,
         evals[i].solution.residual, states[i].w.min(), states[i].w.max())
        for i in range(path.n_nodes)
    ]
    report.write_csv(os.path.join(out, "nodes.csv"),
                     ["t", "kinetic_energy", "solver_iterations",
                      "solver_residual", "min_density", "max_density"], rows)

    names, coord_cols = _grid_columns(grid)
    density = np.column_stack([coord_cols] + [s.w.ravel() for s in states])
    report.write_csv(os.path.join(out, "density.csv"),
                     names + [f"t{i}" for i in range(path.n_nodes)], density)

    vel_rows = np.column_stack(
        [grid.faces[0]] + [e.velocity.components[0].reshape(grid.face_shape(0))[
            (slice(None),) + (0,) * (grid.dim - 1)] for e in evals])
    report.write_csv(os.path.join(out, "velocity.csv"),
                     ["x1_face"] + [f"t{i}" for i in range(path.n_nodes)], vel_rows)

    summary = {
        "transport_action": action,
        "continuity_residual": residual,
        "residual_threshold": threshold,
        "continuity_ok": residual < threshold,
        "nodes": path.n_nodes,
        "cells": list(grid.cells),
        "max_solver_residual": float(max(e.solution.residual for e in evals)),
    }
    report.write_json(os.path.join(out, "summary.json"), summary)

    snap_ids = sorted(set([0, path.n_nodes // 2, path.n_nodes - 1]))
    if grid.dim == 1:
        report.line_plot(os.path.join(out, "density_snapshots.svg"), grid.centers[0],
                         {f"t = {path.times[i]:.3g}": states[i].w for i in snap_ids},
                         "x", "density", "density snapshots")
    report.line_plot(os.path.join(out, "kinetic_energy.svg"), path.times,
                     {"kinetic energy": energies}, "t", "energy",
                     "kinetic energy along the path")
    print(f"forward: action {action:.6e}, continuity residual {residual:.3e} "
          f"(threshold {threshold:g}) -> {out}")
    return 0


def _read_series_csv(path: str, expected_cols: int, what: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}")
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"malformed {what} file {path}: {exc}") from None
    if rows.ndim != 2 or rows.shape[1] != expected_cols:
        raise ConfigError(
            f"{what} file {path} has {rows.shape[1] if rows.ndim == 2 else 1} "
            f"columns, expected {expected_cols}")
    return rows


def cmd_flow_match(cfg: ExperimentConfig, args) -> int:
    grid = build_grid(cfg)
    basis = build_basis(cfg, grid)
    path = build_path(cfg, basis)
    bounds = build_bounds(cfg)
    _check_admissible(cfg, grid, basis, path, bounds)
    out = _out_dir(cfg, args)

    rows = _read_series_csv(args.beta, basis.size + 1, "candidate rates")
    if rows.shape[0] != path.n_nodes:
        raise ConfigError(
            f"candidate rates have {rows.shape[0]} nodes, path has {path.n_nodes}")
    if not np.allclose(rows[:, 0], path.times, atol=1e-10):
        raise ConfigError("candidate rate times do not match the path nodes")
    beta = rows[:, 1:]

    adot = path.node_velocities()
    weights = path.trapezoid_weights()
    losses = np.empty(path.n_nodes)
    for i in range(path.n_nodes):
        H = kinetic_tensor(grid, basis, path.coeffs[i]).H
        diff = beta[i] - adot[i]
        losses[i] = float(diff @ H @ diff)
    total = float(weights @ losses)

    report.write_csv(os.path.join(out, "flow_match.csv"),
                     ["t", "loss"], np.column_stack([path.times, losses]))
    report.write_json(os.path.join(out, "flow_match.json"),
                      {"total_loss": total, "nodes": path.n_nodes})
    report.line_plot(os.path.join(out, "flow_match.svg"), path.times,
                     {"pointwise loss": losses}, "t", "loss",
                     "flow-matching loss along the path")
    print(f"flow-match: total loss {total:.6e} -> {out}")
    return 0


def _recovery_payload(rep, problem, truth):
    payload = {
        "iterations": rep.iterations,
        "termination": rep.termination,
        "gradient_norm": rep.gradient_norm,
        "objective_history": rep.objective_history,
        "kappa_min": rep.kappa_min,
        "observable": rep.kappa_min > 1e-12,
        "breakdown": {
            "total": rep.breakdown.total,
            "data": rep.breakdown.data,
            "transport": rep.breakdown.transport,
            "transport_action": rep.breakdown.transport_action,
            "state_penalty": rep.breakdown.state_penalty,
            "coefficient_penalty": rep.breakdown.coefficient_penalty,
        },
    }
    if truth is not None:
        payload["errors"] = recovery_errors(problem, rep.path, truth)
    return payload


def _build_inverse_inputs(cfg: ExperimentConfig, args):
    grid = build_grid(cfg)
    basis = build_basis(cfg, grid)
    path = build_path(cfg, basis)
    bounds = build_bounds(cfg)
    _check_admissible(cfg, grid, basis, path, bounds)
    model = build_observation(cfg, grid)
    problem = build_problem(cfg, grid, basis, model, path)
    seed = config_seed(cfg, args.seed)
    data_file = cfg.get("inverse.data")
    if data_file is not None:
        base = os.path.dirname(os.path.abspath(cfg.source))
        full = data_file if os.path.isabs(data_file) else os.path.join(base, data_file)
        rows = _read_series_csv(full, model.size + 1, "data")
        if rows.shape[0] != path.n_nodes:
            raise ConfigError(
                f"data series has {rows.shape[0]} nodes, path has {path.n_nodes}",
                cfg.line("inverse.data"))
        data = rows[:, 1:]
        truth = None
    else:
        sigma = float(cfg.get("inverse.noise_sigma", 0.0))
        data = make_synthetic(problem, path, sigma, seed)
        truth = path
    return grid, basis, model, path, problem.with_data(data), truth, seed


def cmd_invert(cfg: ExperimentConfig, args) -> int:
    grid, basis, model, path, problem, truth, _ = _build_inverse_inputs(cfg, args)
    out = _out_dir(cfg, args)
    rep = solve_inverse(problem)
    payload = _recovery_payload(rep, problem, truth)
    report.write_json(os.path.join(out, "recovery.json"), payload)
    report.write_csv(os.path.join(out, "recovered_path.csv"),
                     ["t"] + [f"a{k + 1}" for k in range(basis.size)],
                     np.column_stack([rep.path.times, rep.path.coeffs]))
    report.line_plot(os.path.join(out, "convergence.svg"),
                     np.arange(len(rep.objective_history)),
                     {"objective": np.asarray(rep.objective_history)},
                     "accepted step", "objective", "optimizer convergence", logy=True)
    msg = f"invert: {rep.termination} after {rep.iterations} steps"
    if truth is not None:
        msg += f", sup coefficient error {payload['errors']['coefficient_sup']:.3e}"
    if rep.kappa_min <= 1e-12:
        msg += " [unobservable: kappa = 0]"
    print(msg + f" -> {out}")
    return 0


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    grid = build_grid(cfg)
    basis = build_basis(cfg, grid)
    path = build_path(cfg, basis)
    bounds = build_bounds(cfg)
    _check_admissible(cfg, grid, basis, path, bounds)
    model = build_observation(cfg, grid)
    seed = config_seed(cfg, args.seed)
    lam = float(cfg.get("inverse.lambda", 1e-6))
    n_particles = int(cfg.get("verify.particles", 20000))
    substeps = int(cfg.get("verify.substeps", 128))
    fine_path = _fine_config_path(cfg, basis)
    out = _out_dir(cfg, args)

    checks = run_battery(grid, basis, model, path, bounds, lam, seed,
                         n_particles=n_particles, substeps=substeps,
                         fine_path=fine_path)
    scorecard = {
        "all_passed": all(c.passed for c in checks),
        "checks": [c.as_dict() for c in checks],
    }
    report.write_json(os.path.join(out, "scorecard.json"), scorecard)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: value {c.value:.3e} vs threshold {c.threshold:g}")
    if not scorecard["all_passed"]:
        failing = [c.name for c in checks if not c.passed]
        print(f"verification failed: {', '.join(failing)}", file=sys.stderr)
        return 4
    print(f"verify: all {len(checks)} checks passed -> {out}")
    return 0


def _fine_config_path(cfg: ExperimentConfig, basis) -> CoefficientPath | None:
    """Rebuild the config path with doubled time resolution when generated."""
    kind = cfg.get("path.kind")
    nodes = cfg.get("path.nodes")
    if kind not in ("fisher_rao", "polynomial") or not isinstance(nodes, int):
        return None
    fine_nodes = 2 * (nodes - 1) + 1
    horizon = float(cfg.get("path.horizon", 1.0))
    if kind == "fisher_rao":
        return fisher_rao_path(np.asarray(cfg.require("path.a0"), dtype=float),
                               np.asarray(cfg.require("path.a1"), dtype=float),
                               fine_nodes, horizon)
    table = np.atleast_2d(np.asarray(cfg.require("path.table"), dtype=float))
    return polynomial_path(table, fine_nodes, horizon)


def cmd_sweep_lambda(cfg: ExperimentConfig, args) -> int:
    grid, basis, model, path, problem, truth, _ = _build_inverse_inputs(cfg, args)
    out = _out_dir(cfg, args)
    lambdas = [float(v) for v in args.lambdas.split(",")]
    rows = []
    actions = []
    for lam in lambdas:
        prob = replace(problem, lam=lam)
        rep = solve_inverse(prob)
        err = (recovery_errors(prob, rep.path, truth, compute_velocity_error=False)
               ["coefficient_sup"] if truth is not None else float("nan"))
        rows.append((lam, rep.breakdown.data, rep.breakdown.transport_action,
                     rep.breakdown.total, rep.iterations, err))
        actions.append(rep.breakdown.transport_action)
    report.write_csv(os.path.join(out, "lambda_sweep.csv"),
                     ["lambda", "data_term", "transport_action", "objective",
                      "iterations", "coefficient_sup_error"], rows)
    monotone = all(actions[i + 1] <= actions[i] * (1 + 1e-9)
                   for i in range(len(actions) - 1))
    report.write_json(os.path.join(out, "lambda_sweep.json"),
                      {"lambdas": lambdas, "transport_actions": actions,
                       "action_non_increasing": monotone})
    report.scatter_plot(os.path.join(out, "lambda_sweep.svg"), lambdas, actions,
                        "lambda", "transport action",
                        "minimizer action vs transport weight", loglog=True)
    print(f"sweep-lambda: actions {actions} (non-increasing: {monotone}) -> {out}")
    return 0


def cmd_noise_study(cfg: ExperimentConfig, args) -> int:
    grid, basis, model, path, problem, truth, seed = _build_inverse_inputs(cfg, args)
    if truth is None:
        raise ConfigError("noise-study needs a synthetic setup (no inverse.data)")
    out = _out_dir(cfg, args)
    sigmas = [float(v) for v in args.sigmas.split(",")]
    seeds = [seed + i for i in range(args.n_seeds)]
    study = noise_scaling_study(problem, truth, sigmas, seeds)
    report.write_csv(os.path.join(out, "noise_study.csv"),
                     ["sigma", "seed", "path_error", "data_residual"],
                     [(r.sigma, r.seed, r.path_error, r.data_residual)
                      for r in study.rows])
    report.write_json(os.path.join(out, "noise_study.json"), {
        "kappa_min": study.kappa_min,
        "slope": study.slope,
        "stability_bound": study.bound,
        "slope_limit": 1.5 * study.bound,
        "slope_within_bound": study.slope_within_bound,
        "mean_errors": {repr(k): v for k, v in study.mean_errors.items()},
    })
    report.scatter_plot(os.path.join(out, "noise_study.svg"),
                        [r.data_residual for r in study.rows],
                        [r.path_error for r in study.rows],
                        "data residual", "path error",
                        "recovery error vs data residual", fit_slope=study.slope)
    print(f"noise-study: slope {study.slope:.3g} vs limit "
          f"{1.5 * study.bound:.3g} (kappa_min {study.kappa_min:.3g}) -> {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bhflow",
        description="Measure flows in log-density coordinates: forward transport, "
                    "flow matching, path recovery, and self-verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent per-node solves")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override for synthetic data and sampling")

    p = sub.add_parser("forward", help="realize the configured path dynamically")
    common(p)
    p = sub.add_parser("flow-match", help="score a candidate rate table against the path")
    common(p)
    p.add_argument("--beta", required=True, help="CSV of candidate rates (t, b_1..b_m)")
    p = sub.add_parser("invert", help="recover the coefficient path from data")
    common(p)
    p = sub.add_parser("verify", help="run the self-check battery")
    common(p)
    p = sub.add_parser("sweep-lambda", help="re-solve the inverse problem across lambdas")
    common(p)
    p.add_argument("--lambdas", default="1e-8,1e-6,1e-4",
                   help="comma-separated transport weights")
    p = sub.add_parser("noise-study", help="recovery error scaling across noise levels")
    common(p)
    p.add_argument("--sigmas", default="1e-4,1e-3,1e-2",
                   help="comma-separated noise levels")
    p.add_argument("--n-seeds", type=int, default=5, help="seeds per noise level")
    return parser


_COMMANDS = {
    "forward": cmd_forward,
    "flow-match": cmd_flow_match,
    "invert": cmd_invert,
    "verify": cmd_verify,
    "sweep-lambda": cmd_sweep_lambda,
    "noise-study": cmd_noise_study,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
