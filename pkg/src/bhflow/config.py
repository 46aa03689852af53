"""Experiment configuration: a single YAML tree per experiment.

Parsing keeps the source line of every key so that validation errors point
at the offending line.  Unknown keys are rejected outright; every builder
re-checks the semantic constraints (dimensions, file existence, positivity)
against the key path it reports.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import yaml

from .bhspace import AdmissibleBounds
from .grid import Grid
from .inverse import InverseProblem, OptimizerSettings
from .observe import ObservationModel, fourier_features, monomial_features
from .reduction import (Basis, CoefficientPath, basis_from_array, fisher_rao_path,
                        fourier_basis, legendre_basis, polynomial_path)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# Allowed keys per block; leaves are None.
_SCHEMA = {
    "grid": {"dim": None, "extent": None, "cells": None},
    "basis": {"family": None, "size": None, "file": None},
    "path": {"kind": None, "nodes": None, "horizon": None, "a0": None, "a1": None,
             "table": None, "values": None, "file": None},
    "observation": {
        "kernel": {"type": None, "sigma": None},
        "features": {"type": None, "degree": None, "count": None},
    },
    "admissible": {"lower": None, "upper": None},
    "inverse": {
        "lambda": None, "mu": None, "gamma": None, "noise_sigma": None,
        "seed": None, "data": None,
        "optimizer": {"max_iterations": None, "gradient_tolerance": None,
                      "step_tolerance": None, "gauss_newton": None,
                      "initial_step": None, "solver_tolerance": None},
    },
    "forward": {"residual_threshold": None},
    "verify": {"particles": None, "substeps": None},
    "output": None,
}


def _node_to_data(node, lines: dict, path: str):
    """Convert a composed YAML node to plain data, recording key lines."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            sub = f"{path}.{key}" if path else key
            lines[sub] = key_node.start_mark.line + 1
            out[key] = _node_to_data(value_node, lines, sub)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_node_to_data(v, lines, f"{path}[{i}]") for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _check_keys(data, schema, lines: dict, path: str):
    if schema is None or not isinstance(data, dict):
        return
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key '{sub}'", lines.get(sub))
        _check_keys(value, schema[key], lines, sub)


@dataclass
class ExperimentConfig:
    data: dict
    lines: dict
    source: str

    def get(self, path: str, default=None):
        node = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def require(self, path: str):
        value = self.get(path, default=_MISSING)
        if value is _MISSING:
            parent = path.rsplit(".", 1)[0] if "." in path else None
            line = self.lines.get(path) or (self.lines.get(parent) if parent else None)
            raise ConfigError(f"missing required config field '{path}'", line)
        return value

    def line(self, path: str) -> int | None:
        return self.lines.get(path)

    def error(self, path: str, message: str) -> ConfigError:
        return ConfigError(f"'{path}': {message}", self.lines.get(path))


_MISSING = object()


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            node = yaml.compose(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
    if node is None:
        raise ConfigError("config file is empty")
    lines: dict = {}
    data = _node_to_data(node, lines, "")
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(data, _SCHEMA, lines, "")
    return ExperimentConfig(data=data, lines=lines, source=path)


# ----------------------------------------------------------------------
# builders

def _as_float(cfg: ExperimentConfig, path: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise cfg.error(path, f"expected a number, got {value!r}") from None


def _as_int(cfg: ExperimentConfig, path: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise cfg.error(path, f"expected an integer, got {value!r}")
    return value


def build_grid(cfg: ExperimentConfig) -> Grid:
    block = cfg.require("grid")
    if not isinstance(block, dict):
        raise cfg.error("grid", "must be a mapping")
    dim = _as_int(cfg, "grid.dim", cfg.require("grid.dim"))
    if dim not in (1, 2):
        raise cfg.error("grid.dim", "must be 1 or 2")
    extent = cfg.require("grid.extent")
    cells = cfg.require("grid.cells")
    if isinstance(cells, int):
        cells = [cells]
    if dim == 1 and len(extent) == 2 and all(isinstance(v, (int, float)) for v in extent):
        extent = [extent]
    if len(extent) != dim:
        raise cfg.error("grid.extent", f"expected {dim} axis extents, got {len(extent)}")
    if len(cells) != dim:
        raise cfg.error("grid.cells", f"expected {dim} cell counts, got {len(cells)}")
    try:
        return Grid(extent, cells)
    except ValueError as exc:
        raise cfg.error("grid", str(exc)) from None


def build_basis(cfg: ExperimentConfig, grid: Grid) -> Basis:
    family = cfg.require("basis.family")
    if family == "fourier":
        return fourier_basis(grid, _as_int(cfg, "basis.size", cfg.require("basis.size")))
    if family == "legendre":
        return legendre_basis(grid, _as_int(cfg, "basis.size", cfg.require("basis.size")))
    if family == "custom":
        fname = cfg.require("basis.file")
        base = os.path.dirname(os.path.abspath(cfg.source))
        full = fname if os.path.isabs(fname) else os.path.join(base, fname)
        if not os.path.exists(full):
            raise cfg.error("basis.file", f"file not found: {full}")
        table = np.loadtxt(full, delimiter=",", ndmin=2)
        funcs = table.T.reshape(-1, *grid.shape)
        try:
            return basis_from_array(grid, funcs)
        except ValueError as exc:
            raise cfg.error("basis.file", str(exc)) from None
    raise cfg.error("basis.family", f"unknown family '{family}'")


def build_path(cfg: ExperimentConfig, basis: Basis) -> CoefficientPath:
    kind = cfg.require("path.kind")
    horizon = _as_float(cfg, "path.horizon", cfg.get("path.horizon", 1.0))
    if horizon <= 0:
        raise cfg.error("path.horizon", "must be positive")
    if kind == "fisher_rao":
        nodes = _as_int(cfg, "path.nodes", cfg.require("path.nodes"))
        a0 = np.asarray(cfg.require("path.a0"), dtype=float)
        a1 = np.asarray(cfg.require("path.a1"), dtype=float)
        if a0.shape != (basis.size,) or a1.shape != (basis.size,):
            raise cfg.error("path.a0", f"endpoints must have {basis.size} coefficients")
        return fisher_rao_path(a0, a1, nodes, horizon)
    if kind == "polynomial":
        nodes = _as_int(cfg, "path.nodes", cfg.require("path.nodes"))
        table = np.atleast_2d(np.asarray(cfg.require("path.table"), dtype=float))
        if table.shape[0] != basis.size:
            raise cfg.error("path.table", f"expected {basis.size} coefficient rows")
        return polynomial_path(table, nodes, horizon)
    if kind == "nodes":
        values = cfg.get("path.values")
        if values is None:
            fname = cfg.require("path.file")
            base = os.path.dirname(os.path.abspath(cfg.source))
            full = fname if os.path.isabs(fname) else os.path.join(base, fname)
            if not os.path.exists(full):
                raise cfg.error("path.file", f"file not found: {full}")
            rows = np.loadtxt(full, delimiter=",", skiprows=1, ndmin=2)
        else:
            rows = np.asarray(values, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != basis.size + 1:
            raise cfg.error("path.values",
                            f"rows must be [t, a_1..a_{basis.size}]")
        try:
            return CoefficientPath(times=rows[:, 0], coeffs=rows[:, 1:])
        except ValueError as exc:
            raise cfg.error("path.values", str(exc)) from None
    raise cfg.error("path.kind", f"unknown kind '{kind}'")


def build_observation(cfg: ExperimentConfig, grid: Grid) -> ObservationModel:
    block = cfg.require("observation")
    if not isinstance(block, dict):
        raise cfg.error("observation", "must be a mapping")
    ftype = cfg.require("observation.features.type")
    if ftype == "monomials":
        degree = _as_int(cfg, "observation.features.degree",
                         cfg.require("observation.features.degree"))
        features = monomial_features(grid, degree)
    elif ftype == "fourier":
        count = _as_int(cfg, "observation.features.count",
                        cfg.require("observation.features.count"))
        features = fourier_features(grid, count)
    else:
        raise cfg.error("observation.features.type", f"unknown feature set '{ftype}'")
    ktype = cfg.get("observation.kernel.type", "identity")
    if ktype == "identity":
        return ObservationModel(grid, features, kernel="identity")
    if ktype == "gaussian":
        sigma = _as_float(cfg, "observation.kernel.sigma",
                          cfg.require("observation.kernel.sigma"))
        return ObservationModel(grid, features, kernel="gaussian", sigma=sigma)
    raise cfg.error("observation.kernel.type", f"unknown kernel '{ktype}'")


def build_bounds(cfg: ExperimentConfig) -> AdmissibleBounds:
    lower = _as_float(cfg, "admissible.lower", cfg.get("admissible.lower", 1e-6))
    upper = _as_float(cfg, "admissible.upper", cfg.get("admissible.upper", 1e6))
    try:
        return AdmissibleBounds(lower, upper)
    except ValueError as exc:
        raise cfg.error("admissible", str(exc)) from None


def build_optimizer(cfg: ExperimentConfig) -> OptimizerSettings:
    defaults = OptimizerSettings()
    base = "inverse.optimizer"
    gn = cfg.get(f"{base}.gauss_newton", defaults.gauss_newton)
    if not isinstance(gn, bool):
        raise cfg.error(f"{base}.gauss_newton", "must be true or false")
    return OptimizerSettings(
        max_iterations=_as_int(cfg, f"{base}.max_iterations",
                               cfg.get(f"{base}.max_iterations", defaults.max_iterations)),
        gradient_tolerance=_as_float(cfg, f"{base}.gradient_tolerance",
                                     cfg.get(f"{base}.gradient_tolerance",
                                             defaults.gradient_tolerance)),
        step_tolerance=_as_float(cfg, f"{base}.step_tolerance",
                                 cfg.get(f"{base}.step_tolerance", defaults.step_tolerance)),
        gauss_newton=gn,
        initial_step=_as_float(cfg, f"{base}.initial_step",
                               cfg.get(f"{base}.initial_step", defaults.initial_step)),
        solver_tolerance=_as_float(cfg, f"{base}.solver_tolerance",
                                   cfg.get(f"{base}.solver_tolerance",
                                           defaults.solver_tolerance)),
    )


def build_problem(cfg: ExperimentConfig, grid: Grid, basis: Basis,
                  model: ObservationModel, path: CoefficientPath,
                  data: np.ndarray | None = None) -> InverseProblem:
    lam = _as_float(cfg, "inverse.lambda", cfg.require("inverse.lambda"))
    if lam <= 0:
        raise cfg.error("inverse.lambda", "must be positive")
    mu = _as_float(cfg, "inverse.mu", cfg.get("inverse.mu", 0.0))
    gamma = _as_float(cfg, "inverse.gamma", cfg.get("inverse.gamma", 0.0))
    try:
        return InverseProblem(
            grid=grid, basis=basis, model=model, times=path.times.copy(), data=data,
            lam=lam, mu=mu, gamma=gamma, bounds=build_bounds(cfg),
            settings=build_optimizer(cfg),
        )
    except ValueError as exc:
        raise cfg.error("inverse", str(exc)) from None


def config_seed(cfg: ExperimentConfig, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    return _as_int(cfg, "inverse.seed", cfg.get("inverse.seed", 0))
