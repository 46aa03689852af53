"""Result emission: delimited tables, JSON reports, and SVG figures.

CSV and JSON writers format floats with `repr` (shortest round-trip), so a
fixed config and seed produce bitwise-identical text outputs.  Figures are
rendered with the Agg backend and written as SVG next to the tables, with
hashed ids salted and date metadata stripped for reproducibility.
"""

from __future__ import annotations

import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "bhflow"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path: str):
    """Header plus float rows of a delimited table written by `write_csv`."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return header, rows


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else repr(value)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save(fig, path: str) -> None:
    fig.savefig(path, metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def line_plot(path: str, x, curves: dict, xlabel: str, ylabel: str,
              title: str = "", logy: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, y in curves.items():
        ax.plot(x, y, label=label, linewidth=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def scatter_plot(path: str, x, y, xlabel: str, ylabel: str, title: str = "",
                 fit_slope: float | None = None, loglog: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.scatter(x, y, s=14)
    if fit_slope is not None and len(x) > 0:
        xs = np.linspace(0.0, max(x), 50)
        ax.plot(xs, fit_slope * xs, "k--", linewidth=1.0,
                label=f"slope {fit_slope:.3g}")
        ax.legend(fontsize=8)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    _save(fig, path)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
