"""Localization error and belief spread statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

from .model import NodeId, wrap_angle  # noqa: F401  (re-exported)
from .sampler import ParticleSet

SWEEP_COLUMNS = ["sweep_var", "sweep_value", "method", "replicate", "avg_error", "belief_std_total",
                 "iterations_run"]


@dataclass
class RunMetrics:
    avg_error: float
    per_node_error: Dict[NodeId, float]
    belief_std_total: float = float("nan")
    iterations_run: int = 0
    schedule_length: int = 0

    def __post_init__(self):
        if any(e < 0 for e in self.per_node_error.values()):
            raise ValueError("errors must be non-negative")


def localization_errors(estimates: Mapping[NodeId, Sequence[float]],
                        truth: Mapping[NodeId, Sequence[float]]) -> Dict[NodeId, float]:
    if set(estimates) != set(truth):
        raise KeyError(f"estimate/truth node sets differ: {sorted(map(str, set(estimates) ^ set(truth)))}")
    return {k: math.dist(estimates[k], truth[k]) for k in estimates}


def average_localization_error(estimates, truth) -> float:
    """Mean Euclidean error over targets."""
    errors = localization_errors(estimates, truth)
    if not errors:
        raise ValueError("no targets to evaluate")
    return float(np.mean(list(errors.values())))


def belief_std(particle_sets: Mapping[NodeId, ParticleSet], per_node: bool = False):
    """Sum over nodes of ``sqrt(var_x + var_y)`` of each node's particles.

    With ``per_node=True`` the individual node spreads are returned instead.
    """
    spreads = {}
    for k, ps in particle_sets.items():
        pts = ps.particles if isinstance(ps, ParticleSet) else np.asarray(ps, dtype=float)
        if len(pts) == 0:
            raise ValueError(f"empty particle set for node {k!r}")
        spreads[k] = float(math.sqrt(pts.var(axis=0).sum()))
    if per_node:
        return spreads
    return float(sum(spreads.values()))


def aggregate(values: Iterable[float], how: str = "mean") -> float:
    arr = np.asarray(list(values), dtype=float)
    if how == "mean":
        return float(np.mean(arr))
    if how == "median":
        return float(np.median(arr))
    raise ValueError(f"unknown aggregation {how!r}")


def write_sweep_csv(rows: Iterable[Mapping], path) -> None:
    """Rows sorted by (sweep value, replicate, method)."""
    rows = sorted(rows, key=lambda r: (r["sweep_value"], r["replicate"], r["method"]))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in SWEEP_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v
