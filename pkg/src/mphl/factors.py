"""Array-backed log-factors over a single node position.

A :class:`LogFactor` is a sum of *groups*.  Every group pairs a set of
weighted points (known anchor positions or a neighbor's particles) with the
observations of one edge, and contributes

    logsumexp_k [ edge(x, p_k) - log w_k ]

to the log-factor evaluated at ``x``.  A local evidence term is a factor with
one single-point group per anchor neighbor; an incoming particle message is a
factor with one group of M points; a belief is the concatenation of both.  An
optional box prior contributes ``-inf`` outside its bounds.

The edge term is reduced to five numbers so that evaluation does not need to
know about individual observations::

    edge(x, p) = -a * (d - rbar)^2 + resid + c . (p - x) / d,   d = ||p - x||

which is exactly the sum of the Gaussian range terms (``a = sum 1/(2 s^2)``)
and the von Mises bearing terms (``c = sum +-kappa u``) on that edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy.special import logsumexp

from .model import DirectionObservation, DistanceObservation, NodeId, Observation

NO_BOX = np.array([-np.inf, np.inf, -np.inf, np.inf])


def edge_params(observations: Iterable[Observation], receiver: NodeId) -> np.ndarray:
    """Collapse the observations of one edge into ``(a, rbar, resid, cx, cy)``.

    ``receiver`` is the node whose position is the free variable; the other
    endpoint is the fixed point of the group.
    """
    a = 0.0
    b = 0.0
    c0 = 0.0
    cx = 0.0
    cy = 0.0
    for obs in observations:
        if isinstance(obs, DistanceObservation):
            w = 1.0 / (2.0 * obs.sigma**2)
            a += w
            b += 2.0 * w * obs.value
            c0 -= w * obs.value**2
        elif isinstance(obs, DirectionObservation):
            sign = 1.0 if obs.from_ == receiver else -1.0
            cx += sign * obs.kappa * math.cos(obs.angle)
            cy += sign * obs.kappa * math.sin(obs.angle)
        else:
            raise TypeError(f"unknown observation type {type(obs).__name__}")
    if a > 0:
        rbar = b / (2.0 * a)
        resid = c0 + a * rbar * rbar
    else:
        rbar = 0.0
        resid = 0.0
    return np.array([a, rbar, resid, cx, cy])


@dataclass(frozen=True)
class LogFactor:
    """Log-factor of one node position; callable on a point or an (n, 2) array."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    log_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    params: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))
    box: np.ndarray = field(default_factory=lambda: NO_BOX.copy())

    def __post_init__(self):
        for name, dtype in (("points", float), ("log_weights", float), ("offsets", np.int64),
                            ("params", float), ("box", float)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.points.shape != (len(self.log_weights), 2):
            raise ValueError("points must be (K, 2) with one log-weight per point")
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.points) or len(self.offsets) != len(self.params) + 1:
            raise ValueError("inconsistent group offsets")

    @classmethod
    def group(cls, points, params, log_weights=None, box=None) -> "LogFactor":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if log_weights is None:
            log_weights = np.zeros(len(points))
        return cls(points, log_weights, np.array([0, len(points)]), np.asarray(params, dtype=float)[None, :],
                   NO_BOX if box is None else box)

    @classmethod
    def box_prior(cls, bounds) -> "LogFactor":
        """Uniform log-indicator of ``bounds = (xmin, xmax, ymin, ymax)``."""
        return cls(box=np.asarray(bounds, dtype=float))

    @property
    def n_groups(self) -> int:
        return len(self.params)

    def groups(self):
        for g in range(self.n_groups):
            lo, hi = self.offsets[g], self.offsets[g + 1]
            yield self.points[lo:hi], self.log_weights[lo:hi], self.params[g]

    def implied_points(self, per_group: int = 4, n_angles: int = 8,
                       ranges: Sequence[float] = (1.0, 2.0, 4.0, 7.0)) -> np.ndarray:
        """Positions each group's observations point at, one group at a time.

        A group with range and bearing implies ``p - rbar * c/|c|`` for each of
        its points ``p``; range alone implies ``n_angles`` points on the circle
        of radius ``rbar``; bearing alone implies points at ``ranges`` along
        the ray.  At most ``per_group`` evenly spaced points of each group are
        used.  Useful as starting candidates for a sampler.
        """
        out = []
        for pts, _, (a, rbar, _, cx, cy) in self.groups():
            if len(pts) == 0:
                continue
            pts = pts[np.unique(np.linspace(0, len(pts) - 1, min(per_group, len(pts))).astype(int))]
            norm = math.hypot(cx, cy)
            if norm > 0:
                u = np.array([cx, cy]) / norm
                dists = [rbar] if a > 0 else ranges
                out.extend(pts - d * u for d in dists)
            elif a > 0:
                th = np.arange(n_angles) * 2 * np.pi / n_angles
                ring = rbar * np.column_stack([np.cos(th), np.sin(th)])
                out.extend(p + ring for p in pts)
        return np.concatenate(out) if out else np.zeros((0, 2))

    def __add__(self, other: "LogFactor") -> "LogFactor":
        return combine([self, other])

    def in_box(self, x: np.ndarray) -> np.ndarray:
        b = self.box
        return (x[:, 0] >= b[0]) & (x[:, 0] <= b[1]) & (x[:, 1] >= b[2]) & (x[:, 1] <= b[3])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(_evaluate(x[0], x[1], self.points, self.log_weights, self.offsets, self.params, self.box))
        return self.evaluate_many(x)

    def evaluate_many(self, x: np.ndarray) -> np.ndarray:
        """Vectorized evaluation at an (n, 2) array of positions."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        out = np.zeros(len(x))
        for pts, logw, (a, rbar, resid, cx, cy) in self.groups():
            dx = pts[None, :, 0] - x[:, None, 0]
            dy = pts[None, :, 1] - x[:, None, 1]
            d = np.hypot(dx, dy)
            v = resid - logw[None, :] - a * (d - rbar) ** 2
            if cx != 0.0 or cy != 0.0:
                with np.errstate(divide="ignore", invalid="ignore"):
                    v = np.where(d > 0, v + (cx * dx + cy * dy) / d, -np.inf)
            out += logsumexp(v, axis=1)
        out[~self.in_box(x)] = -np.inf
        return out


def combine(factors: Sequence[LogFactor]) -> LogFactor:
    """Sum of log-factors: concatenated groups, intersected boxes."""
    factors = list(factors)
    if not factors:
        return LogFactor()
    points = np.concatenate([f.points for f in factors])
    log_weights = np.concatenate([f.log_weights for f in factors])
    params = np.concatenate([f.params for f in factors])
    sizes = np.concatenate([np.diff(f.offsets) for f in factors])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    boxes = np.array([f.box for f in factors])
    box = np.array([boxes[:, 0].max(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].min()])
    return LogFactor(points, log_weights, offsets, params, box)


@numba.njit(cache=True, nogil=True)
def _evaluate(x, y, points, log_weights, offsets, params, box):
    if x < box[0] or x > box[1] or y < box[2] or y > box[3]:
        return -np.inf
    total = 0.0
    n_groups = params.shape[0]
    for g in range(n_groups):
        a = params[g, 0]
        rbar = params[g, 1]
        resid = params[g, 2]
        cx = params[g, 3]
        cy = params[g, 4]
        has_dir = cx != 0.0 or cy != 0.0
        lo = offsets[g]
        hi = offsets[g + 1]
        # streaming logsumexp: one pass, one exp per point
        vmax = -np.inf
        s = 0.0
        for k in range(lo, hi):
            dx = points[k, 0] - x
            dy = points[k, 1] - y
            d = math.sqrt(dx * dx + dy * dy)
            v = resid - log_weights[k] - a * (d - rbar) * (d - rbar)
            if has_dir:
                if d > 0.0:
                    v += (cx * dx + cy * dy) / d
                else:
                    continue
            if v > vmax:
                s = s * math.exp(vmax - v) + 1.0
                vmax = v
            else:
                s += math.exp(v - vmax)
        if vmax == -np.inf:
            return -np.inf
        total += vmax + math.log(s)
    return total
