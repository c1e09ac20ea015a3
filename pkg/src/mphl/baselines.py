"""Reference estimators: anchored classical MDS and an exact grid posterior."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from .factors import LogFactor
from .model import DistanceObservation, NodeId, Position, observation_log_norm
from .netgraph import FactorGraph, Scenario, _sort_key

MAX_CELLS = 10_000_000


class DegenerateGeometryError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class IncompleteDistanceMatrixError(ValueError):
    pass


class GridTooLargeError(ValueError):
    pass


def classical_mds(distances, dim: int = 2) -> np.ndarray:
    """Torgerson scaling of a complete distance matrix.

    Returns centered coordinates, determined up to rotation and reflection.
    """
    D = np.asarray(distances, dtype=float)
    n = len(D)
    if D.shape != (n, n) or not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(~np.isfinite(D)):
        raise ValueError("distances must be a finite symmetric matrix with zero diagonal")
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D**2) @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:dim]
    evals, evecs = evals[order], evecs[:, order]
    if len(evals) < dim or evals[-1] <= 1e-12 * max(evals[0], 1.0):
        raise DegenerateGeometryError(f"rank-deficient configuration (eigenvalues {evals})")
    Y = evecs * np.sqrt(evals)
    return Y - Y.mean(axis=0)


def procrustes_align(relative, anchor_rows: Mapping[int, Sequence[float]]) -> np.ndarray:
    """Rigidly map ``relative`` onto known anchor positions (no scaling).

    Parameters
    ----------
    relative : (n, 2) array
    anchor_rows : mapping from row index to true position

    Both the best proper rotation and the best reflection are fitted; the one
    with the smaller squared anchor residual wins.
    """
    if len(anchor_rows) < 2:
        raise AlignmentError("alignment needs at least 2 anchors")
    Y = np.asarray(relative, dtype=float)
    rows = sorted(anchor_rows)
    A = Y[rows]
    T = np.array([anchor_rows[r] for r in rows], dtype=float)
    ca, ct = A.mean(axis=0), T.mean(axis=0)
    H = (A - ca).T @ (T - ct)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U @ Vt))
    candidates = [U @ np.diag([1.0, s * d]) @ Vt for s in (1.0, -1.0)]  # det +1, then det -1
    resid = [float(np.sum(((A - ca) @ R + ct - T) ** 2)) for R in candidates]
    R = candidates[1] if resid[1] < resid[0] - 1e-12 else candidates[0]
    return (Y - ca) @ R + ct


def distance_matrix(scenario: Scenario) -> Tuple[List[NodeId], np.ndarray]:
    """Complete distance matrix, averaging the two directions when both are observed."""
    ids = scenario.node_ids
    idx = {n: k for k, n in enumerate(ids)}
    n = len(ids)
    total = np.zeros((n, n))
    count = np.zeros((n, n))
    for obs in scenario.distance_observations:
        i, j = idx[obs.from_], idx[obs.to]
        for a, b in ((i, j), (j, i)):
            total[a, b] += obs.value
            count[a, b] += 1
    off = ~np.eye(n, dtype=bool)
    if np.any(count[off] == 0):
        missing = int(np.sum(count[off] == 0) // 2)
        raise IncompleteDistanceMatrixError(
            f"metric MDS needs every pairwise distance; {missing} of {n * (n - 1) // 2} pairs are unobserved")
    D = np.zeros((n, n))
    D[off] = total[off] / count[off]
    return ids, D


def mds_localize(scenario: Scenario) -> Dict[NodeId, Position]:
    """Centralized distance-only baseline: classical MDS aligned on the anchors."""
    ids, D = distance_matrix(scenario)
    rel = classical_mds(D)
    rows = {k: scenario.nodes[n] for k, n in enumerate(ids) if n in scenario.anchors}
    absolute = procrustes_align(rel, rows)
    return {n: Position(*absolute[k]) for k, n in enumerate(ids) if n not in scenario.anchors}


@dataclass(frozen=True)
class GridSpec:
    bounds: Tuple[float, float, float, float]
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("empty grid bounds")
        if self.n_cells > MAX_CELLS:
            raise GridTooLargeError(f"{self.n_cells} cells per node exceeds {MAX_CELLS}")

    @property
    def shape(self) -> Tuple[int, int]:
        xmin, xmax, ymin, ymax = self.bounds
        return (max(1, int(math.ceil((xmax - xmin) / self.resolution - 1e-9))),
                max(1, int(math.ceil((ymax - ymin) / self.resolution - 1e-9))))

    @property
    def n_cells(self) -> int:
        nx, ny = self.shape
        return nx * ny

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell centers, laid out symmetrically about the box center."""
        xmin, xmax, ymin, ymax = self.bounds
        nx, ny = self.shape
        xs = (xmin + xmax) / 2 + (np.arange(nx) - (nx - 1) / 2) * self.resolution
        ys = (ymin + ymax) / 2 + (np.arange(ny) - (ny - 1) / 2) * self.resolution
        return xs, ys

    def points(self) -> np.ndarray:
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def cell_area(self) -> float:
        return self.resolution**2


@dataclass
class OracleResult:
    grid: GridSpec
    targets: Tuple[NodeId, ...]
    log_posterior: np.ndarray
    marginals: Dict[NodeId, np.ndarray]
    mean: Dict[NodeId, Position]
    std: Dict[NodeId, float]
    modes: Dict[NodeId, List[Position]]

    def write_csv(self, path, target: Optional[NodeId] = None) -> None:
        """Marginal log-density of one target as ``x,y,log_posterior`` rows."""
        target = self.targets[0] if target is None else target
        pts = self.grid.points()
        lp = self.marginals[target].ravel()
        with open(path, "w") as fh:
            fh.write("x,y,log_posterior\n")
            for (x, y), v in zip(pts, lp):
                fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")


def _log_density(observations, own: NodeId, x: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Normalized log-density of ``observations`` for positions ``x`` of ``own``.

    Evaluated from the bearing angles directly (atan2 and cos), independently
    of the collapsed edge terms used on the sampling path.
    """
    x = np.atleast_2d(x)
    other = np.atleast_2d(other)
    out = np.zeros(np.broadcast_shapes(x.shape, other.shape)[0])
    for obs in observations:
        a, b = (x, other) if obs.from_ == own else (other, x)
        diff = b - a
        d = np.hypot(diff[:, 0], diff[:, 1])
        if isinstance(obs, DistanceObservation):
            out += -(obs.value - d) ** 2 / (2 * obs.sigma**2)
        else:
            theta = np.arctan2(diff[:, 1], diff[:, 0])
            out += np.where(d > 0, obs.kappa * np.cos(obs.angle - theta), -np.inf)
        out += observation_log_norm(obs)
    return out


def grid_posterior_oracle(graph: FactorGraph, grid: Optional[GridSpec] = None,
                          resolution: Optional[float] = None) -> OracleResult:
    """Normalized posterior of up to two targets on a regular grid.

    The grid defaults to the graph's prior box at 0.02 m for one target and
    0.1 m for two.  Returns per-target marginal log-densities, the discrete
    MMSE mean, the posterior spread ``sqrt(var_x + var_y)`` and the local
    maxima of each marginal whose density is at least half the global peak.
    """
    targets = tuple(graph.targets)
    if not 1 <= len(targets) <= 2:
        raise ValueError(f"grid oracle handles 1 or 2 targets, got {len(targets)}")
    if grid is None:
        if graph.prior is None:
            raise ValueError("a grid or a prior box is required")
        res = resolution or (0.02 if len(targets) == 1 else 0.1)
        grid = GridSpec(graph.prior, res)
    pts = grid.points()
    log_area = math.log(grid.cell_area)
    inside = np.ones(len(pts), dtype=bool)
    if graph.prior is not None:
        inside = LogFactor.box_prior(graph.prior).in_box(pts)

    ev = []
    for t in targets:
        v = np.zeros(len(pts))
        for a, observations in graph.evidence_observations[t].items():
            v += _log_density(observations, t, pts, np.asarray(graph.anchor_positions[a], dtype=float))
        v[~inside] = -np.inf
        ev.append(v)

    if len(targets) == 1:
        joint = ev[0]
        log_z = logsumexp(joint + log_area)
        joint = joint - log_z
        marginals = {targets[0]: joint.reshape(grid.shape)}
    else:
        t0, t1 = targets
        observations = graph.edge_observations(t0, t1)
        joint = np.empty((len(pts), len(pts)))
        for k in range(len(pts)):
            if ev[1][k] == -np.inf:
                joint[:, k] = -np.inf
                continue
            pair = _log_density(observations, t0, pts, pts[k])
            joint[:, k] = ev[0] + pair + ev[1][k]
        log_z = logsumexp(joint + 2 * log_area)
        joint -= log_z
        marginals = {t0: (logsumexp(joint, axis=1) + log_area).reshape(grid.shape),
                     t1: (logsumexp(joint, axis=0) + log_area).reshape(grid.shape)}

    mean, std, modes = {}, {}, {}
    for t, lm in marginals.items():
        p = np.exp(lm.ravel() + log_area)
        mu = p @ pts
        var = p @ ((pts - mu) ** 2)
        mean[t] = Position(float(mu[0]), float(mu[1]))
        std[t] = float(math.sqrt(var.sum()))
        modes[t] = _modes(lm, grid)
    return OracleResult(grid, targets, joint, marginals, mean, std, modes)


def _modes(log_density: np.ndarray, grid: GridSpec) -> List[Position]:
    finite = np.where(np.isfinite(log_density), log_density, -1e300)
    peak = finite.max()
    is_max = (finite == ndimage.maximum_filter(finite, size=3, mode="constant", cval=-np.inf))
    is_max &= finite >= peak - math.log(2.0)
    labels, n = ndimage.label(is_max, structure=np.ones((3, 3)))
    xs, ys = grid.axes()
    out = []
    for k in range(1, n + 1):
        ii, jj = np.nonzero(labels == k)
        best = np.argmax(finite[ii, jj])
        out.append(Position(float(xs[ii[best]]), float(ys[jj[best]])))
    return out
