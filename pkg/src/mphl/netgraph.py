"""Scenario container, factor-graph construction and graph utilities."""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .factors import LogFactor, combine, edge_params
from .model import (DirectionObservation, DistanceObservation, NodeId, Observation, Position,
                    wrap_angle)

log = logging.getLogger(__name__)

PRIOR_INFLATION = 0.2
RECIPROCAL_ATOL = 1e-9


class ScenarioError(ValueError):
    """A scenario violates its structural invariants."""


class DisconnectedGraphError(ScenarioError):
    def __init__(self, components):
        self.components = components
        desc = "; ".join("{" + ", ".join(map(str, sorted(c, key=_sort_key))) + "}" for c in components)
        super().__init__(f"network graph is disconnected into {len(components)} components: {desc}")


def _sort_key(node):
    return (isinstance(node, str), node)


@dataclass
class Scenario:
    """Ground-truth geometry plus the observation sets of one network."""

    nodes: Dict[NodeId, Position]
    anchors: FrozenSet[NodeId]
    distance_observations: List[DistanceObservation] = field(default_factory=list)
    direction_observations: List[DirectionObservation] = field(default_factory=list)
    area: Optional[Tuple[float, float, float, float]] = None

    def __post_init__(self):
        self.nodes = {k: Position(float(v[0]), float(v[1])) for k, v in self.nodes.items()}
        self.anchors = frozenset(self.anchors)
        self.validate()

    def validate(self):
        if not self.anchors:
            raise ScenarioError("scenario needs at least one anchor")
        missing = self.anchors - set(self.nodes)
        if missing:
            raise ScenarioError(f"anchors without positions: {sorted(missing, key=_sort_key)}")
        for obs in self.observations:
            for end in (obs.from_, obs.to):
                if end not in self.nodes:
                    raise ScenarioError(f"observation {obs} references unknown node {end!r}")
        for p in self.nodes.values():
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise ScenarioError("node positions must be finite")

    @property
    def observations(self) -> List[Observation]:
        return [*self.distance_observations, *self.direction_observations]

    @property
    def node_ids(self) -> List[NodeId]:
        return sorted(self.nodes, key=_sort_key)

    @property
    def targets(self) -> List[NodeId]:
        return [n for n in self.node_ids if n not in self.anchors]

    def adjacency(self) -> Dict[NodeId, set]:
        adj = {n: set() for n in self.nodes}
        for obs in self.observations:
            adj[obs.from_].add(obs.to)
            adj[obs.to].add(obs.from_)
        return adj

    def edges(self) -> List[Tuple[NodeId, NodeId]]:
        pairs = {tuple(sorted(obs.pair, key=_sort_key)) for obs in self.observations}
        return sorted(pairs, key=lambda e: (_sort_key(e[0]), _sort_key(e[1])))

    def deployment_bounds(self) -> Tuple[float, float, float, float]:
        if self.area is not None:
            return tuple(self.area)
        xy = np.array(list(self.nodes.values()))
        return (xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max())

    def default_prior(self) -> Tuple[float, float, float, float]:
        """Deployment box inflated by 20% about its center."""
        return inflate_box(self.deployment_bounds(), PRIOR_INFLATION)

    def filtered(self, distance: bool = True, direction: bool = True) -> "Scenario":
        """Copy keeping only the selected modalities."""
        return Scenario(dict(self.nodes), self.anchors,
                        list(self.distance_observations) if distance else [],
                        list(self.direction_observations) if direction else [],
                        self.area)

    # -- JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "nodes": {str(k): [v.x, v.y] for k, v in sorted(self.nodes.items(), key=lambda kv: _sort_key(kv[0]))},
            "anchors": [a for a in sorted(self.anchors, key=_sort_key)],
            "distance_obs": [{"from": o.from_, "to": o.to, "value": o.value, "sigma": o.sigma}
                             for o in self.distance_observations],
            "direction_obs": [{"from": o.from_, "to": o.to, "angle_rad": o.angle,
                               "kappa": o.kappa} for o in self.direction_observations],
        }
        if self.area is not None:
            doc["area"] = list(self.area)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Scenario":
        try:
            nodes = {_parse_id(k): v for k, v in doc["nodes"].items()}
            anchors = [_parse_id(a) for a in doc["anchors"]]
            dist = [DistanceObservation(_parse_id(o["from"]), _parse_id(o["to"]), float(o["value"]), float(o["sigma"]))
                    for o in doc.get("distance_obs", [])]
            dirs = [DirectionObservation(_parse_id(o["from"]), _parse_id(o["to"]), float(o["angle_rad"]),
                                         float(o["kappa"])) for o in doc.get("direction_obs", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario document: {exc}") from exc
        area = doc.get("area")
        return cls(nodes, anchors, dist, dirs, tuple(area) if area is not None else None)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _parse_id(key):
    if isinstance(key, str) and key.lstrip("-").isdigit():
        return int(key)
    return key


def inflate_box(bounds, fraction: float):
    xmin, xmax, ymin, ymax = bounds
    cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2
    hw, hh = (xmax - xmin) / 2 * (1 + fraction), (ymax - ymin) / 2 * (1 + fraction)
    return (cx - hw, cx + hw, cy - hh, cy + hh)


def is_reciprocal_copy(obs: Observation, other: Observation) -> bool:
    """True when ``obs`` restates ``other`` as seen from the opposite end."""
    if type(obs) is not type(other) or obs.from_ != other.to or obs.to != other.from_:
        return False
    if isinstance(obs, DistanceObservation):
        return obs.value == other.value and obs.sigma == other.sigma
    return obs.kappa == other.kappa and abs(wrap_angle(obs.angle - other.angle - math.pi)) <= RECIPROCAL_ATOL


@dataclass(frozen=True)
class FactorGraph:
    """Pairwise MRF over the target positions.

    ``edges`` maps each unordered target pair to its observations;
    ``evidence_observations`` lists the anchor observations folded into each
    target's local evidence.  ``mirrored`` holds reciprocal restatements of
    observations already in the graph (not evaluated twice) and ``dropped``
    the anchor-anchor observations.
    """

    targets: Tuple[NodeId, ...]
    anchors: Tuple[NodeId, ...]
    anchor_positions: Mapping[NodeId, Position]
    edges: Mapping[FrozenSet, Tuple[Observation, ...]]
    evidence_observations: Mapping[NodeId, Mapping[NodeId, Tuple[Observation, ...]]]
    local_evidence: Mapping[NodeId, LogFactor]
    prior: Optional[Tuple[float, float, float, float]]
    mirrored: Tuple[Observation, ...] = ()
    dropped: Tuple[Observation, ...] = ()

    def edge_observations(self, i: NodeId, j: NodeId) -> Tuple[Observation, ...]:
        return self.edges.get(frozenset((i, j)), ())

    def target_neighbors(self, i: NodeId) -> List[NodeId]:
        out = [next(iter(e - {i})) for e in self.edges if i in e]
        return sorted(out, key=_sort_key)

    def anchor_neighbors(self, i: NodeId) -> List[NodeId]:
        return sorted(self.evidence_observations.get(i, {}), key=_sort_key)

    def pairwise_factor(self, receiver: NodeId, sender: NodeId, sender_points, log_weights=None) -> LogFactor:
        """Log-factor of the receiver's position induced by points of the sender."""
        params = edge_params(self.edge_observations(receiver, sender), receiver)
        return LogFactor.group(sender_points, params, log_weights)

    def log_posterior(self, positions: Mapping[NodeId, Sequence[float]]) -> float:
        """Unnormalized joint log-posterior of all target positions."""
        total = 0.0
        for t in self.targets:
            total += self.local_evidence[t](np.asarray(positions[t], dtype=float))
        for pair, observations in self.edges.items():
            i, j = sorted(pair, key=_sort_key)
            params = edge_params(observations, i)
            total += LogFactor.group(np.asarray(positions[j], dtype=float), params)(np.asarray(positions[i], float))
        return total


def build_factor_graph(scenario: Scenario, prior="default", dedupe_reciprocal: bool = True) -> FactorGraph:
    """Fold anchor observations into local evidence and keep target pairs as edges.

    Parameters
    ----------
    prior : "default", None or (xmin, xmax, ymin, ymax)
        Uniform box prior added to every target's evidence.  ``"default"``
        uses the deployment box inflated by 20%; ``None`` disables it.
    dedupe_reciprocal : bool
        Reciprocal restatements (``r_ji == r_ij``, ``alpha_ji == alpha_ij + pi``)
        carry no new information; they are kept aside in ``mirrored``
        instead of being counted twice.
    """
    if isinstance(prior, str):
        if prior != "default":
            raise ValueError(f"unknown prior {prior!r}")
        prior = scenario.default_prior()
    anchors = scenario.anchors
    targets = tuple(scenario.targets)
    edges: Dict[FrozenSet, List[Observation]] = {}
    evidence: Dict[NodeId, Dict[NodeId, List[Observation]]] = {t: {} for t in targets}
    mirrored, dropped = [], []

    for obs in scenario.observations:
        a_from, a_to = obs.from_ in anchors, obs.to in anchors
        if a_from and a_to:
            dropped.append(obs)
            continue
        if a_from or a_to:
            target, anchor = (obs.to, obs.from_) if a_from else (obs.from_, obs.to)
            bucket = evidence[target].setdefault(anchor, [])
        else:
            bucket = edges.setdefault(obs.pair, [])
        if dedupe_reciprocal and any(is_reciprocal_copy(obs, o) for o in bucket):
            mirrored.append(obs)
        else:
            bucket.append(obs)
    if dropped:
        log.warning("ignoring %d anchor-anchor observations", len(dropped))

    local = {}
    for t in targets:
        parts = []
        for a in sorted(evidence[t], key=_sort_key):
            params = edge_params(evidence[t][a], t)
            parts.append(LogFactor.group(np.asarray(scenario.nodes[a]), params))
        if prior is not None:
            parts.append(LogFactor.box_prior(prior))
        local[t] = combine(parts)

    return FactorGraph(
        targets=targets,
        anchors=tuple(sorted(anchors, key=_sort_key)),
        anchor_positions={a: scenario.nodes[a] for a in anchors},
        edges={k: tuple(v) for k, v in edges.items()},
        evidence_observations={t: {a: tuple(o) for a, o in ev.items()} for t, ev in evidence.items()},
        local_evidence=local,
        prior=None if prior is None else tuple(float(v) for v in prior),
        mirrored=tuple(mirrored),
        dropped=tuple(dropped),
    )


def neighbors(graph, i: NodeId) -> set:
    """Nodes sharing at least one observation with ``i``."""
    if isinstance(graph, Scenario):
        adj = graph.adjacency()
        if i not in adj:
            raise KeyError(f"unknown node {i!r}")
        return adj[i]
    if i in graph.anchors:
        return {t for t in graph.targets if i in graph.evidence_observations[t]}
    if i not in graph.targets:
        raise KeyError(f"unknown node {i!r}")
    return set(graph.target_neighbors(i)) | set(graph.anchor_neighbors(i))


def connected_components(scenario: Scenario) -> List[set]:
    adj = scenario.adjacency()
    seen, comps = set(), []
    for start in scenario.node_ids:
        if start in seen:
            continue
        comp = set(_bfs_hops(adj, start))
        seen |= comp
        comps.append(comp)
    return comps


def _bfs_hops(adj, start) -> Dict[NodeId, int]:
    hops = {start: 0}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in hops:
                hops[v] = hops[u] + 1
                queue.append(v)
    return hops


def network_diameter(scenario: Scenario) -> int:
    """Largest shortest-path hop count between any two nodes."""
    adj = scenario.adjacency()
    best = 0
    for start in scenario.node_ids:
        hops = _bfs_hops(adj, start)
        if len(hops) != len(adj):
            raise DisconnectedGraphError(connected_components(scenario))
        best = max(best, max(hops.values()))
    return best


@dataclass
class TargetReport:
    anchor_links: int
    total_links: int
    distance_links: int
    direction_links: int
    hybrid_links: int
    flags: List[str] = field(default_factory=list)


@dataclass
class ConnectivityReport:
    targets: Dict[NodeId, TargetReport]
    components: List[set]

    @property
    def disconnected(self) -> bool:
        return len(self.components) > 1

    @property
    def flagged(self) -> Dict[NodeId, List[str]]:
        return {t: r.flags for t, r in self.targets.items() if r.flags}

    def format(self) -> str:
        lines = [f"{'target':>8} {'anchors':>7} {'links':>5} {'dist':>4} {'dir':>4} {'both':>4}  flags"]
        for t, r in self.targets.items():
            lines.append(f"{str(t):>8} {r.anchor_links:>7} {r.total_links:>5} {r.distance_links:>4} "
                         f"{r.direction_links:>4} {r.hybrid_links:>4}  {', '.join(r.flags)}")
        if self.disconnected:
            lines.append(f"graph is disconnected: {len(self.components)} components")
        return "\n".join(lines)


def connectivity_report(scenario: Scenario) -> ConnectivityReport:
    """Per-target link counts with warnings for weakly constrained targets.

    A target is flagged ``ambiguous`` unless its own links meet one of the
    single-node identifiability patterns: a neighbor observed with both
    modalities, three range links, two bearing links, or two ranges plus a
    bearing.  Targets with no path to an anchor are flagged ``disconnected``.
    """
    comps = connected_components(scenario)
    anchored = set().union(*(c for c in comps if c & scenario.anchors)) if comps else set()
    per_pair: Dict[NodeId, Dict[NodeId, set]] = {t: {} for t in scenario.targets}
    for obs in scenario.observations:
        kind = "distance" if isinstance(obs, DistanceObservation) else "direction"
        for me, other in ((obs.from_, obs.to), (obs.to, obs.from_)):
            if me in per_pair:
                per_pair[me].setdefault(other, set()).add(kind)
    reports = {}
    for t, links in per_pair.items():
        n_dist = sum("distance" in k for k in links.values())
        n_dir = sum("direction" in k for k in links.values())
        n_both = sum(len(k) == 2 for k in links.values())
        rep = TargetReport(
            anchor_links=sum(o in scenario.anchors for o in links),
            total_links=len(links), distance_links=n_dist, direction_links=n_dir, hybrid_links=n_both)
        if t not in anchored:
            rep.flags.append("disconnected")
        if not (n_both >= 1 or n_dist >= 3 or n_dir >= 2 or (n_dist >= 2 and n_dir >= 1)):
            rep.flags.append("ambiguous")
        reports[t] = rep
    return ConnectivityReport(reports, comps)
