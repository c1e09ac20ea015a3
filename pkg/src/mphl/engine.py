"""Particle message passing over the localization factor graph.

One iteration of :func:`run_mphl`:

1. deliver the messages transmitted in the previous iteration;
2. every target that received something rebuilds the factors of its target
   neighbors' messages, forms its belief (local evidence plus incoming
   factors) and redraws N particles from it by Metropolis-Hastings, started
   from the best of its previous mean and the positions its neighbors'
   observations imply;
3. the schedule picks the transmitters: anchors always, targets once they
   have heard enough (``gamma`` in one iteration or ``gamma_total`` overall),
   until each has transmitted ``nu = nu_factor * diameter`` times;
4. each transmitting target broadcasts M of its particles, weighted per
   neighbor by that neighbor's latest factor evaluated at the particle.

Anchor messages carry only the anchor position, which is already part of the
receiver's local evidence; they count towards the schedule thresholds but add
no new factor.

Every random draw comes from a stream keyed by ``(seed, node, iteration)`` and
inboxes are processed in sender order, so results do not depend on how node
updates are distributed over threads.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .factors import LogFactor, combine, edge_params
from .model import NodeId, Observation, Position
from .netgraph import FactorGraph, Scenario, _sort_key, build_factor_graph, network_diameter
from .sampler import ParticleSet, SamplerConfig, mh_sample, stream

log = logging.getLogger(__name__)

SAMPLE_STREAM = 0
MESSAGE_STREAM = 1
INIT_STREAM = 2


class MessageValidationError(ValueError):
    pass


class ScheduleStarvationError(RuntimeError):
    def __init__(self, stuck):
        self.stuck = stuck
        super().__init__(f"no target ever joined the schedule; stuck targets: {stuck}")


@dataclass(frozen=True)
class Message:
    """Weighted particles sent from ``sender`` to ``receiver``.

    Weights are stored as logarithms; ``weights`` exponentiates them.
    """

    sender: NodeId
    receiver: NodeId
    iteration: int
    points: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if len(pts) == 0 or len(pts) != len(lw):
            raise MessageValidationError("a message needs one weight per entry and at least one entry")
        if not np.all(np.isfinite(lw)) or not np.all(np.isfinite(pts)):
            raise MessageValidationError(f"message {self.sender}->{self.receiver} has non-finite entries")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_weights(cls, sender, receiver, iteration, points, weights) -> "Message":
        weights = np.asarray(weights, dtype=float)
        if np.any(~(weights > 0)) or not np.all(np.isfinite(weights)):
            raise MessageValidationError("message weights must be finite and positive")
        return cls(sender, receiver, iteration, points, np.log(weights))

    @classmethod
    def anchor(cls, sender, receiver, iteration, position) -> "Message":
        return cls(sender, receiver, iteration, np.asarray(position, dtype=float)[None, :], np.zeros(1))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class NodeState:
    id: NodeId
    belief_particles: Optional[ParticleSet] = None
    inbox: List[Message] = field(default_factory=list)
    incoming_factors: Dict[NodeId, LogFactor] = field(default_factory=dict)
    received_last_iteration: int = 0
    received_total: int = 0
    transmissions_sent: int = 0
    active: bool = False
    step: float = float("nan")


@dataclass(frozen=True)
class ScheduleConfig:
    gamma: int = 3
    gamma_total: Optional[int] = None
    nu_factor: int = 3
    max_iterations: int = 50
    run_to_max: bool = False

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.gamma_total is None:
            object.__setattr__(self, "gamma_total", 2 * self.gamma)
        if self.gamma_total < self.gamma:
            raise ValueError("gamma_total must be >= gamma")
        if self.nu_factor < 1:
            raise ValueError("nu_factor must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def incoming_message_factor(msg: Message, edge_observations: Sequence[Observation],
                            receiver: NodeId = None) -> LogFactor:
    """Factor ``x -> log sum_k phi(x, p_k) / w_k`` built from one message."""
    if len(msg) == 0:
        raise MessageValidationError("empty message")
    receiver = msg.receiver if receiver is None else receiver
    return LogFactor.group(msg.points, edge_params(edge_observations, receiver), msg.log_weights)


def node_belief(evidence, incoming: Mapping[NodeId, Callable]) -> Callable:
    """Log-belief: evidence plus every incoming factor."""
    parts = [evidence] + [incoming[k] for k in sorted(incoming, key=_sort_key)]
    if all(isinstance(p, LogFactor) for p in parts):
        return combine(parts)
    return lambda x: sum(p(x) for p in parts)


def estimate_location(particles) -> Position:
    """Sample mean of a particle set."""
    pts = particles.particles if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=float)
    pts = pts.reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("cannot estimate a location from an empty particle set")
    m = pts.mean(axis=0)
    return Position(float(m[0]), float(m[1]))


def make_outgoing_messages(node: NodeState, neighbors: Sequence[NodeId], M: int,
                           rng: np.random.Generator, iteration: int = 0) -> List[Message]:
    """Subsample M particles and attach one weight vector per neighbor.

    The weight for neighbor j is the factor node received from j evaluated at
    each selected particle, so j can divide out its own earlier contribution.
    Neighbors that have not sent anything yet get unit weights.
    """
    ps = node.belief_particles
    if ps is None or len(ps) < M:
        have = 0 if ps is None else len(ps)
        raise ValueError(f"node {node.id!r} holds {have} particles, fewer than message size {M}")
    idx = rng.choice(len(ps), size=M, replace=False)
    points = ps.particles[idx]
    out = []
    for j in neighbors:
        factor = node.incoming_factors.get(j)
        logw = np.zeros(M) if factor is None else factor.evaluate_many(points)
        out.append(Message(node.id, j, iteration, points, logw))
    return out


def schedule_step(states: Mapping[NodeId, NodeState], anchors, config: ScheduleConfig, iteration: int,
                  nu: int) -> set:
    """Transmitters of ``iteration``; admits targets into the schedule as a side effect."""
    if iteration < 1:
        raise ValueError("iterations start at 1")
    transmit = set(anchors)
    if iteration == 1:
        return transmit
    for node_id, st in states.items():
        if (not st.active and st.belief_particles is not None
                and (st.received_last_iteration >= config.gamma or st.received_total >= config.gamma_total)):
            st.active = True
        if st.active and (config.run_to_max or st.transmissions_sent < nu):
            transmit.add(node_id)
    return transmit


@dataclass
class TraceRow:
    iteration: int
    node_id: NodeId
    est_x: float
    est_y: float
    belief_std_x: float
    belief_std_y: float
    active_flag: bool
    acceptance_rate: float


TRACE_COLUMNS = ["iteration", "node_id", "est_x", "est_y", "belief_std_x", "belief_std_y", "active_flag",
                 "acceptance_rate"]


@dataclass
class MPHLResult:
    estimates: Dict[NodeId, Position]
    particles: Dict[NodeId, ParticleSet]
    trace: List[TraceRow]
    estimate_history: Dict[int, Dict[NodeId, Position]]
    max_displacement: List[float]
    acceptance: List[tuple]
    iterations_run: int
    schedule_length: int
    schedule_complete: bool
    diameter: int
    nu: int
    messages_sent: int
    stuck: List[NodeId] = field(default_factory=list)

    def estimates_at(self, iteration: int) -> Dict[NodeId, Position]:
        """Estimates held after ``iteration`` (the last ones if the run stopped earlier)."""
        if iteration >= self.iterations_run:
            return self.estimate_history[self.iterations_run]
        return self.estimate_history[iteration]

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.trace:
                w.writerow([r.iteration, r.node_id, _fmt(r.est_x), _fmt(r.est_y), _fmt(r.belief_std_x),
                            _fmt(r.belief_std_y), int(r.active_flag), _fmt(r.acceptance_rate)])

    def summary(self, scenario: Scenario) -> dict:
        errors = {str(k): math.dist(v, scenario.nodes[k]) for k, v in self.estimates.items()}
        return {
            "estimates": {str(k): [v.x, v.y] for k, v in self.estimates.items()},
            "errors": errors,
            "avg_error": float(np.mean(list(errors.values()))) if errors else float("nan"),
            "iterations_run": self.iterations_run,
            "schedule_length": self.schedule_length,
            "schedule_complete": self.schedule_complete,
            "diameter": self.diameter,
            "nu": self.nu,
            "messages_sent": self.messages_sent,
            "stuck": [str(s) for s in self.stuck],
        }

    def write_summary_json(self, path, scenario: Scenario) -> None:
        Path(path).write_text(json.dumps(self.summary(scenario), indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def run_mphl(scenario: Scenario, graph: Optional[FactorGraph] = None,
             sampler_cfg: SamplerConfig = SamplerConfig(), schedule_cfg: ScheduleConfig = ScheduleConfig(),
             M: int = 50, rng_seed: Optional[int] = None, workers: int = 1) -> MPHLResult:
    """Run message passing on ``scenario`` until its schedule completes.

    Parameters
    ----------
    scenario : Scenario
        Provides the network graph (for the diameter) and anchor positions.
    graph : FactorGraph, optional
        Built from ``scenario`` with default settings when omitted.
    sampler_cfg, schedule_cfg : configs
        ``sampler_cfg.n_samples`` is the particle count N.
    M : int
        Message size; at most N.
    rng_seed : int, optional
        Master seed; defaults to ``sampler_cfg.rng_seed``.
    workers : int
        Threads used for the per-node sampling of one iteration.

    Returns
    -------
    MPHLResult
        Final sample-mean estimates, per-iteration traces and diagnostics.

    Raises
    ------
    DisconnectedGraphError
        If the network graph is not connected.
    ScheduleStarvationError
        If no target ever joins the transmission schedule.
    """
    if graph is None:
        graph = build_factor_graph(scenario)
    if not 1 <= M <= sampler_cfg.n_samples:
        raise ValueError(f"message size M={M} must lie in [1, N={sampler_cfg.n_samples}]")
    seed = sampler_cfg.rng_seed if rng_seed is None else rng_seed
    delta = network_diameter(scenario)
    nu = schedule_cfg.nu_factor * delta
    index = {n: k for k, n in enumerate(scenario.node_ids)}
    targets = list(graph.targets)
    anchors = list(graph.anchors)
    bounds = graph.prior if graph.prior is not None else scenario.default_prior()
    target_nbrs = {t: graph.target_neighbors(t) for t in targets}
    anchor_nbrs = {t: graph.anchor_neighbors(t) for t in targets}
    anchor_reach = {a: [t for t in targets if a in anchor_nbrs[t]] for a in anchors}
    states = {t: NodeState(t, step=sampler_cfg.initial_step_std) for t in targets}

    trace: List[TraceRow] = []
    history: Dict[int, Dict[NodeId, Position]] = {0: {}}
    displacement: List[float] = []
    acceptance: List[tuple] = []
    pending: Dict[NodeId, List[Message]] = {}
    messages_sent = 0
    schedule_length = 0
    complete = False
    stuck: List[NodeId] = []
    final_round = False
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def sample(t_id, iteration):
        st = states[t_id]
        belief = node_belief(graph.local_evidence[t_id], st.incoming_factors)
        if st.belief_particles is not None:
            init = st.belief_particles.mean()
        else:
            init = _first_init(scenario, anchor_nbrs[t_id], st.inbox)
            init = init + st.step * stream(seed, index[t_id], iteration, INIT_STREAM).standard_normal(2)
        init = best_start(belief, init)
        rng = stream(seed, index[t_id], iteration, SAMPLE_STREAM)
        return mh_sample(belief, init, sampler_cfg.with_step(st.step), rng, bounds=bounds,
                         owner=t_id, iteration=iteration)

    try:
        iteration = 0
        while iteration < schedule_cfg.max_iterations or final_round:
            iteration += 1
            for t_id in targets:
                st = states[t_id]
                st.inbox = sorted(pending.get(t_id, []), key=lambda m: _sort_key(m.sender))
                st.received_last_iteration = len(st.inbox)
                st.received_total += len(st.inbox)
                for msg in st.inbox:
                    if msg.sender in target_nbrs[t_id]:
                        st.incoming_factors[msg.sender] = incoming_message_factor(
                            msg, graph.edge_observations(t_id, msg.sender), t_id)
            receivers = [t for t in targets if states[t].received_last_iteration > 0]
            drawn = (pool.map(lambda t: sample(t, iteration), receivers) if pool
                     else [sample(t, iteration) for t in receivers])
            for t_id, ps in zip(receivers, drawn):
                states[t_id].belief_particles = ps
                states[t_id].step = ps.final_step
                acceptance.append((iteration, t_id, ps.acceptance_rate))

            pending = {}
            if final_round:
                transmitters = set()
            else:
                transmitters = schedule_step(states, anchors, schedule_cfg, iteration, nu)
            for a in anchors:
                if a in transmitters:
                    for t_id in anchor_reach[a]:
                        pending.setdefault(t_id, []).append(
                            Message.anchor(a, t_id, iteration, scenario.nodes[a]))
                        messages_sent += 1
            for t_id in targets:
                if t_id in transmitters:
                    rng = stream(seed, index[t_id], iteration, MESSAGE_STREAM)
                    for msg in make_outgoing_messages(states[t_id], target_nbrs[t_id], M, rng, iteration):
                        pending.setdefault(msg.receiver, []).append(msg)
                        messages_sent += 1
                    states[t_id].transmissions_sent += 1

            history[iteration] = {t: estimate_location(states[t].belief_particles)
                                  for t in targets if states[t].belief_particles is not None}
            prev = history[iteration - 1]
            moved = [math.dist(history[iteration][t], prev[t]) for t in history[iteration] if t in prev]
            displacement.append(max(moved) if moved else float("nan"))
            for t_id in targets:
                ps = states[t_id].belief_particles
                est = history[iteration].get(t_id)
                std = ps.std() if ps is not None else (math.nan, math.nan)
                trace.append(TraceRow(iteration, t_id, est.x if est else math.nan, est.y if est else math.nan,
                                      float(std[0]), float(std[1]), states[t_id].active,
                                      ps.acceptance_rate if ps is not None else math.nan))

            if final_round:
                break
            if schedule_cfg.run_to_max:
                schedule_length = iteration
                complete = all(states[t].active for t in targets)
                continue
            if all(states[t].active and states[t].transmissions_sent >= nu for t in targets):
                schedule_length = iteration
                complete = True
                final_round = True
                continue
            inactive = [t for t in targets if not states[t].active]
            finished = all(states[t].transmissions_sent >= nu for t in targets if states[t].active)
            if inactive and finished and not any(pending.get(t) for t in inactive):
                stuck = inactive
                schedule_length = iteration
                break
        else:
            schedule_length = schedule_length or iteration
    finally:
        if pool is not None:
            pool.shutdown()

    if not any(st.active for st in states.values()):
        raise ScheduleStarvationError([t for t in targets])
    if not stuck:
        stuck = [t for t in targets if not states[t].active]
    if stuck:
        log.warning("targets never joined the schedule: %s", stuck)
    particles = {t: states[t].belief_particles for t in targets if states[t].belief_particles is not None}
    return MPHLResult(
        estimates={t: estimate_location(ps) for t, ps in particles.items()},
        particles=particles,
        trace=trace,
        estimate_history=history,
        max_displacement=displacement,
        acceptance=acceptance,
        iterations_run=iteration,
        schedule_length=schedule_length,
        schedule_complete=complete,
        diameter=delta,
        nu=nu,
        messages_sent=messages_sent,
        stuck=stuck,
    )


def best_start(belief, init) -> np.ndarray:
    """Highest-scoring of ``init`` and the positions the belief's groups imply.

    The chain itself is unchanged; only its starting point moves, so a sharp
    belief is entered near its dominant mode rather than wherever the default
    start happens to lie.  Ties keep ``init``.
    """
    init = np.asarray(init, dtype=float)
    if not isinstance(belief, LogFactor):
        return init
    cands = np.vstack([init[None, :], belief.implied_points()])
    vals = belief.evaluate_many(cands)
    vals[np.isnan(vals)] = -np.inf
    k = int(np.argmax(vals))
    return init if vals[k] == -np.inf else cands[k]


def _first_init(scenario: Scenario, anchor_neighbors, inbox) -> np.ndarray:
    if anchor_neighbors:
        pts = np.array([scenario.nodes[a] for a in anchor_neighbors])
    else:
        pts = np.concatenate([m.points for m in inbox])
    return pts.mean(axis=0)
