"""Random-walk Metropolis-Hastings in the log domain, and von Mises draws."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np

from .factors import LogFactor, _evaluate
from .model import NodeId, wrap_angle

ADAPTATION_GAIN = 1.0
INIT_PROBES = 100


class SamplerInitializationError(RuntimeError):
    """No starting point with a finite log-target could be found."""


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 1000
    burn_in: int = 1000
    initial_step_std: float = 0.5
    target_acceptance: float = 0.25
    adaptation_window: int = 100
    rng_seed: int = 0
    thin: int = 3

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if not self.initial_step_std > 0:
            raise ValueError("initial_step_std must be positive")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.adaptation_window < 1:
            raise ValueError("adaptation_window must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    def with_step(self, step: float) -> "SamplerConfig":
        return replace(self, initial_step_std=step)


@dataclass
class ParticleSet:
    """Equally weighted samples of one node's belief."""

    owner: NodeId
    iteration: int
    particles: np.ndarray
    acceptance_rate: float = float("nan")
    final_step: float = float("nan")

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(self.particles)):
            raise ValueError(f"non-finite particles for node {self.owner!r}")

    def __len__(self) -> int:
        return len(self.particles)

    def mean(self) -> np.ndarray:
        return self.particles.mean(axis=0)

    def std(self) -> np.ndarray:
        return self.particles.std(axis=0)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``, e.g. ``(seed, node_index, iteration)``.

    Streams depend only on the key, so work keyed this way can run in any
    order or on any number of threads.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def adapt_step(current_step: float, recent_acceptance: float, target: float) -> float:
    """Multiplicative Robbins-Monro style update of the proposal scale."""
    if not current_step > 0:
        raise ValueError("step must be positive")
    return current_step * math.exp(ADAPTATION_GAIN * (recent_acceptance - target))


def mh_sample(log_target: Callable, init, config: SamplerConfig, rng: np.random.Generator,
              bounds=None, owner: NodeId = None, iteration: int = 0) -> ParticleSet:
    """Draw ``config.n_samples`` states of a random-walk MH chain.

    Proposals are isotropic Gaussian steps.  During burn-in the step scale is
    adapted once per ``adaptation_window`` steps towards
    ``config.target_acceptance``; afterwards it is frozen.  Every
    ``config.thin``-th state after burn-in is kept, and the reported
    acceptance rate covers all post-burn-in steps.

    Parameters
    ----------
    log_target : callable
        Unnormalized log-density of a 2D position.  A :class:`LogFactor`
        takes a compiled path with identical arithmetic.
    init : array-like, shape (2,)
        Starting state.
    config : SamplerConfig
    rng : numpy.random.Generator
    bounds : (xmin, xmax, ymin, ymax), optional
        Region probed uniformly when ``log_target(init)`` is ``-inf``.

    Raises
    ------
    SamplerInitializationError
        If ``log_target`` is ``-inf`` at ``init`` and at every probe.
    """
    x0 = np.asarray(init, dtype=float).copy()
    lp0 = float(log_target(x0))
    if not lp0 > -np.inf:
        x0, lp0 = _probe_init(log_target, rng, bounds)
    if math.isnan(lp0) or lp0 == np.inf:
        raise SamplerInitializationError(f"log-target is {lp0} at the initial state")

    total = config.burn_in + config.n_samples * config.thin
    normals = rng.standard_normal((total, 2))
    uniforms = rng.random(total)
    out = np.empty((config.n_samples, 2))
    args = (x0[0], x0[1], lp0, config.initial_step_std, normals, uniforms, config.burn_in,
            config.adaptation_window, config.target_acceptance, ADAPTATION_GAIN, config.thin, out)
    if isinstance(log_target, LogFactor):
        accepted, step = _chain_factor(*args, log_target.points, log_target.log_weights,
                                       log_target.offsets, log_target.params, log_target.box)
    else:
        accepted, step = _chain_python(log_target, *args)
    rate = accepted / (config.n_samples * config.thin)
    return ParticleSet(owner, iteration, out, rate, step)


def _probe_init(log_target, rng, bounds):
    if bounds is None:
        raise SamplerInitializationError("log-target is -inf at the initial state and no bounds to probe")
    xmin, xmax, ymin, ymax = bounds
    for _ in range(INIT_PROBES):
        x = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        lp = float(log_target(x))
        if lp > -np.inf:
            return x, lp
    raise SamplerInitializationError(f"log-target is -inf at {INIT_PROBES} probes over {tuple(bounds)}")


def _chain_python(log_target, x, y, lp, step, normals, uniforms, burn_in, window, target, gain, thin, out):
    # mirror of _chain_factor for arbitrary callables; keep both in sync
    accepted = 0
    win_acc = 0
    total = len(uniforms)
    for t in range(total):
        px = x + step * normals[t, 0]
        py = y + step * normals[t, 1]
        lp_new = float(log_target(np.array([px, py])))
        if math.isnan(lp_new):
            lp_new = -math.inf
        delta = min(0.0, lp_new - lp)
        ok = uniforms[t] < math.exp(delta)
        if ok:
            x, y, lp = px, py, lp_new
        if t < burn_in:
            win_acc += ok
            if (t + 1) % window == 0:
                step = step * math.exp(gain * (win_acc / window - target))
                win_acc = 0
        else:
            accepted += ok
            k = t - burn_in
            if (k + 1) % thin == 0:
                out[k // thin, 0] = x
                out[k // thin, 1] = y
    return accepted, step


@numba.njit(cache=True, nogil=True)
def _chain_factor(x, y, lp, step, normals, uniforms, burn_in, window, target, gain, thin, out,
                  points, log_weights, offsets, params, box):
    accepted = 0
    win_acc = 0
    total = uniforms.shape[0]
    for t in range(total):
        px = x + step * normals[t, 0]
        py = y + step * normals[t, 1]
        lp_new = _evaluate(px, py, points, log_weights, offsets, params, box)
        if math.isnan(lp_new):
            lp_new = -math.inf
        delta = min(0.0, lp_new - lp)
        ok = uniforms[t] < math.exp(delta)
        if ok:
            x = px
            y = py
            lp = lp_new
        if t < burn_in:
            if ok:
                win_acc += 1
            if (t + 1) % window == 0:
                step = step * math.exp(gain * (win_acc / window - target))
                win_acc = 0
        else:
            if ok:
                accepted += 1
            k = t - burn_in
            if (k + 1) % thin == 0:
                out[k // thin, 0] = x
                out[k // thin, 1] = y
    return accepted, step


def sample_von_mises(mean, kappa: float, rng: np.random.Generator, size=None):
    """von Mises draws by the Best-Fisher wrapped-Cauchy rejection scheme.

    ``kappa == 0`` gives the uniform distribution on the circle.  Output is
    wrapped to [-pi, pi).
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape))
    if kappa == 0:
        theta = rng.uniform(-np.pi, np.pi, n)
    else:
        theta = _best_fisher(kappa, n, rng)
    out = wrap_angle(np.asarray(mean, dtype=float) + theta.reshape(shape))
    return out


def _best_fisher(kappa, n, rng):
    if kappa > 1e6:
        # rejection constants lose precision; the normal limit is exact to O(1/kappa)
        return rng.standard_normal(n) / math.sqrt(kappa)
    if kappa < 1e-5:
        s = 1.0 / kappa + kappa
    else:
        tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
        rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
        s = (1.0 + rho * rho) / (2.0 * rho)
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        u1 = rng.random(todo.size)
        z = np.cos(np.pi * u1)
        w = (1.0 + s * z) / (s + z)
        y = kappa * (s - w)
        u2 = rng.random(todo.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = (y * (2.0 - y) - u2 > 0) | (np.log(y / u2) + 1.0 - y >= 0)
        u3 = rng.random(todo.size)
        angle = np.arccos(np.clip(w, -1.0, 1.0))
        angle = np.where(u3 < 0.5, -angle, angle)
        out[todo[accept]] = angle[accept]
        todo = todo[~accept]
    return out
