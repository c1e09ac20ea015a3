"""Geometry and log-domain likelihood kernels for distance/direction data.

All factor functions return log-densities up to an additive constant that
does not depend on the node positions.  The Gaussian range factor is

    -(r - ||x_i - x_j||)^2 / (2 sigma^2)

and the von Mises bearing factor is

    kappa * cos(alpha - azimuth(x_i, x_j)) = kappa * u^T (x_j - x_i) / ||x_j - x_i||

with ``u = (cos alpha, sin alpha)``.  Direction observations are oriented:
``angle`` is measured at ``from_`` and points towards ``to``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np
from scipy import special

NodeId = Union[int, str]


class Position(NamedTuple):
    """A point in the plane, meters."""

    x: float
    y: float


class UndefinedDirectionError(ValueError):
    """Raised when a bearing is requested between coincident points."""


class MissingPositionError(KeyError):
    """Raised when an observation references a node without a position."""


def wrap_angle(theta):
    """Map an angle (or array of angles) onto the half-open interval [-pi, pi)."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    # mod can round up to exactly 2*pi for inputs just below -pi
    wrapped = np.where(wrapped >= np.pi, wrapped - 2.0 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class DistanceObservation:
    """Range estimate ``value`` taken at ``from_`` towards ``to``."""

    from_: NodeId
    to: NodeId
    value: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.from_ == self.to:
            raise ValueError(f"self-observation on node {self.from_!r}")
        if not math.isfinite(self.value):
            raise ValueError("distance value must be finite")

    @property
    def pair(self) -> frozenset:
        return frozenset((self.from_, self.to))


@dataclass(frozen=True)
class DirectionObservation:
    """Absolute bearing ``angle`` (radians) of ``to`` as seen from ``from_``."""

    from_: NodeId
    to: NodeId
    angle: float
    kappa: float

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if self.from_ == self.to:
            raise ValueError(f"self-observation on node {self.from_!r}")
        if not math.isfinite(self.angle):
            raise ValueError("direction angle must be finite")
        object.__setattr__(self, "angle", wrap_angle(self.angle))

    @property
    def pair(self) -> frozenset:
        return frozenset((self.from_, self.to))


Observation = Union[DistanceObservation, DirectionObservation]


def kappa_from_std(zeta: float) -> float:
    """Concentration for an angular standard deviation ``zeta`` (radians)."""
    return 1.0 / zeta**2


def euclidean_distance(a, b) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def azimuth(a, b) -> float:
    """Angle of the vector ``b - a`` from the +x axis, in [-pi, pi)."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    if dx == 0 and dy == 0:
        raise UndefinedDirectionError(f"coincident points {tuple(a)}")
    return wrap_angle(math.atan2(dy, dx))


def log_distance_factor(xi, xj, obs: DistanceObservation) -> float:
    resid = obs.value - euclidean_distance(xi, xj)
    return -(resid * resid) / (2.0 * obs.sigma**2)


def log_direction_factor(xi, xj, obs: DirectionObservation) -> float:
    """von Mises log-factor with ``xi`` at the observing end."""
    if obs.kappa == 0:
        return 0.0
    return obs.kappa * math.cos(obs.angle - azimuth(xi, xj))


def log_pairwise_factor(xi, xj, edge_observations: Iterable[Observation], first: NodeId | None = None) -> float:
    """Sum of the range and bearing log-factors observed on one edge.

    Parameters
    ----------
    xi, xj : array-like
        Positions of the two endpoints.
    edge_observations : iterable of observations
        Every observation must involve the same unordered node pair.
    first : node id, optional
        Identity of the node located at ``xi``.  Observations taken at the
        other end are evaluated with the endpoints swapped.  When omitted all
        observations are assumed to be taken at ``xi``.

    Returns
    -------
    float
        ``0.0`` for an empty observation list.
    """
    total = 0.0
    pair = None
    for obs in edge_observations:
        if pair is None:
            pair = obs.pair
        elif obs.pair != pair:
            raise ValueError(f"observation {obs} does not belong to edge {set(pair)}")
        a, b = (xi, xj) if first is None or obs.from_ == first else (xj, xi)
        if isinstance(obs, DistanceObservation):
            total += log_distance_factor(a, b, obs)
        else:
            total += log_direction_factor(a, b, obs)
    return total


def log_likelihood(positions: Mapping[NodeId, Sequence[float]], observations: Iterable[Observation]) -> float:
    """Joint log-likelihood of all observations, up to an additive constant."""
    total = 0.0
    for obs in observations:
        for node in (obs.from_, obs.to):
            if node not in positions:
                raise MissingPositionError(f"no position for node {node!r} referenced by {obs}")
        total += log_pairwise_factor(positions[obs.from_], positions[obs.to], [obs])
    return total


def log_bessel_i0(kappa):
    """log I0(kappa) for kappa >= 0, via the exponentially scaled Bessel function."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise ValueError("kappa must be non-negative")
    out = np.log(special.i0e(kappa)) + kappa
    return float(out) if out.ndim == 0 else out


def log_distance_density(xi, xj, obs: DistanceObservation) -> float:
    """Normalized Gaussian range log-density."""
    return log_distance_factor(xi, xj, obs) - 0.5 * math.log(2.0 * math.pi * obs.sigma**2)


def log_direction_density(xi, xj, obs: DirectionObservation) -> float:
    """Normalized von Mises bearing log-density."""
    return log_direction_factor(xi, xj, obs) - math.log(2.0 * math.pi) - log_bessel_i0(obs.kappa)


def observation_log_norm(obs: Observation) -> float:
    """The additive constant dropped by the unnormalized factor of ``obs``."""
    if isinstance(obs, DistanceObservation):
        return -0.5 * math.log(2.0 * math.pi * obs.sigma**2)
    return -math.log(2.0 * math.pi) - log_bessel_i0(obs.kappa)
