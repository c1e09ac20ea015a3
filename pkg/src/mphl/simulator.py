"""Random network geometry and noisy range/bearing synthesis."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Tuple

import numpy as np

from .model import DirectionObservation, DistanceObservation, azimuth, euclidean_distance, kappa_from_std, wrap_angle
from .netgraph import Scenario, connected_components
from .sampler import sample_von_mises

MAX_REJECTIONS = 100_000
MAX_REGENERATIONS = 1000
NOISE_FREE_SIGMA = 0.01
NOISE_FREE_ZETA = math.radians(0.5)


class InfeasibleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    """Random deployment in the spirit of a 10-node, 4-anchor, 5 m x 10 m test field.

    ``connectivity_radius=None`` connects every pair.
    """

    n_nodes: int = 10
    n_anchors: int = 4
    width: float = 5.0
    height: float = 10.0
    min_separation: float = 2.0
    connectivity_radius: Optional[float] = 6.0
    distance: bool = True
    direction: bool = True
    sigma_distance: float = 0.2
    zeta_direction: float = math.radians(5.0)
    reciprocal: bool = True
    noise_free: bool = False
    direction_noise: str = "von_mises"
    rng_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_anchors < self.n_nodes:
            raise ValueError("need 1 <= n_anchors < n_nodes")
        if not self.min_separation > 0:
            raise ValueError("min_separation must be positive")
        if self.connectivity_radius is not None and not self.connectivity_radius > self.min_separation:
            raise ValueError("connectivity_radius must exceed min_separation")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("area must have positive width and height")
        if not self.noise_free and (self.sigma_distance <= 0 or self.zeta_direction <= 0):
            raise ValueError("noise levels must be positive (use noise_free for exact observations)")
        if self.direction_noise not in ("von_mises", "wrapped_normal"):
            raise ValueError(f"unknown direction_noise {self.direction_noise!r}")

    @property
    def area(self) -> Tuple[float, float, float, float]:
        return (0.0, self.width, 0.0, self.height)

    @property
    def kappa(self) -> float:
        return kappa_from_std(self.zeta_direction if self.zeta_direction > 0 else NOISE_FREE_ZETA)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**doc)


def place_nodes(config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions with pairwise separation >= ``min_separation``."""
    pts: List[np.ndarray] = []
    rejections = 0
    while len(pts) < config.n_nodes:
        p = rng.uniform((0.0, 0.0), (config.width, config.height))
        if all(math.dist(p, q) >= config.min_separation for q in pts):
            pts.append(p)
            continue
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise InfeasibleConfigError(
                f"could not place {config.n_nodes} nodes {config.min_separation} m apart in "
                f"{config.width} x {config.height} m after {MAX_REJECTIONS} rejections")
    return np.array(pts)


def connectivity_edges(positions: np.ndarray, radius: Optional[float]) -> List[Tuple[int, int]]:
    n = len(positions)
    return [(i, j) for i in range(n) for j in range(i + 1, n)
            if radius is None or math.dist(positions[i], positions[j]) < radius]


def generate_scenario(config: GeneratorConfig, rng: Optional[np.random.Generator] = None) -> Scenario:
    """Draw a connected random network and its observations.

    Disconnected draws are discarded and redrawn from scratch.
    """
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    for _ in range(MAX_REGENERATIONS):
        pos = place_nodes(config, rng)
        edges = connectivity_edges(pos, config.connectivity_radius)
        anchors = sorted(rng.choice(config.n_nodes, size=config.n_anchors, replace=False).tolist())
        nodes = {i: tuple(p) for i, p in enumerate(pos)}
        skeleton = Scenario(nodes, anchors, [DistanceObservation(i, j, 1.0, 1.0) for i, j in edges])
        if len(connected_components(skeleton)) == 1:
            break
    else:
        raise InfeasibleConfigError("could not draw a connected network")
    dist, dirs = synthesize_observations(nodes, edges, config, rng)
    return Scenario(nodes, anchors, dist, dirs, area=config.area)


def synthesize_observations(nodes, edges, config: GeneratorConfig, rng: np.random.Generator):
    """Noisy range and bearing observations for every edge.

    With ``reciprocal`` the reverse observation restates the forward one
    (same range, bearing rotated by pi); otherwise each end draws its own
    noise.  ``noise_free`` keeps exact values but records a small working
    noise level, since the factors need a positive spread.
    """
    if config.noise_free:
        sigma = config.sigma_distance if config.sigma_distance > 0 else NOISE_FREE_SIGMA
    else:
        sigma = config.sigma_distance
    kappa = config.kappa
    zeta = config.zeta_direction
    dist: List[DistanceObservation] = []
    dirs: List[DirectionObservation] = []

    def noisy_range(d):
        return d if config.noise_free else d + sigma * rng.standard_normal()

    def noisy_bearing(theta):
        if config.noise_free:
            return theta
        if config.direction_noise == "wrapped_normal":
            return wrap_angle(theta + zeta * rng.standard_normal())
        return float(sample_von_mises(theta, kappa, rng))

    for i, j in edges:
        xi, xj = nodes[i], nodes[j]
        if config.distance:
            r = noisy_range(euclidean_distance(xi, xj))
            dist.append(DistanceObservation(i, j, r, sigma))
            r_back = r if config.reciprocal else noisy_range(euclidean_distance(xi, xj))
            dist.append(DistanceObservation(j, i, r_back, sigma))
        if config.direction:
            a = noisy_bearing(azimuth(xi, xj))
            dirs.append(DirectionObservation(i, j, a, kappa))
            a_back = wrap_angle(a + math.pi) if config.reciprocal else noisy_bearing(azimuth(xj, xi))
            dirs.append(DirectionObservation(j, i, a_back, kappa))
    return dist, dirs


def renoise(scenario: Scenario, config: GeneratorConfig, rng: np.random.Generator) -> Scenario:
    """Same geometry and edges, fresh observation noise."""
    edges = scenario.edges()
    dist, dirs = synthesize_observations(scenario.nodes, edges, config, rng)
    return Scenario(dict(scenario.nodes), scenario.anchors, dist, dirs, area=scenario.area)
