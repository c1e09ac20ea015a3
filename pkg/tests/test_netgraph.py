import math

import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall

from mphl.model import DirectionObservation, DistanceObservation, azimuth, log_likelihood
from mphl.netgraph import (
    DisconnectedGraphError,
    Scenario,
    ScenarioError,
    build_factor_graph,
    connected_components,
    connectivity_report,
    inflate_box,
    network_diameter,
    neighbors,
)
from mphl.simulator import GeneratorConfig, generate_scenario


def line_scenario(n=4):
    nodes = {i: (float(i), 0.0) for i in range(n)}
    dist = [DistanceObservation(i, i + 1, 1.0, 0.1) for i in range(n - 1)]
    return Scenario(nodes, [0], dist)


def hybrid_pair():
    nodes = {"a": (0.0, 0.0), "b": (3.0, 4.0), "t": (1.0, 2.0), "u": (4.0, 1.0)}
    obs_d = [DistanceObservation("a", "t", 2.3, 0.2), DistanceObservation("t", "a", 2.3, 0.2),
             DistanceObservation("t", "u", 3.1, 0.2), DistanceObservation("u", "b", 3.0, 0.2)]
    obs_a = [DirectionObservation("t", "u", 0.1, 50.0), DirectionObservation("u", "t", 0.1 + math.pi, 50.0),
             DirectionObservation("b", "u", -1.2, 30.0), DirectionObservation("a", "b", 0.9, 30.0)]
    return Scenario(nodes, ["a", "b"], obs_d, obs_a)


def floyd_diameter(s):
    ids = s.node_ids
    idx = {n: k for k, n in enumerate(ids)}
    W = np.zeros((len(ids), len(ids)))
    for i, j in s.edges():
        W[idx[i], idx[j]] = W[idx[j], idx[i]] = 1
    D = floyd_warshall(W, directed=False, unweighted=True)
    return int(D.max())


def test_line_diameter():
    assert network_diameter(line_scenario(5)) == 4


@pytest.mark.parametrize("seed", range(20))
def test_diameter_matches_floyd_warshall(seed):
    s = generate_scenario(GeneratorConfig(rng_seed=seed, connectivity_radius=3.5, n_nodes=8, n_anchors=2,
                                          min_separation=1.0))
    assert network_diameter(s) == floyd_diameter(s)


def test_disconnected_diameter_raises():
    s = Scenario({0: (0, 0), 1: (1, 0), 2: (5, 5), 3: (6, 5)}, [0],
                 [DistanceObservation(0, 1, 1, 1), DistanceObservation(2, 3, 1, 1)])
    with pytest.raises(DisconnectedGraphError) as exc:
        network_diameter(s)
    assert len(exc.value.components) == 2
    assert len(connected_components(s)) == 2
    rep = connectivity_report(s)
    assert rep.disconnected
    assert "disconnected" in rep.flagged[2]


def test_validation():
    with pytest.raises(ScenarioError):
        Scenario({0: (0, 0)}, [])
    with pytest.raises(ScenarioError):
        Scenario({0: (0, 0)}, [1])
    with pytest.raises(ScenarioError):
        Scenario({0: (0, 0), 1: (1, 1)}, [0], [DistanceObservation(0, 2, 1, 1)])


def test_json_round_trip(tmp_path):
    s = hybrid_pair()
    path = tmp_path / "s.json"
    s.save(path)
    back = Scenario.load(path)
    assert back.nodes == s.nodes
    assert back.anchors == s.anchors
    assert back.distance_observations == s.distance_observations
    assert back.direction_observations == s.direction_observations
    g = generate_scenario(GeneratorConfig(rng_seed=3))
    g.save(path)
    again = Scenario.load(path)
    assert again.area == g.area
    assert again.to_dict() == g.to_dict()


def test_malformed_document():
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"nodes": {"0": [0, 0]}})


def test_graph_structure_and_dedupe():
    g = build_factor_graph(hybrid_pair())
    assert g.targets == ("t", "u")
    assert g.anchors == ("a", "b")
    assert set(g.edges) == {frozenset(("t", "u"))}
    assert len(g.edge_observations("u", "t")) == 2  # reciprocal bearing folded into the forward one
    assert len(g.mirrored) == 2
    assert len(g.dropped) == 1
    assert g.anchor_neighbors("t") == ["a"]
    assert g.target_neighbors("t") == ["u"]
    assert neighbors(g, "u") == {"t", "b"}
    assert neighbors(g, "a") == {"t"}
    assert neighbors(hybrid_pair(), "a") == {"t", "b"}


def test_log_posterior_equals_likelihood_of_unique_observations():
    s = hybrid_pair()
    g = build_factor_graph(s, prior=None)
    unique = [o for o in s.observations if o not in g.mirrored and o not in g.dropped]
    rng = np.random.default_rng(0)
    for _ in range(10):
        pos = dict(s.nodes)
        pos["t"] = tuple(rng.uniform(-2, 6, 2))
        pos["u"] = tuple(rng.uniform(-2, 6, 2))
        want = log_likelihood(pos, unique)
        assert g.log_posterior(pos) == pytest.approx(want, rel=1e-10, abs=1e-9)


def test_no_dedupe_counts_twice():
    s = hybrid_pair()
    g = build_factor_graph(s, prior=None, dedupe_reciprocal=False)
    assert len(g.edge_observations("t", "u")) == 3
    assert not g.mirrored


def test_default_prior_box():
    s = hybrid_pair()
    assert s.default_prior() == pytest.approx(inflate_box((0.0, 4.0, 0.0, 4.0), 0.2))
    g = build_factor_graph(s)
    assert g.local_evidence["t"]((100.0, 100.0)) == -np.inf
    assert inflate_box((0, 10, 0, 2), 0.2) == pytest.approx((-1, 11, -0.2, 2.2))


def test_filtered_modalities():
    s = hybrid_pair()
    assert not s.filtered(direction=False).direction_observations
    assert not s.filtered(distance=False).distance_observations
    assert s.filtered().observations == s.observations


def test_ambiguity_flags():
    nodes = {0: (0, 0), 1: (4, 0), 2: (2, 2), 3: (2, -2)}
    one_range = Scenario(nodes, [0, 1], [DistanceObservation(0, 2, 2.8, 0.1), DistanceObservation(1, 3, 2.8, 0.1),
                                         DistanceObservation(0, 3, 2.8, 0.1)])
    rep = connectivity_report(one_range)
    assert rep.flagged == {2: ["ambiguous"], 3: ["ambiguous"]}
    hyb = Scenario(nodes, [0, 1], [DistanceObservation(0, 2, 2.8, 0.1), DistanceObservation(0, 3, 2.8, 0.1)],
                   [DirectionObservation(0, 2, azimuth(nodes[0], nodes[2]), 100.0),
                    DirectionObservation(1, 3, 0.0, 10.0), DirectionObservation(3, 1, 0.0, 10.0)])
    rep = connectivity_report(hyb)
    # a bearing line from one node and a range circle about another can cross twice
    assert rep.flagged == {3: ["ambiguous"]}
    assert rep.targets[2].hybrid_links == 1
    assert "target" in rep.format()
