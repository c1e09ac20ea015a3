"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The Monte Carlo runs shared by several criteria are computed once per
session.  Tolerances are fixed here and never tuned to the outcome.
"""
import math
import time

import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall

from conftest import ACCEPTANCE_REPORT
from mphl.baselines import grid_posterior_oracle, mds_localize
from mphl.engine import NodeState, ScheduleConfig, run_mphl, schedule_step
from mphl.experiments import run_method
from mphl.metrics import average_localization_error
from mphl.model import DirectionObservation, DistanceObservation, azimuth, euclidean_distance
from mphl.netgraph import Scenario, build_factor_graph, network_diameter
from mphl.sampler import ParticleSet, SamplerConfig, mh_sample
from mphl.simulator import GeneratorConfig, generate_scenario, synthesize_observations

pytestmark = pytest.mark.slow

REPLICATES = 100
N, M = 1000, 50
SECTION_V = GeneratorConfig()  # 10 nodes, 4 anchors, 5 x 10 m, sigma 0.2 m, zeta 5 deg
TWENTY = ScheduleConfig(max_iterations=20, run_to_max=True)
MODALITIES = ("mphl_hybrid", "mphl_distance_only", "mphl_direction_only")


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_REPORT[number] = line
    print(line)
    return ok


@pytest.fixture(scope="session")
def section_v_runs():
    """100 random section-V networks, each localized with all three modalities."""
    runs = {m: [] for m in MODALITIES}
    elapsed = {m: 0.0 for m in MODALITIES}
    for rep in range(REPLICATES):
        scenario = generate_scenario(SECTION_V, np.random.default_rng(rep))
        for method in MODALITIES:
            t0 = time.perf_counter()
            run = run_method(scenario, method, SamplerConfig(n_samples=N), TWENTY, M, seed=1000 + rep)
            elapsed[method] += time.perf_counter() - t0
            runs[method].append((scenario, run))
    return runs, elapsed


def test_criterion_01_convergence_speed(section_v_runs):
    runs, elapsed = section_v_runs
    rel = []
    for scenario, run in runs["mphl_hybrid"]:
        truth = {t: scenario.nodes[t] for t in scenario.targets}
        e10 = average_localization_error(run.result.estimates_at(10), truth)
        e20 = average_localization_error(run.result.estimates_at(20), truth)
        rel.append(abs(e10 - e20) / e20)
    frac = float(np.mean(np.array(rel) < 0.10))
    secs = elapsed["mphl_hybrid"]
    ok = frac >= 0.90 and secs < 600
    report(1, ok, f"|e10-e20|/e20 < 10% in {frac:.0%} of {REPLICATES} runs (need >= 90%); "
                  f"hybrid runtime {secs:.0f} s (budget 600 s)")
    assert ok


def test_criterion_02_hybrid_gain(section_v_runs):
    runs, _ = section_v_runs
    mean = {m: float(np.mean([r.metrics.avg_error for _, r in runs[m]])) for m in MODALITIES}
    gain_d = 1 - mean["mphl_hybrid"] / mean["mphl_distance_only"]
    gain_a = 1 - mean["mphl_hybrid"] / mean["mphl_direction_only"]
    ok = gain_d >= 0.10 and gain_a >= 0.10
    report(2, ok, f"mean error hybrid {mean['mphl_hybrid']:.3f} m, distance-only {mean['mphl_distance_only']:.3f} m "
                  f"({gain_d:.0%} lower), direction-only {mean['mphl_direction_only']:.3f} m ({gain_a:.0%} lower); "
                  f"need >= 10%")
    assert ok


def test_criterion_03_hybrid_vs_mds_full_connectivity():
    cfg = GeneratorConfig(connectivity_radius=None)
    hyb, mds = [], []
    for rep in range(REPLICATES):
        scenario = generate_scenario(cfg, np.random.default_rng(5000 + rep))
        hyb.append(run_method(scenario, "mphl_hybrid", SamplerConfig(n_samples=N), ScheduleConfig(), M,
                              seed=rep).metrics.avg_error)
        mds.append(run_method(scenario, "mds").metrics.avg_error)
    h, d = float(np.mean(hyb)), float(np.mean(mds))
    ok = h < d and h < cfg.sigma_distance
    report(3, ok, f"full connectivity: hybrid {h:.3f} m vs MDS {d:.3f} m, sigma {cfg.sigma_distance} m")
    assert ok


def random_tree(rng, n=6):
    """Singly connected 6-node tree, 1 anchor, both modalities on every edge."""
    cfg = GeneratorConfig(n_nodes=n, n_anchors=1, sigma_distance=0.05, zeta_direction=math.radians(2))
    while True:
        pos = rng.uniform((0, 0), (cfg.width, cfg.height), (n, 2))
        d = np.hypot(*(pos[:, None] - pos[None]).transpose(2, 0, 1))
        if d[np.triu_indices(n, 1)].min() >= 1.0:
            break
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    nodes = {i: tuple(p) for i, p in enumerate(pos)}
    dist, dirs = synthesize_observations(nodes, edges, cfg, rng)
    return Scenario(nodes, [0], dist, dirs, area=cfg.area)


def test_criterion_04_single_anchor_tree():
    errors = []
    for rep in range(20):
        scenario = random_tree(np.random.default_rng(700 + rep))
        res = run_mphl(scenario, sampler_cfg=SamplerConfig(n_samples=N), schedule_cfg=ScheduleConfig(max_iterations=100),
                       M=M, rng_seed=rep)
        truth = {t: scenario.nodes[t] for t in scenario.targets}
        errors.append(average_localization_error(res.estimates, truth))
    mean = float(np.mean(errors))
    ok = mean < 0.3
    report(4, ok, f"6-node tree, 1 anchor: mean error {mean:.3f} m over 20 runs (need < 0.3 m); "
                  f"worst run {max(errors):.3f} m")
    assert ok


def test_criterion_05_oracle_equivalence():
    cfg = GeneratorConfig(n_nodes=4, n_anchors=3)
    hits, details = 0, []
    for rep in range(20):
        scenario = generate_scenario(cfg, np.random.default_rng(900 + rep))
        graph = build_factor_graph(scenario)
        (t,) = graph.targets
        res = run_mphl(scenario, graph, SamplerConfig(n_samples=5000), ScheduleConfig(), M, rng_seed=rep)
        oracle = grid_posterior_oracle(graph, resolution=0.02)
        gap = math.dist(res.estimates[t], oracle.mean[t])
        hits += gap < 3 * oracle.std[t]
        details.append(gap / oracle.std[t])
    ok = hits >= 19
    report(5, ok, f"MPHL within 3 posterior std of the grid MMSE mean in {hits}/20 scenarios (need >= 19); "
                  f"largest gap {max(details):.2f} std")
    assert ok


def test_criterion_06_two_mode_ray_circle():
    # bearing ray from x1 along +x; range circle about x2 cuts the ray at (3, 0) and (7, 0)
    nodes = {"x1": (0.0, 0.0), "x2": (5.0, 1.0), "x3": (3.0, 0.0)}
    scenario = Scenario(nodes, ["x1", "x2"],
                        [DistanceObservation("x2", "x3", euclidean_distance(nodes["x2"], nodes["x3"]), 0.1)],
                        [DirectionObservation("x1", "x3", azimuth(nodes["x1"], nodes["x3"]),
                                              1 / math.radians(2) ** 2)])
    oracle = grid_posterior_oracle(build_factor_graph(scenario, prior=(-1, 9, -3, 4)), resolution=0.02)
    modes = sorted(oracle.modes["x3"])
    ok = (len(modes) == 2 and math.dist(modes[0], (3, 0)) < 0.1 and math.dist(modes[1], (7, 0)) < 0.1)
    report(6, ok, f"grid oracle modes {[(round(m.x, 2), round(m.y, 2)) for m in modes]} (need exactly 2, "
                  f"near (3, 0) and (7, 0))")
    assert ok


def test_criterion_07_sampler_calibration(section_v_runs):
    runs, _ = section_v_runs
    rates = np.array([a for _, r in runs["mphl_hybrid"] for (_, _, a) in r.result.acceptance])
    bad_runs = sum(any(not 0.15 <= a <= 0.40 for (_, _, a) in r.result.acceptance)
                   for _, r in runs["mphl_hybrid"])
    ablation = np.array([a for m in MODALITIES[1:] for _, r in runs[m] for (_, _, a) in r.result.acceptance])
    in_band = bad_runs == 0

    mean = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.5], [0.5, 2.0]])
    prec = np.linalg.inv(cov)
    ps = mh_sample(lambda x: -0.5 * (x - mean) @ prec @ (x - mean), [0.0, 0.0],
                   SamplerConfig(n_samples=20000, burn_in=2000), np.random.default_rng(0))
    moments = (np.all(np.abs(ps.mean() - mean) < 0.1) and np.allclose(np.cov(ps.particles.T), cov, atol=0.25)
               and 0.15 <= ps.acceptance_rate <= 0.40)
    ok = in_band and bool(moments)
    report(7, ok, f"hybrid runs: acceptance {rates.min():.3f}..{rates.max():.3f} over {len(rates)} node updates, "
                  f"{bad_runs} of {REPLICATES} runs with a node outside [0.15, 0.40]; "
                  f"single-modality runs {np.mean((ablation < 0.15) | (ablation > 0.40)):.2%} of updates outside; "
                  f"Gaussian moments {'match' if moments else 'MISMATCH'} (rate {ps.acceptance_rate:.3f})")
    assert ok


def test_criterion_08_baseline_exactness():
    worst = 0.0
    for rep in range(20):
        s = generate_scenario(GeneratorConfig(connectivity_radius=None, noise_free=True, sigma_distance=0.0,
                                              zeta_direction=0.0), np.random.default_rng(rep))
        est = mds_localize(s)
        worst = max(worst, max(math.dist(p, s.nodes[t]) for t, p in est.items()))
    mismatches = 0
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(3, 13))
        radius = float(rng.uniform(2.5, 8.0))
        cfg = GeneratorConfig(n_nodes=n, n_anchors=1, min_separation=1.0, connectivity_radius=radius)
        s = generate_scenario(cfg, rng)
        ids = s.node_ids
        idx = {k: i for i, k in enumerate(ids)}
        W = np.zeros((n, n))
        for i, j in s.edges():
            W[idx[i], idx[j]] = W[idx[j], idx[i]] = 1
        mismatches += network_diameter(s) != int(floyd_warshall(W, directed=False, unweighted=True).max())
    ok = worst < 1e-6 and mismatches == 0
    report(8, ok, f"noise-free MDS worst error {worst:.2e} m (need < 1e-6); diameter mismatches vs "
                  f"Floyd-Warshall {mismatches}/100")
    assert ok


def test_criterion_09_schedule_semantics():
    def states(spec):
        return {k: NodeState(k, ParticleSet(k, 1, np.zeros((1, 2))), received_last_iteration=rl,
                             received_total=rt, transmissions_sent=s, active=a)
                for k, (rl, rt, s, a) in spec.items()}

    cfg = ScheduleConfig(gamma=3)
    delta = 2
    nu = cfg.nu_factor * delta
    checks = {
        "iteration 1 anchors only": schedule_step(states({1: (9, 9, 0, True)}), ["a"], cfg, 1, nu) == {"a"},
        "gamma admission": schedule_step(states({1: (3, 3, 0, False), 2: (2, 2, 0, False)}), ["a"], cfg, 2, nu)
        == {"a", 1},
        "gamma_tot = 2 gamma fallback": cfg.gamma_total == 6
        and schedule_step(states({1: (1, 6, 0, False), 2: (1, 5, 0, False)}), [], cfg, 4, nu) == {1},
        "nu = 3 delta termination": nu == 6
        and schedule_step(states({1: (0, 9, 6, True), 2: (0, 9, 5, True)}), [], cfg, 9, nu) == {2},
    }
    # end to end: a path anchor - t - u - v has diameter 3 and must stop after 9 transmissions each
    nodes = {0: (0.0, 0.0), 1: (2.0, 0.0), 2: (4.0, 0.0), 3: (6.0, 0.0)}
    obs = [DistanceObservation(i, i + 1, 2.0, 0.1) for i in range(3)]
    dirs = [DirectionObservation(i, i + 1, 0.0, 100.0) for i in range(3)]
    res = run_mphl(Scenario(nodes, [0], obs, dirs), sampler_cfg=SamplerConfig(n_samples=200, burn_in=100),
                   schedule_cfg=ScheduleConfig(gamma=1), M=20)
    checks["run stops at nu"] = (res.nu == 9 and res.schedule_complete
                                 and res.iterations_run == res.schedule_length + 1)
    ok = all(checks.values())
    report(9, ok, "; ".join(f"{k}: {'ok' if v else 'WRONG'}" for k, v in checks.items()))
    assert ok


def test_criterion_10_determinism(tmp_path):
    scenario = generate_scenario(SECTION_V, np.random.default_rng(3))
    blobs = []
    for workers in (1, 1, 2, 4):
        res = run_mphl(scenario, sampler_cfg=SamplerConfig(n_samples=N), schedule_cfg=ScheduleConfig(), M=M,
                       rng_seed=11, workers=workers)
        path = tmp_path / f"trace_{len(blobs)}.csv"
        res.write_trace_csv(path)
        blobs.append(path.read_bytes())
    ok = all(b == blobs[0] for b in blobs)
    report(10, ok, f"trace CSVs for thread counts 1, 1, 2, 4 {'byte-identical' if ok else 'DIFFER'} "
                   f"({len(blobs[0])} bytes)")
    assert ok
