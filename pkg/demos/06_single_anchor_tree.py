"""
One anchor is enough
====================

With range and bearing on every link, each node fixes its neighbor's position
relative to itself.  A tree hanging off a single anchor can therefore be
localized completely.
"""
import math

import numpy as np

from mphl.engine import ScheduleConfig, run_mphl
from mphl.netgraph import Scenario, connectivity_report
from mphl.simulator import GeneratorConfig, synthesize_observations

rng = np.random.default_rng(3)
cfg = GeneratorConfig(n_nodes=6, n_anchors=1, sigma_distance=0.05, zeta_direction=math.radians(2))
nodes = {0: (2.5, 5.0), 1: (1.0, 3.0), 2: (4.0, 3.5), 3: (0.5, 0.8), 4: (4.5, 1.0), 5: (2.0, 8.5)}
edges = [(0, 1), (0, 2), (1, 3), (2, 4), (0, 5)]
dist, dirs = synthesize_observations(nodes, edges, cfg, rng)
scenario = Scenario(nodes, [0], dist, dirs, area=cfg.area)
print(connectivity_report(scenario).format())

result = run_mphl(scenario, schedule_cfg=ScheduleConfig(max_iterations=100), rng_seed=0)
for t in scenario.targets:
    e = result.estimates[t]
    print(f"node {t}: estimate ({e.x:.2f}, {e.y:.2f}), truth {nodes[t]}, error {math.dist(e, nodes[t]):.3f} m")
