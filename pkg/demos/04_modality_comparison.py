"""
Distance, direction, or both
============================

A small Monte Carlo comparison on random networks: the same observations are
fed to message passing with range only, bearing only, and both, and to a
centralized MDS baseline on fully connected networks.
"""
import numpy as np

from mphl.engine import ScheduleConfig
from mphl.experiments import run_method
from mphl.sampler import SamplerConfig
from mphl.simulator import GeneratorConfig, generate_scenario

REPLICATES = 10
schedule = ScheduleConfig(max_iterations=20, run_to_max=True)
errors = {m: [] for m in ("mphl_hybrid", "mphl_distance_only", "mphl_direction_only")}
for rep in range(REPLICATES):
    scenario = generate_scenario(GeneratorConfig(), np.random.default_rng(rep))
    for method in errors:
        errors[method].append(run_method(scenario, method, SamplerConfig(), schedule, seed=rep).metrics.avg_error)
for method, e in errors.items():
    print(f"{method:22s} mean error {np.mean(e):.3f} m")

# %%
# MDS needs every pairwise distance, so it only runs on fully connected networks.
full = GeneratorConfig(connectivity_radius=None)
hyb, mds = [], []
for rep in range(REPLICATES):
    scenario = generate_scenario(full, np.random.default_rng(100 + rep))
    hyb.append(run_method(scenario, "mphl_hybrid", seed=rep).metrics.avg_error)
    mds.append(run_method(scenario, "mds").metrics.avg_error)
print(f"fully connected: hybrid {np.mean(hyb):.3f} m, MDS {np.mean(mds):.3f} m")
