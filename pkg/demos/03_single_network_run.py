"""
Localizing one random network
=============================

Draw a 10-node, 4-anchor network in a 5 m x 10 m field, check that it is
well connected, run particle message passing and follow the error per
iteration.
"""
import numpy as np

from mphl.engine import ScheduleConfig, run_mphl
from mphl.metrics import average_localization_error, belief_std
from mphl.netgraph import connectivity_report
from mphl.sampler import SamplerConfig
from mphl.simulator import GeneratorConfig, generate_scenario

scenario = generate_scenario(GeneratorConfig(rng_seed=4))
print(connectivity_report(scenario).format())
print(f"{len(scenario.edges())} links among {len(scenario.nodes)} nodes")

# %%
# N = 1000 particles per belief, M = 50 per message.  The schedule stops once
# every target has transmitted 3 x diameter times.
result = run_mphl(scenario, sampler_cfg=SamplerConfig(n_samples=1000), schedule_cfg=ScheduleConfig(), M=50,
                  rng_seed=0)
truth = {t: scenario.nodes[t] for t in scenario.targets}
print(f"diameter {result.diameter}, nu {result.nu}, schedule length {result.schedule_length}, "
      f"{result.messages_sent} messages")

# %%
# Error after each iteration (targets that have not heard anything yet are skipped).
for it in range(1, result.iterations_run + 1):
    est = result.estimates_at(it)
    if len(est) == len(truth):
        print(f"iteration {it:2d}: average error {average_localization_error(est, truth):.3f} m")
print(f"final belief spread (sum over targets): {belief_std(result.particles):.3f} m")

# %%
# The trace and summary files used by the command-line tool.
result.write_trace_csv("trace.csv")
result.write_summary_json("summary.json", scenario)
