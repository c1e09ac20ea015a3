"""
Error versus range noise
========================

Sweep the range noise from 0.1 m to 0.5 m with bearing noise fixed at
5 degrees.  Rows go to a CSV with one line per value, replicate and method;
the mean per value is printed.
"""
from collections import defaultdict

import numpy as np

from mphl.engine import ScheduleConfig
from mphl.experiments import run_sweep
from mphl.metrics import write_sweep_csv
from mphl.sampler import SamplerConfig
from mphl.simulator import GeneratorConfig

rows = run_sweep(GeneratorConfig(), "sigma_distance", [0.1, 0.2, 0.3, 0.4, 0.5],
                 methods=["mphl_hybrid", "mphl_distance_only"], replicates=3, master_seed=7,
                 sampler_cfg=SamplerConfig(), schedule_cfg=ScheduleConfig())
write_sweep_csv(rows, "sweep_sigma.csv")

table = defaultdict(list)
for r in rows:
    table[(r["sweep_value"], r["method"])].append(r["avg_error"])
for (value, method), errs in sorted(table.items()):
    print(f"sigma {value:.1f} m  {method:20s} {np.mean(errs):.3f} m")
