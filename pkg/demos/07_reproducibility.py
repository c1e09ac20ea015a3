"""
Same seed, same bytes
=====================

Every random draw comes from a stream keyed by (seed, node, iteration), so
spreading the per-node sampling over threads does not change the result.
"""
import hashlib

from mphl.engine import run_mphl
from mphl.simulator import GeneratorConfig, generate_scenario

scenario = generate_scenario(GeneratorConfig(rng_seed=11))
for workers in (1, 2, 4):
    result = run_mphl(scenario, rng_seed=5, workers=workers)
    path = f"trace_{workers}.csv"
    result.write_trace_csv(path)
    with open(path, "rb") as fh:
        print(workers, "threads:", hashlib.sha256(fh.read()).hexdigest()[:16])
