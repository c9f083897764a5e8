"""Interventions per fusion mode with the LiDAR dropping out every 50 m.

Usage: python demos/failure_sweep.py model.sevw [seeds]
The checkpoint comes from ``lidarnav train``.
"""
import sys

from lidarnav.formats import load_network
from lidarnav.sim import NetworkPolicy
from lidarnav.sim.protocol import median_interventions, sweep
from lidarnav.sim.scanner import FailureSchedule

if len(sys.argv) < 2:
    sys.exit(__doc__)
policy = NetworkPolicy(load_network(sys.argv[1]))
seeds = range(int(sys.argv[2]) if len(sys.argv) > 2 else 3)
modes = ("none", "uniform", "evidential")
traces = sweep(policy, ["test"], modes, seeds, FailureSchedule(period=50.0, duration=5.0))
for m in modes:
    per_seed = [t.interventions for t in traces if t.mode == m]
    print(f"{m:10s} median={median_interventions(traces, m):4.1f}  per seed={per_seed}")
