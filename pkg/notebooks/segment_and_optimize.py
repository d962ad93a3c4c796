"""Walk through one door-opening run: demo, segmentation, prior, optimization.

Run with ``python notebooks/segment_and_optimize.py``; takes about 15 s.
"""

import numpy as np

from stiffctl.core import RandomStream
from stiffctl.pipeline import ExperimentConfig, make_demo, make_task, run_optimization, segment_demo

task = make_task("door1d")
demo = make_demo(task, seed=0)
print(f"demo: T={demo.T} steps at dt={demo.dt} s, peak contact force {np.abs(demo.F).max():.2f} N")

# Three phases: approach, push through the latch, swing the door open.
seg = segment_demo(demo, "icsld", 3, Lambda=3.0, stream=RandomStream(0, "nb"))
print("boundaries:", seg.segmentation.boundaries)
for j, k in enumerate(seg.K_prior[:, 0]):
    print(f"  phase {j + 1}: prior stiffness {k:7.1f} N/m")

cfg = ExperimentConfig(task="door1d", N=40)
rec = run_optimization(cfg, demo, seed=0, segmented=seg, task=task)
print(f"hypervolume after {len(rec.hv)} evaluations: {rec.final_hv:.4f} "
      f"(95% reached at n={rec.n_to_fraction(0.95)})")

print("Pareto set (y_T = steps open, y_C = -sum of stiffness over time):")
for i in sorted(rec.pareto, key=lambda i: rec.Y[i, 1]):
    print(f"  y_T={rec.Y[i, 0]:5.0f}  y_C={rec.Y[i, 1]:10.1f}  K={np.round(rec.theta[i], 1)}")
