"""Compare prior-weighted and plain search on the wiping task over a few seeds.

A smaller version of the benchmark grid: one segmentation method, prior on
and off, N=40. Takes about a minute.
"""

import numpy as np

from stiffctl.pipeline import ExperimentConfig, run_benchmark

res = run_benchmark("wipe2d", seeds=range(4), methods=("icsld",), base=ExperimentConfig(task="wipe2d", N=40))
for prior in (True, False):
    cell = res.cell("icsld", prior)
    q25, med, q75, _, _ = cell.curve()
    print(f"prior {'on ' if prior else 'off'}: final hv median {np.median(cell.final_hv):.4f}")
    # coarse learning curve, every 5 evaluations
    print("   n  " + " ".join(f"{n:6d}" for n in range(5, 41, 5)))
    print("  med " + " ".join(f"{med[n - 1]:6.3f}" for n in range(5, 41, 5)))
