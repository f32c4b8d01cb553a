"""
One localization run
====================

A static robot sits at a random pose.  Every iteration the two EPMs move to
20 fresh random configurations, the sensors report fields and gravity, and
the EKF performs one zero-twist predict and one update.
"""

# %%
import numpy as np

from magloc.ekf import FilterParams
from magloc.scenario import ConvergenceCriteria, Workspace, run_trial, sample_pose
from magloc.sensing import NoiseSpec

rng = np.random.default_rng(42)
truth = sample_pose(Workspace(), rng)
noise = NoiseSpec(mag_std=1e-6, accel_std=1e-2)
result = run_trial(truth, 2, 20, FilterParams(), noise, ConvergenceCriteria(max_iterations=300), rng)

# %%
for k in (1, 2, 5, 10, 20, 50, 100, 300):
    i = k - 1
    print(f"k={k:3d}  e_p={result.e_p[i] * 1e3:8.3f} mm  e_R={result.e_R[i]:.2e}")

# %%
print("converged:", result.converged)
print("configurations used until convergence:", result.configs_to_convergence)
print("orientation first in tolerance at k =", result.orient_convergence_iter)
print("position first in tolerance at k =", result.pos_convergence_iter)
