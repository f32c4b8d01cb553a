"""
When is the pose observable?
============================

With the robot still, the only information comes from the stacked field and
gravity measurements.  The rank of their pose Jacobian (the observability
codistribution) tells whether all six degrees of freedom are pinned down.
"""

# %%
import numpy as np

from magloc.observability import Whitening, analyze, codistribution, workspace_condition_map
from magloc.scenario import SceneSpec, sample_batch, sample_pose

rng = np.random.default_rng(0)
scene = SceneSpec(m=2)
T = sample_pose(scene.workspace, rng)

# %%
# One EPM configuration leaves a direction unresolved; two are enough.
for n in (1, 2, 20):
    batch = sample_batch(scene.planes, scene.moment, n, rng, min_configs=1)
    report = analyze(codistribution(T, batch, whitening=Whitening()))
    print(f"n={n:2d}  rank={report.rank}  N_c={report.condition_number:.3g}")

# %%
# Condition number map over the XZ plane.  Rows are whitened by the sensor
# noise and columns by the convergence tolerances, so N_c compares position
# and orientation at the resolution the filter has to reach.
for m in (1, 2):
    cmap = workspace_condition_map("xz", 9, m=m, n=20, trials=3, seed=1)
    print(f"m={m}: median N_c = {cmap.median():.2f}")

# %%
# More configurations help, with diminishing returns.
for n in (2, 5, 10, 20, 50):
    print(n, round(workspace_condition_map("xz", 5, m=2, n=n, trials=3, seed=1).median(), 2))
