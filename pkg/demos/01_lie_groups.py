"""
Poses, twists and the SE(3) exponential
=======================================

The estimator keeps the robot pose as a 4x4 rigid transform and corrects it
with small twists applied on the right, ``T * exp(xi)``.  Twists are ordered
``(rho, phi)``: translation first, rotation second.
"""

# %%
import numpy as np

from magloc.liegroups import Pose, exp_derivative, exp_se3, log_se3

# a quarter turn about z while moving 10 cm along x
xi = np.array([0.1, 0.0, 0.0, 0.0, 0.0, np.pi / 2])
T = exp_se3(xi)
print(np.round(T.matrix(), 4))

# %%
# ``log_se3`` undoes ``exp_se3`` for rotation angles below pi.
print("round trip error:", np.abs(log_se3(T) - xi).max())

# %%
# The exponential derivative maps a perturbation of the twist onto a
# right-side correction: exp(xi + d) ~ exp(xi) exp(J d).
d = 1e-6 * np.array([1.0, -2.0, 0.5, 0.3, 0.1, -0.4])
J = exp_derivative(xi)
lhs = exp_se3(xi + d).matrix()
rhs = (T @ exp_se3(J @ d)).matrix()
print("first-order agreement:", np.abs(lhs - rhs).max())

# %%
# Near a half turn the logarithm switches to an axis extraction that stays
# accurate where sin(theta) vanishes.
flip = exp_se3([0.0, 0.0, 0.0, 0.0, np.pi - 1e-8, 0.0])
print("angle recovered:", np.linalg.norm(log_se3(flip)[3:]))
print("identity check:", (T @ T.inverse()).allclose(Pose.identity(), atol=1e-14))
