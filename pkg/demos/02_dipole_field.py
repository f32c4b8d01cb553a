"""
Field of an external permanent magnet
=====================================

Each EPM is a point dipole.  The field falls off with the cube of distance
and its spatial gradient is symmetric and traceless away from the source.
"""

# %%
import numpy as np

from magloc.magnetics import Epm, dipole_field, dipole_field_gradient, total_field

unit = Epm(position=[0.0, 0.0, 0.0], moment=[0.0, 0.0, 1.0])
print("on axis, 10 cm:    ", dipole_field(unit, [0.0, 0.0, 0.1]), "T")
print("equatorial, 10 cm: ", dipole_field(unit, [0.1, 0.0, 0.0]), "T")

# %%
# A 70 A m^2 magnet 25 cm from the workspace centre, the default scene scale.
epm = Epm(position=[0.25, 0.0, 0.0], moment=[-70.0, 0.0, 0.0])
p = np.array([0.02, -0.03, 0.01])
D = dipole_field_gradient(epm, p)
print("|B| at p:", np.linalg.norm(dipole_field(epm, p)), "T")
print("trace(dB/dp):", np.trace(D))
print("asymmetry:", np.abs(D - D.T).max())

# %%
# Several magnets superpose linearly.
other = Epm(position=[-0.25, 0.0, 0.0], moment=[0.0, 50.0, 50.0])
B, G = total_field([epm, other], p)
print("combined field:", B)
