"""Point-dipole field of external permanent magnets (EPMs).

The separation vector ``r`` always points from the EPM to the query point,
``r = p - epm.position``.  The field is even in ``r`` so the choice only
matters for the sign bookkeeping of the gradient, which is taken with
respect to the query point ``p``.

All EPM geometry is expressed in the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU0 = 4.0e-7 * np.pi
DEFAULT_MOMENT = 70.0  # A m^2
MIN_DISTANCE = 1e-6  # m


class CoincidentPointError(ValueError):
    """Query point lies on (or within ``MIN_DISTANCE`` of) a dipole source."""

    def __init__(self, message, epm_index=None, config_index=None):
        super().__init__(message)
        self.epm_index = epm_index
        self.config_index = config_index


@dataclass(frozen=True, eq=False)
class Epm:
    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        mom = np.array(self.moment, dtype=float).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mom))):
            raise ValueError("EPM position and moment must be finite")
        if np.linalg.norm(mom) <= 0.0:
            raise ValueError("EPM moment must be nonzero")
        pos.flags.writeable = False
        mom.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "moment", mom)

    def __repr__(self):
        return f"Epm(position={self.position.tolist()}, moment={self.moment.tolist()})"


@dataclass(frozen=True)
class PhysicalConstants:
    mu0: float = MU0
    gravity: tuple = (0.0, 0.0, -9.81)

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")
        g = tuple(float(x) for x in self.gravity)
        if len(g) != 3 or np.linalg.norm(g) <= 0:
            raise ValueError("gravity must be a nonzero 3-vector")
        object.__setattr__(self, "gravity", g)

    @property
    def g(self) -> np.ndarray:
        return np.array(self.gravity)


def dipole_fields(positions, moments, p, mu0=MU0):
    """Vectorised dipole field and gradient.

    ``positions`` and ``moments`` have shape ``(..., 3)``; returns fields of
    shape ``(..., 3)`` and gradients ``(..., 3, 3)`` with
    ``grad[..., a, b] = dB_a / dp_b``.
    """
    r = np.asarray(p, dtype=float) - np.asarray(positions, dtype=float)
    m = np.asarray(moments, dtype=float)
    d2 = np.einsum("...i,...i->...", r, r)
    d = np.sqrt(d2)
    if np.any(d < MIN_DISTANCE):
        flat = np.flatnonzero(np.ravel(d < MIN_DISTANCE))
        raise CoincidentPointError(
            f"query point within {MIN_DISTANCE} m of dipole {flat[0]}", epm_index=int(flat[0])
        )
    c = mu0 / (4.0 * np.pi)
    rm = np.einsum("...i,...i->...", r, m)
    inv3 = 1.0 / (d2 * d)
    inv5 = inv3 / d2
    B = c * (3.0 * (rm * inv5)[..., None] * r - inv3[..., None] * m)
    eye = np.eye(3)
    outer_rm = r[..., :, None] * m[..., None, :]
    rr = r[..., :, None] * r[..., None, :]
    G = (3.0 * c * inv5)[..., None, None] * (
        rm[..., None, None] * eye
        + outer_rm
        + np.swapaxes(outer_rm, -1, -2)
        - 5.0 * (rm / d2)[..., None, None] * rr
    )
    return B, G


def dipole_field(epm: Epm, p, mu0: float = MU0) -> np.ndarray:
    """World-frame field (tesla) of one EPM at point ``p``."""
    return dipole_fields(epm.position, epm.moment, p, mu0)[0]


def dipole_field_gradient(epm: Epm, p, mu0: float = MU0) -> np.ndarray:
    """Jacobian ``dB/dp`` (tesla per metre) of :func:`dipole_field`."""
    return dipole_fields(epm.position, epm.moment, p, mu0)[1]


def total_field(epms, p, mu0: float = MU0):
    """Superposed field and gradient of all ``epms`` at ``p``."""
    epms = list(epms)
    if not epms:
        return np.zeros(3), np.zeros((3, 3))
    pos = np.stack([e.position for e in epms])
    mom = np.stack([e.moment for e in epms])
    try:
        B, G = dipole_fields(pos, mom, p, mu0)
    except CoincidentPointError as exc:
        raise CoincidentPointError(
            f"query point coincides with EPM {exc.epm_index}", epm_index=exc.epm_index
        ) from None
    return B.sum(axis=0), G.sum(axis=0)
