"""Stacked magnetic/gravity measurement model and its pose Jacobian.

For ``n`` EPM configurations the measurement vector has ``4n + 3`` entries::

    [ |B_1|, ..., |B_n|,  B_1 (3), ..., B_n (3),  G (3) ]

with ``B_i = R^T b_i(p)`` the body-frame field of configuration ``i`` and
``G = R^T g``.  Jacobian columns follow the right-perturbation convention of
:mod:`magloc.liegroups`, ordered ``(rho, phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .liegroups import Pose, skew
from .magnetics import CoincidentPointError, Epm, PhysicalConstants, dipole_fields

MIN_CONFIGS = 2


@dataclass(frozen=True)
class EpmConfiguration:
    """Snapshot of all ``m`` EPMs at one actuation instant."""

    epms: tuple

    def __post_init__(self):
        epms = tuple(self.epms)
        if len(epms) < 1:
            raise ValueError("a configuration needs at least one EPM")
        if not all(isinstance(e, Epm) for e in epms):
            raise TypeError("configuration entries must be Epm instances")
        object.__setattr__(self, "epms", epms)

    @classmethod
    def from_arrays(cls, positions, moments) -> "EpmConfiguration":
        return cls(tuple(Epm(p, m) for p, m in zip(positions, moments)))

    @property
    def m(self) -> int:
        return len(self.epms)

    @cached_property
    def positions(self) -> np.ndarray:
        return np.stack([e.position for e in self.epms])

    @cached_property
    def moments(self) -> np.ndarray:
        return np.stack([e.moment for e in self.epms])


class MeasurementBatch:
    """``n`` EPM configurations measured at one (static) robot pose.

    Backed by ``(n, m, 3)`` position/moment arrays; build it either from a
    sequence of :class:`EpmConfiguration` or with :meth:`from_arrays`.
    ``min_configs`` defaults to the observability minimum of two; analysis
    code may lower it to one to study the unobservable case.
    """

    def __init__(self, configs, constants: PhysicalConstants | None = None, min_configs: int = MIN_CONFIGS):
        configs = tuple(configs)
        if len({c.m for c in configs}) > 1:
            raise ValueError("all configurations in a batch must have the same EPM count")
        pos = np.stack([c.positions for c in configs]) if configs else np.zeros((0, 1, 3))
        mom = np.stack([c.moments for c in configs]) if configs else np.zeros((0, 1, 3))
        self._init(pos, mom, constants, min_configs)
        self._configs = configs

    @classmethod
    def from_arrays(cls, positions, moments, constants=None, min_configs: int = MIN_CONFIGS) -> "MeasurementBatch":
        self = cls.__new__(cls)
        pos = np.array(positions, dtype=float)
        mom = np.array(moments, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 3 or pos.shape != mom.shape:
            raise ValueError("positions and moments must both have shape (n, m, 3)")
        if pos.shape[1] < 1:
            raise ValueError("a configuration needs at least one EPM")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mom))):
            raise ValueError("EPM position and moment must be finite")
        if np.any(np.linalg.norm(mom, axis=2) <= 0):
            raise ValueError("EPM moment must be nonzero")
        self._init(pos, mom, constants, min_configs)
        self._configs = None
        return self

    def _init(self, pos, mom, constants, min_configs):
        if pos.shape[0] < min_configs:
            raise ValueError(
                f"need at least {min_configs} EPM configurations, got {pos.shape[0]}"
                " (a single configuration leaves the pose unobservable)"
            )
        pos.flags.writeable = False
        mom.flags.writeable = False
        self.positions = pos
        self.moments = mom
        self.constants = constants or PhysicalConstants()
        self.min_configs = min_configs

    @property
    def configs(self) -> tuple:
        if self._configs is None:
            self._configs = tuple(
                EpmConfiguration.from_arrays(p, m) for p, m in zip(self.positions, self.moments)
            )
        return self._configs

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def m(self) -> int:
        return self.positions.shape[1]

    @property
    def size(self) -> int:
        return 4 * self.n + 3

    def __repr__(self):
        return f"MeasurementBatch(n={self.n}, m={self.m})"

    def world_fields(self, p):
        """World-frame fields ``(n, 3)`` and gradients ``(n, 3, 3)`` at ``p``."""
        try:
            B, G = dipole_fields(self.positions, self.moments, p, self.constants.mu0)
        except CoincidentPointError as exc:
            i, j = divmod(exc.epm_index, self.m)
            raise CoincidentPointError(
                f"robot position coincides with EPM {j} of configuration {i}",
                epm_index=j,
                config_index=i,
            ) from None
        return B.sum(axis=1), G.sum(axis=1)


@dataclass(frozen=True, eq=False)
class MeasurementVector:
    """Measurement in the stacked ``[norms | fields | gravity]`` layout."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 7 or (v.size - 3) % 4:
            raise ValueError(f"length {v.size} is not of the form 4n+3")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_parts(cls, fields, gravity, norms=None) -> "MeasurementVector":
        fields = np.asarray(fields, dtype=float).reshape(-1, 3)
        if norms is None:
            norms = np.linalg.norm(fields, axis=1)
        return cls(np.concatenate([norms, fields.ravel(), np.asarray(gravity, float)]))

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def n(self) -> int:
        return (self.values.size - 3) // 4

    @property
    def norms(self) -> np.ndarray:
        return self.values[: self.n]

    @property
    def fields(self) -> np.ndarray:
        return self.values[self.n : 4 * self.n].reshape(self.n, 3)

    @property
    def gravity(self) -> np.ndarray:
        return self.values[4 * self.n :]


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian sensor noise.

    ``norm_from_noisy_fields`` selects whether the norm entries are derived
    from the noisy field channels (default) or perturbed independently.
    The gyro terms only drive the dynamics input, never the measurement.
    """

    mag_std: float = 0.0
    accel_std: float = 0.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    gyro_std: float = 0.0
    norm_from_noisy_fields: bool = True

    def __post_init__(self):
        if min(self.mag_std, self.accel_std, self.gyro_std) < 0:
            raise ValueError("noise standard deviations must be non-negative")


def predict_measurement(T: Pose, batch: MeasurementBatch) -> MeasurementVector:
    """Noiseless stacked measurement ``h(T)``."""
    Rt = T.rotation.T
    b, _ = batch.world_fields(T.position)
    return MeasurementVector.from_parts(b @ T.rotation, Rt @ batch.constants.g)


def measurement_jacobian(T: Pose, batch: MeasurementBatch) -> np.ndarray:
    """``(4n+3) x 6`` Jacobian of :func:`predict_measurement`."""
    return measurement_model(T, batch)[1]


def measurement_model(T: Pose, batch: MeasurementBatch):
    """``(h(T), H)`` from a single field evaluation.

    Rows are ``[norms | fields | gravity]``.  Under ``T exp(xi)`` the
    position moves by ``R rho`` and the sensed vectors rotate by
    ``exp(-phi)``, so ``d(R^T b)/d rho = R^T D R`` and
    ``d(R^T b)/d phi = [R^T b]_x``.
    """
    R = T.rotation
    Rt = R.T
    n = batch.n
    b, D = batch.world_fields(T.position)  # (n,3), (n,3,3)
    B = b @ R
    G = Rt @ batch.constants.g
    H = np.zeros((4 * n + 3, 6))

    DR = D @ R
    H[n : 4 * n, :3] = np.einsum("ij,njk->nik", Rt, DR).reshape(3 * n, 3)
    Bx = np.zeros((n, 3, 3))
    Bx[:, 0, 1], Bx[:, 0, 2] = -B[:, 2], B[:, 1]
    Bx[:, 1, 0], Bx[:, 1, 2] = B[:, 2], -B[:, 0]
    Bx[:, 2, 0], Bx[:, 2, 1] = -B[:, 1], B[:, 0]
    H[n : 4 * n, 3:] = Bx.reshape(3 * n, 3)

    h = MeasurementVector.from_parts(B, G)
    H[:n, :3] = np.einsum("ni,nik->nk", b / h.norms[:, None], DR)
    H[4 * n :, 3:] = skew(G)
    return h, H


def synthesize_measurement(
    T_true: Pose, batch: MeasurementBatch, noise: NoiseSpec, rng: np.random.Generator
) -> MeasurementVector:
    """Noisy sensor output at the true pose.

    Draw order is fixed (fields, then gravity, then independent norm noise
    if enabled) so a seeded generator gives bit-identical output.
    """
    h = predict_measurement(T_true, batch)
    fields = h.fields + noise.mag_std * rng.standard_normal((batch.n, 3))
    gravity = h.gravity + noise.accel_std * rng.standard_normal(3)
    if noise.norm_from_noisy_fields:
        norms = np.linalg.norm(fields, axis=1)
    else:
        norms = h.norms + noise.mag_std * rng.standard_normal(batch.n)
    return MeasurementVector.from_parts(fields, gravity, norms)


def measurement_std(n: int, mag_std: float, accel_std: float, norm_scale: float = 1.0) -> np.ndarray:
    """Per-row standard deviations in the stacked layout."""
    return np.concatenate(
        [
            np.full(n, mag_std * np.sqrt(norm_scale)),
            np.full(3 * n, mag_std),
            np.full(3, accel_std),
        ]
    )


