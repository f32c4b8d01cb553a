"""Extended Kalman filter on SE(3) with a multiplicative (right) update.

The error state is ``xi`` in ``T_true = T_hat * exp(xi)``, ordered
``(rho, phi)``, so the covariance is 6x6 with the position block first.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, expm

from .liegroups import Pose, Twist, ad_se3, exp_derivative, exp_se3
from .sensing import (
    MeasurementBatch,
    MeasurementVector,
    measurement_model,
    measurement_std,
)

SYM_TOL = 1e-10


class FilterDivergence(RuntimeError):
    pass


def _default_p0():
    return np.diag([0.01] * 3 + [0.5] * 3)


def _default_q():
    return 1e-8 * np.eye(6)


@dataclass(frozen=True, eq=False)
class FilterParams:
    """Tuning of the filter.

    ``mag_std``/``accel_std`` are the *assumed* sensor noise used to build
    ``R_n``; they are independent of the noise actually injected in
    simulation.  ``cond_limit`` bounds the condition number of the
    noise-whitened innovation covariance.
    """

    process_noise: np.ndarray = field(default_factory=_default_q)
    initial_covariance: np.ndarray = field(default_factory=_default_p0)
    timestep: float = 1.0
    mag_std: float = 1e-6
    accel_std: float = 1e-2
    norm_scale: float = 1.0
    block_diagonal: bool = False
    cond_limit: float = 1e12

    def __post_init__(self):
        for name in ("process_noise", "initial_covariance"):
            M = np.array(getattr(self, name), dtype=float)
            if M.shape != (6, 6):
                raise ValueError(f"{name} must be 6x6")
            if not np.allclose(M, M.T, atol=1e-12) or np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
            M.flags.writeable = False
            object.__setattr__(self, name, M)
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if not (self.mag_std > 0 and self.accel_std > 0 and self.norm_scale > 0):
            raise ValueError("assumed measurement noise must be strictly positive")

    def measurement_noise(self, n: int) -> np.ndarray:
        """Diagonal of ``R_n`` for ``n`` configurations."""
        return measurement_std(n, self.mag_std, self.accel_std, self.norm_scale) ** 2


@dataclass(frozen=True, eq=False)
class FilterState:
    estimate: Pose
    covariance: np.ndarray

    def __post_init__(self):
        P = np.array(self.covariance, dtype=float)
        if P.shape != (6, 6):
            raise ValueError("covariance must be 6x6")
        P.flags.writeable = False
        object.__setattr__(self, "covariance", P)

    @classmethod
    def initial(cls, params: FilterParams, estimate: Pose | None = None) -> "FilterState":
        return cls(estimate or Pose.identity(), params.initial_covariance)

    def is_consistent(self) -> bool:
        P = self.covariance
        return bool(
            np.all(np.isfinite(P))
            and np.abs(P - P.T).max() <= SYM_TOL
            and np.linalg.eigvalsh(P).min() > -1e-12
        )


@dataclass(frozen=True)
class DynamicsInput:
    """Gyro-measured body twist; ``gyro_bias`` is added to the angular rate."""

    twist: Twist = field(default_factory=Twist)
    gyro_bias: tuple = (0.0, 0.0, 0.0)

    def algebra(self) -> np.ndarray:
        xi = self.twist.as_vector()
        xi[3:] += np.asarray(self.gyro_bias, dtype=float)
        return xi


class UpdateResult(NamedTuple):
    state: FilterState
    innovation: np.ndarray
    accepted: bool = True
    message: str = ""


def transition_matrices(u: DynamicsInput, dt: float):
    """Error-state transition ``F`` and input-noise map ``G`` over one step.

    With ``T_{k+1} = T_k exp(A dt)`` the right error evolves as
    ``xi' = Ad(exp(-A dt)) xi``, i.e. ``F = expm(-ad(A dt))``; input noise
    ``w`` enters through the exponential derivative, ``G = dt * J(A dt)``.
    """
    a = u.algebra() * dt
    if not np.any(a):
        return np.eye(6), dt * np.eye(6)
    F = expm(-ad_se3(a))
    G = dt * exp_derivative(a)
    return F, G


def predict(state: FilterState, u: DynamicsInput, params: FilterParams) -> FilterState:
    dt = params.timestep
    a = u.algebra() * dt
    F, G = transition_matrices(u, dt)
    with np.errstate(invalid="ignore", over="ignore"):
        P = F @ state.covariance @ F.T + G @ params.process_noise @ G.T
        P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise FilterDivergence("covariance became non-finite during prediction")
    estimate = state.estimate if not np.any(a) else state.estimate @ exp_se3(a)
    return FilterState(estimate, _enforce_structure(P, params))


def _enforce_structure(P, params):
    if params.block_diagonal:
        P = P.copy()
        P[:3, 3:] = 0.0
        P[3:, :3] = 0.0
    return P


def update(
    state: FilterState,
    batch: MeasurementBatch,
    y,
    params: FilterParams,
) -> UpdateResult:
    """Measurement update with gain ``K = P H^T S^-1``.

    The correction ``K @ innovation * timestep`` is applied on the right of
    the estimate.  An ill-conditioned ``S`` rejects the update and returns
    the input state untouched.
    """
    yv = np.asarray(y.values if isinstance(y, MeasurementVector) else y, dtype=float)
    if yv.size != batch.size:
        raise ValueError(f"measurement length {yv.size} != 4n+3 = {batch.size}")
    T = state.estimate
    P = state.covariance
    h, H = measurement_model(T, batch)
    innovation = yv - h.values
    r = params.measurement_noise(batch.n)

    # cond of R^-1/2 S R^-1/2 = 1 + lambda_max(P H^T R^-1 H); S itself mixes units
    W = H / np.sqrt(r)[:, None]
    info = W.T @ W
    lam = np.linalg.eigvals(P @ info).real.max()
    cond = 1.0 + max(lam, 0.0)
    if not np.isfinite(cond) or cond > params.cond_limit:
        return UpdateResult(state, innovation, False, f"innovation covariance ill-conditioned (cond={cond:.3g})")

    S = H @ P @ H.T
    S[np.diag_indices_from(S)] += r
    d = 1.0 / np.sqrt(np.diag(S))
    try:
        c = cho_factor(S * d[:, None] * d[None, :])
    except np.linalg.LinAlgError:
        return UpdateResult(state, innovation, False, "innovation covariance not positive definite")
    PHt = P @ H.T
    K = cho_solve(c, (PHt * d[None, :]).T).T * d[None, :]
    P_new = P - K @ S @ K.T
    P_new = _enforce_structure(0.5 * (P_new + P_new.T), params)
    if not np.all(np.isfinite(P_new)):
        raise FilterDivergence("covariance became non-finite during update")
    correction = K @ innovation * params.timestep
    estimate = T if not np.any(correction) else T @ exp_se3(correction)
    return UpdateResult(FilterState(estimate, P_new), innovation)


def params_with(params: FilterParams, **changes) -> FilterParams:
    return replace(params, **changes)
