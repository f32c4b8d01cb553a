"""SO(3) / SE(3) algebra used throughout the package.

Conventions
-----------
* Twists and algebra elements are 6-vectors ordered ``(rho, phi)``:
  translational part first, rotational part second.
* Perturbations are applied on the right (body frame): ``T * exp(xi)``.
  Every Jacobian in :mod:`magloc.sensing` and :mod:`magloc.ekf` is taken
  with respect to such a perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-5
# below this distance from pi, log() extracts the axis from the symmetric part
NEAR_PI = 1e-6
ORTHO_TOL = 1e-8
# higher-order coefficients switch to a longer series below this angle
SERIES_ANGLE = 1e-2


def skew(v):
    """Return the 3x3 matrix ``M`` with ``M @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M):
    """Inverse of :func:`skew` (reads the antisymmetric entries only)."""
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def hat(xi):
    """4x4 matrix form of an se(3) element ``(rho, phi)``."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = skew(xi[3:])
    out[:3, 3] = xi[:3]
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``T = [[R, p], [0, 1]]`` of the robot frame in world.

    Arrays are copied and made read-only on construction.
    """

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        p = np.array(self.position, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        R.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)

    @classmethod
    def identity(cls, position=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(np.eye(3), position)

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        if T.shape != (4, 4) or not np.allclose(T[3], [0, 0, 0, 1]):
            raise ValueError("not a homogeneous transform")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.position)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.position + self.position,
        )

    def act(self, x) -> np.ndarray:
        """Map a point from the robot frame into the world frame."""
        return self.rotation @ np.asarray(x, dtype=float) + self.position

    def perturb(self, xi) -> "Pose":
        """Right perturbation ``T * exp(xi)``."""
        return self @ exp_se3(xi)

    def is_valid(self, tol: float = 1e-10) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.position))
            and np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.position, other.position, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, position={self.position.tolist()})"


@dataclass(frozen=True)
class Twist:
    """Body velocity: ``linear`` in m/s, ``angular`` in rad/s."""

    linear: tuple = (0.0, 0.0, 0.0)
    angular: tuple = (0.0, 0.0, 0.0)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.linear, float), np.asarray(self.angular, float)])


def _so3_coeffs(theta):
    """(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3) with series near 0."""
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    a = np.sin(theta) / theta
    # 1 - cos t and t - sin t both cancel; the half-angle form does not
    b = 2.0 * (np.sin(0.5 * theta) / theta) ** 2
    if theta < SERIES_ANGLE:
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - np.sin(theta)) / theta**3
    return a, b, c


def exp_so3(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    a, b, _ = _so3_coeffs(theta)
    K = skew(phi)
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    _, b, c = _so3_coeffs(theta)
    K = skew(phi)
    return np.eye(3) + b * K + c * (K @ K)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        # cot(t/2) keeps this finite all the way to t = pi
        d = 1.0 / theta**2 - 1.0 / (2.0 * theta * np.tan(theta / 2.0))
    K = skew(phi)
    return np.eye(3) - 0.5 * K + d * (K @ K)


def log_so3(R) -> np.ndarray:
    """Rotation vector of ``R`` with norm in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    w = vee(R - R.T)
    sin_t = 0.5 * np.linalg.norm(w)
    cos_t = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = float(np.arctan2(sin_t, cos_t))
    if theta < SMALL_ANGLE:
        return 0.5 * (1.0 + theta**2 / 6.0) * w
    if np.pi - theta > NEAR_PI:
        return theta / (2.0 * sin_t) * w
    # R ~ 2 a a^T - I: take the best-conditioned column of (R + I) / 2
    B = 0.5 * (0.5 * (R + R.T) + np.eye(3))
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(B[i, i])
    axis /= np.linalg.norm(axis)
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def exp_se3(xi) -> Pose:
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    return Pose(exp_so3(phi), so3_left_jacobian(phi) @ rho)


def log_se3(T: Pose, *, with_flag: bool = False):
    """Inverse of :func:`exp_se3`.

    With ``with_flag=True`` returns ``(xi, degenerate)`` where ``degenerate``
    marks a rotation block that is not orthonormal to within ``ORTHO_TOL``.
    """
    R = T.rotation
    phi = log_so3(R)
    rho = so3_left_jacobian_inv(phi) @ T.position
    xi = np.concatenate([rho, phi])
    if with_flag:
        degenerate = bool(np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL)
        return xi, degenerate
    return xi


def adjoint(T: Pose) -> np.ndarray:
    """6x6 adjoint so that ``T exp(xi) T^-1 = exp(adjoint(T) @ xi)``."""
    R, p = T.rotation, T.position
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[:3, 3:] = skew(p) @ R
    out[3:, 3:] = R
    return out


def _se3_q(rho, phi):
    """Off-diagonal block of the SE(3) left Jacobian."""
    theta = float(np.linalg.norm(phi))
    P, Rx = skew(phi), skew(rho)
    PR, RP = P @ Rx, Rx @ P
    PRP = PR @ P
    t2 = theta * theta
    if theta < SERIES_ANGLE:
        # the closed forms below cancel badly at small angles: c3 loses ~60 eps / t^4
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (t2 - 4.0 * np.sin(0.5 * theta) ** 2) / (2.0 * t2 * t2)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    return (
        0.5 * Rx
        + c1 * (PR + RP + PRP)
        + c2 * (P @ PR + RP @ P - 3.0 * PRP)
        + c3 * (PRP @ P + P @ PRP)
    )


def se3_left_jacobian(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    J = so3_left_jacobian(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[:3, 3:] = _se3_q(rho, phi)
    return out


def exp_derivative(xi) -> np.ndarray:
    """Jacobian ``J`` with ``exp(xi + d) ~ exp(xi) exp(J d)`` to first order.

    This is the SE(3) left Jacobian evaluated at ``-xi`` (often called the
    right Jacobian); it is exactly the identity at ``xi = 0``.
    """
    return se3_left_jacobian(-np.asarray(xi, dtype=float))


def ad_se3(xi) -> np.ndarray:
    """6x6 matrix of ``ad_xi`` in ``(rho, phi)`` ordering."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((6, 6))
    P = skew(xi[3:])
    out[:3, :3] = P
    out[:3, 3:] = skew(xi[:3])
    out[3:, 3:] = P
    return out
