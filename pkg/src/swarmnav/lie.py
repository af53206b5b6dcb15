"""SO(3) and SE2(3) primitives: exp/log maps, skew operator, composition.

All rotations are 3x3 direction cosine matrices. An extended pose bundles
(rotation, velocity, position) and composes like its 5x5 homogeneous
embedding

    [ R  v  p ]
    [ 0  1  0 ]
    [ 0  0  1 ]

Tangent vectors are ordered (attitude, velocity, position).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle the closed-form Rodrigues coefficients are replaced by
# their Taylor series to avoid 0/0.
_SMALL_ANGLE = 1e-7

_ORTHO_TOL = 1e-6


def skew(v):
    """Skew-symmetric matrix of a 3-vector, so that skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _rodrigues_coeffs(theta):
    """Coefficients (a, b) with exp(phi^) = I + a*phi^ + b*phi^2."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return a, b


def so3_exp(phi):
    """Rodrigues formula: rotation matrix for a rotation vector (rad)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    a, b = _rodrigues_coeffs(theta)
    S = skew(phi)
    return np.eye(3) + a * S + b * (S @ S)


def check_rotation(R, tol=_ORTHO_TOL):
    """Raise ValueError unless R is orthonormal with determinant +1."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol:
        raise ValueError("matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix determinant is not +1")
    return R


def so3_log(R):
    """Rotation vector of a rotation matrix; |result| <= pi.

    At theta == pi the axis sign is ambiguous; the axis is taken from the
    largest diagonal entry of (R + I)/2 and either sign is a valid answer.
    """
    R = check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < _SMALL_ANGLE:
        # First-order: R ~ I + phi^
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # Near pi: extract the axis from the symmetric part.
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis = axis / np.linalg.norm(axis)
        # Pick the sign consistent with the antisymmetric part when it is
        # not vanishingly small.
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return theta * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * w


def so3_left_jacobian(phi):
    """Left Jacobian J_l of SO(3): exp((phi+dphi)^) ~ exp((J_l dphi)^) exp(phi^)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    S = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + S / 2.0 + S @ S / 6.0
    t2 = theta * theta
    b = (1.0 - np.cos(theta)) / t2
    c = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + b * S + c * (S @ S)


def so3_left_jacobian_inv(phi):
    """Inverse of the SO(3) left Jacobian."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    S = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - S / 2.0 + S @ S / 12.0
    half = theta / 2.0
    cot = half / np.tan(half)
    return np.eye(3) - S / 2.0 + (1.0 - cot) / (theta * theta) * (S @ S)


def so3_gamma2(phi):
    """Second integral coefficient matrix: sum_n (phi^)^n / (n+2)!.

    Appears in the closed-form position update of the strapdown integrator.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    S = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) / 2.0 + S / 6.0 + S @ S / 24.0
    t2 = theta * theta
    a = (theta - np.sin(theta)) / (t2 * theta)
    b = (t2 / 2.0 + np.cos(theta) - 1.0) / (t2 * t2)
    return np.eye(3) / 2.0 + a * S + b * (S @ S)


@dataclass(frozen=True)
class ExtendedPose:
    """SE2(3) element: rotation, velocity (m/s), position (m)."""

    rotation: np.ndarray
    velocity: np.ndarray
    position: np.ndarray

    @staticmethod
    def identity():
        return ExtendedPose(np.eye(3), np.zeros(3), np.zeros(3))

    def as_matrix(self):
        """5x5 homogeneous embedding."""
        T = np.eye(5)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.velocity
        T[:3, 4] = self.position
        return T

    @staticmethod
    def from_matrix(T):
        return ExtendedPose(np.array(T[:3, :3]), np.array(T[:3, 3]), np.array(T[:3, 4]))


def compose(a: ExtendedPose, b: ExtendedPose) -> ExtendedPose:
    """Group product; equals multiplication of the 5x5 embeddings."""
    return ExtendedPose(
        a.rotation @ b.rotation,
        a.velocity + a.rotation @ b.velocity,
        a.position + a.rotation @ b.position,
    )


def inverse(a: ExtendedPose) -> ExtendedPose:
    Rt = a.rotation.T
    return ExtendedPose(Rt, -Rt @ a.velocity, -Rt @ a.position)


def se23_exp(xi) -> ExtendedPose:
    """Exponential map of SE2(3) for a 9-vector (attitude, velocity, position)."""
    xi = np.asarray(xi, dtype=float)
    phi, nu, rho = xi[:3], xi[3:6], xi[6:9]
    J = so3_left_jacobian(phi)
    return ExtendedPose(so3_exp(phi), J @ nu, J @ rho)


def se23_log(X: ExtendedPose):
    """Logarithm map, inverse of se23_exp. Rotation angle must be below pi."""
    phi = so3_log(X.rotation)
    if np.pi - np.linalg.norm(phi) < 1e-9:
        raise ValueError("se23_log is degenerate at rotation angle pi")
    Jinv = so3_left_jacobian_inv(phi)
    return np.concatenate([phi, Jinv @ X.velocity, Jinv @ X.position])
