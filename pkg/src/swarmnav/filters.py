"""Filter cores: strapdown propagation, state-transition matrices for the
left-invariant, right-invariant and conventional-EKF error parameterizations,
and the Kalman update algebra.

The strapdown integrator is the closed-form zero-order-hold solution of the
rigid-body kinematics (left Jacobian and second-integral coefficient
matrices for the velocity and position columns). With this integrator the
left-invariant transition matrix exp(A dt) transports navigation errors
through a propagation step exactly, which is what makes the buffered
re-propagation of delayed measurements bit-faithful.

Sign note: the bias-coupling blocks of A (left and right variants) carry the
opposite sign of the common textbook presentation because errors here are
defined estimate-minus-truth; the finite-difference tests pin the signs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .lie import (
    ExtendedPose,
    skew,
    so3_exp,
    so3_gamma2,
    so3_left_jacobian,
)
from .state import CORE_DIM, SystemState, retract

GRAVITY = np.array([0.0, 0.0, -9.81])

NOISE_DIM = 12  # gyro white, accel white, gyro walk, accel walk


class UpdateRejected(RuntimeError):
    """Raised when an innovation covariance is numerically singular."""


@dataclass(frozen=True)
class ImuSample:
    gyro: np.ndarray       # rad/s, body frame
    accel: np.ndarray      # m/s^2, body frame (specific force)
    timestamp: float


@dataclass(frozen=True)
class NoiseDensities:
    """Continuous-time IMU noise densities and the gravity vector."""

    gyro_noise: float = 0.0        # rad/s/sqrt(Hz)
    accel_noise: float = 0.0       # m/s^2/sqrt(Hz)
    gyro_walk: float = 0.0         # rad/s^2/sqrt(Hz)
    accel_walk: float = 0.0        # m/s^3/sqrt(Hz)
    gravity: np.ndarray = None

    def __post_init__(self):
        if self.gravity is None:
            object.__setattr__(self, "gravity", GRAVITY.copy())
        for name in ("gyro_noise", "accel_noise", "gyro_walk", "accel_walk"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def discrete_q(self, dt):
        """First-order discrete process noise: diag(sigma^2) * dt."""
        sig = np.array(
            [self.gyro_noise] * 3 + [self.accel_noise] * 3
            + [self.gyro_walk] * 3 + [self.accel_walk] * 3
        )
        return np.diag(sig ** 2) * dt


@dataclass(frozen=True)
class TransitionPair:
    """Discrete transition F and noise map G over the 18-dim core error."""

    F: np.ndarray
    G: np.ndarray
    dt: float


@dataclass(frozen=True)
class LinearMeasurement:
    residual: np.ndarray
    H: np.ndarray
    noise_cov: np.ndarray
    timestamp: float


def stack_measurements(measurements):
    """Stack several LinearMeasurements into one block measurement."""
    if not measurements:
        raise ValueError("nothing to stack")
    r = np.concatenate([m.residual for m in measurements])
    H = np.vstack([m.H for m in measurements])
    from scipy.linalg import block_diag
    N = block_diag(*[m.noise_cov for m in measurements])
    return LinearMeasurement(r, H, N, measurements[-1].timestamp)


def mechanize(state: SystemState, imu: ImuSample, dt, gravity=None) -> SystemState:
    """Bias-compensated strapdown step with closed-form ZOH integration.

    Biases, lever arm, clones and features are carried over unchanged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = GRAVITY if gravity is None else np.asarray(gravity, dtype=float)
    w = imu.gyro - state.gyro_bias
    a = imu.accel - state.accel_bias
    psi = w * dt
    R = state.nav.rotation
    Gamma = so3_exp(psi)
    J1 = so3_left_jacobian(psi)
    G2 = so3_gamma2(psi)
    Ra = R @ (J1 @ a)
    nav = ExtendedPose(
        R @ Gamma,
        state.nav.velocity + Ra * dt + g * dt,
        state.nav.position + state.nav.velocity * dt + R @ (G2 @ a) * dt * dt + 0.5 * g * dt * dt,
    )
    return replace(state, nav=nav, timestamp=state.timestamp + dt)


def _embed_core(F15, G15):
    """Lift 15-dim nav+bias matrices to the 18-dim core (lever arm static)."""
    F = np.eye(CORE_DIM)
    F[:15, :15] = F15
    G = np.zeros((CORE_DIM, NOISE_DIM))
    G[:15, :] = G15
    return F, G


def transition_left(imu: ImuSample, dt) -> TransitionPair:
    """Left-invariant transition; a pure function of (gyro, accel, dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = np.asarray(imu.gyro, dtype=float)
    f = np.asarray(imu.accel, dtype=float)
    Sw = skew(w)
    A = np.zeros((15, 15))
    A[0:3, 0:3] = -Sw
    A[3:6, 0:3] = -skew(f)
    A[3:6, 3:6] = -Sw
    A[6:9, 3:6] = np.eye(3)
    A[6:9, 6:9] = -Sw
    A[0:3, 9:12] = -np.eye(3)
    A[3:6, 12:15] = -np.eye(3)
    F15 = expm(A * dt)
    G15 = np.zeros((15, NOISE_DIM))
    G15[0:3, 0:3] = np.eye(3)
    G15[3:6, 3:6] = np.eye(3)
    G15[9:15, 6:12] = np.eye(6)
    F, G = _embed_core(F15, G15)
    return TransitionPair(F, G, dt)


def transition_right(state_estimate: SystemState, imu: ImuSample, dt, gravity=None) -> TransitionPair:
    """Right-invariant transition; depends on the state estimate."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = GRAVITY if gravity is None else np.asarray(gravity, dtype=float)
    R = state_estimate.nav.rotation
    v = state_estimate.nav.velocity
    p = state_estimate.nav.position
    A = np.zeros((15, 15))
    A[3:6, 0:3] = skew(g)
    A[6:9, 3:6] = np.eye(3)
    A[0:3, 9:12] = -R
    A[3:6, 9:12] = -skew(v) @ R
    A[6:9, 9:12] = -skew(p) @ R
    A[3:6, 12:15] = -R
    F15 = expm(A * dt)
    G15 = np.zeros((15, NOISE_DIM))
    G15[0:3, 0:3] = R
    G15[3:6, 0:3] = skew(v) @ R
    G15[6:9, 0:3] = skew(p) @ R
    G15[3:6, 3:6] = R
    G15[9:15, 6:12] = np.eye(6)
    F, G = _embed_core(F15, G15)
    return TransitionPair(F, G, dt)


def _dJ1a_dpsi(psi, a):
    """Derivative of so3_left_jacobian(psi) @ a with respect to psi."""
    theta = np.linalg.norm(psi)
    Sa = skew(a)
    pxa = np.cross(psi, a)
    pxpxa = np.cross(psi, pxa)
    if theta < 1e-4:
        return -0.5 * Sa - (skew(pxa) + skew(psi) @ Sa) / 6.0
    t2 = theta * theta
    b = (1.0 - np.cos(theta)) / t2
    c = (theta - np.sin(theta)) / (t2 * theta)
    db = (theta * np.sin(theta) - 2.0 * (1.0 - np.cos(theta))) / (t2 * theta)
    dc = ((1.0 - np.cos(theta)) * theta - 3.0 * (theta - np.sin(theta))) / (t2 * t2)
    n = psi / theta
    return (
        np.outer(pxa, n) * db
        - b * Sa
        + np.outer(pxpxa, n) * dc
        + c * (-skew(pxa) - skew(psi) @ Sa)
    )


def transition_ekf(state_estimate: SystemState, imu: ImuSample, dt, gravity=None) -> TransitionPair:
    """Conventional error-state EKF Jacobian of the mechanization
    (body-frame attitude error, additive velocity/position errors)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    R = state_estimate.nav.rotation
    w = imu.gyro - state_estimate.gyro_bias
    a = imu.accel - state_estimate.accel_bias
    psi = w * dt
    Gamma = so3_exp(psi)
    Jr = so3_left_jacobian(-psi)
    J1 = so3_left_jacobian(psi)
    G2 = so3_gamma2(psi)
    D1 = _dJ1a_dpsi(psi, a)
    F = np.eye(CORE_DIM)
    F[0:3, 0:3] = Gamma.T
    F[0:3, 9:12] = -Jr * dt
    F[3:6, 0:3] = -R @ skew(J1 @ a) * dt
    F[3:6, 9:12] = -R @ D1 * dt * dt
    F[3:6, 12:15] = -R @ J1 * dt
    F[6:9, 0:3] = -R @ skew(G2 @ a) * dt * dt
    F[6:9, 3:6] = np.eye(3) * dt
    F[6:9, 12:15] = -R @ G2 * dt * dt
    G = np.zeros((CORE_DIM, NOISE_DIM))
    G[0:3, 0:3] = np.eye(3)
    G[3:6, 3:6] = R
    G[9:15, 6:12] = np.eye(6)
    return TransitionPair(F, G, dt)


def transition(convention, state_estimate, imu, dt, gravity=None):
    if convention == "liekf":
        # Deliberately linearized at the raw rates, not the bias-corrected
        # ones: the matrix stays a pure function of (sample, dt), so the
        # transitions stored for delayed-update transport are exactly the
        # ones a rewind would recompute. The linearization error this trades
        # away is of order |bias| * dt.
        return transition_left(imu, dt)
    if convention == "riekf":
        return transition_right(state_estimate, imu, dt, gravity)
    if convention == "ekf":
        return transition_ekf(state_estimate, imu, dt, gravity)
    raise ValueError(f"unknown error convention {convention!r}")


def _check_psd(P, tol=1e-9):
    P = np.asarray(P)
    try:
        np.linalg.cholesky(P + tol * np.eye(P.shape[0]))
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(P).min())
        raise ValueError(f"covariance is not PSD (min eigenvalue {min_eig:.3e})")


def propagate_covariance(P_core, T: TransitionPair, Q_d, check=True):
    """F P F' + G Q G', re-symmetrized."""
    if check:
        _check_psd(P_core)
    P = T.F @ P_core @ T.F.T + T.G @ Q_d @ T.G.T
    return (P + P.T) / 2.0


@dataclass(frozen=True)
class UpdateResult:
    state: SystemState
    covariance: np.ndarray
    correction: np.ndarray     # xi = K @ residual, full error dimension
    gain: np.ndarray
    correction_term: np.ndarray  # Lambda = I - K H, stored in sensor buffers


def kalman_step(P, meas: LinearMeasurement):
    """Gain, Joseph-form posterior covariance and correction for one update."""
    H = meas.H
    if H.shape[1] != P.shape[0]:
        raise ValueError(f"H has {H.shape[1]} columns, covariance dim is {P.shape[0]}")
    S = H @ P @ H.T + meas.noise_cov
    S = (S + S.T) / 2.0
    if np.linalg.cond(S) > 1e12:
        raise UpdateRejected("innovation covariance is numerically singular")
    K = np.linalg.solve(S, H @ P).T
    IKH = np.eye(P.shape[0]) - K @ H
    P_post = IKH @ P @ IKH.T + K @ meas.noise_cov @ K.T
    P_post = (P_post + P_post.T) / 2.0
    xi = K @ meas.residual
    return K, IKH, P_post, xi


def update(state: SystemState, P_full, meas: LinearMeasurement, convention="liekf") -> UpdateResult:
    """Measurement update: gain, Joseph-stabilized covariance, retraction."""
    K, IKH, P_post, xi = kalman_step(P_full, meas)
    new_state = retract(state, xi, convention)
    return UpdateResult(new_state, P_post, xi, K, IKH)


def gnss_measurement(state: SystemState, z, sigma, convention="liekf") -> LinearMeasurement:
    """World-frame antenna position measurement z = p + R * lever + noise.

    H is the derivative of the predicted measurement through the active
    convention's retraction, so that residual ~ H @ (truth-relative error).
    """
    R = state.nav.rotation
    p = state.nav.position
    lb = state.lever_arm
    h = p + R @ lb
    H = np.zeros((3, state.error_dim))
    if convention == "liekf":
        H[:, 0:3] = -R @ skew(lb)
        H[:, 6:9] = R
    elif convention == "riekf":
        H[:, 0:3] = -skew(p + R @ lb)
        H[:, 6:9] = np.eye(3)
    elif convention == "ekf":
        H[:, 0:3] = -R @ skew(lb)
        H[:, 6:9] = np.eye(3)
    else:
        raise ValueError(f"unknown error convention {convention!r}")
    H[:, 15:18] = R
    N = np.eye(3) * sigma ** 2
    return LinearMeasurement(np.asarray(z, dtype=float) - h, H, N, state.timestamp)


def _projection(X):
    """Pinhole projection and its Jacobian for a camera-frame point."""
    x, y, z = X
    uv = np.array([x / z, y / z])
    J = np.array([[1.0 / z, 0.0, -x / (z * z)], [0.0, 1.0 / z, -y / (z * z)]])
    return uv, J


def _anchor_clone_index(state: SystemState, feature):
    for i, c in enumerate(state.clones):
        if c.timestamp == feature.anchor_timestamp:
            return i
    raise ValueError(f"anchor clone at t={feature.anchor_timestamp} not in window")


def feature_world_position(state: SystemState, feature_index):
    """Landmark position in the world frame, plus Jacobian over the error
    vector (anchor clone and feature blocks)."""
    f = state.features[feature_index]
    ai = _anchor_clone_index(state, f)
    anchor = state.clones[ai]
    alpha, beta, rho = f.params
    X_a = np.array([alpha / rho, beta / rho, 1.0 / rho])
    p_w = anchor.position + anchor.rotation @ X_a
    D = np.zeros((3, state.error_dim))
    off_a = CORE_DIM + 6 * ai
    D[:, off_a:off_a + 3] = -anchor.rotation @ skew(X_a)
    D[:, off_a + 3:off_a + 6] = np.eye(3)
    dXa = np.array([
        [1.0 / rho, 0.0, -alpha / rho ** 2],
        [0.0, 1.0 / rho, -beta / rho ** 2],
        [0.0, 0.0, -1.0 / rho ** 2],
    ])
    off_f = CORE_DIM + 6 * state.num_clones + 3 * feature_index
    D[:, off_f:off_f + 3] = anchor.rotation @ dXa
    return p_w, D


def bearing_measurement(state: SystemState, clone_index, feature_index, uv, sigma,
                        min_depth=1e-3):
    """Normalized-image-plane observation of an in-state landmark from a
    window clone. Returns None when the predicted depth is non-positive
    (measurement skipped). Independent of the nav error convention because
    H only touches clone and feature blocks."""
    clone = state.clones[clone_index]
    p_w, D_pw = feature_world_position(state, feature_index)
    X = clone.rotation.T @ (p_w - clone.position)
    if X[2] <= min_depth:
        return None
    uv_pred, Pi = _projection(X)
    # Camera-frame point Jacobian: observing clone blocks plus the chain
    # through the landmark world position.
    D_X = clone.rotation.T @ D_pw
    off_c = CORE_DIM + 6 * clone_index
    D_X[:, off_c:off_c + 3] += skew(X)
    D_X[:, off_c + 3:off_c + 6] += -clone.rotation.T
    H = Pi @ D_X
    N = np.eye(2) * sigma ** 2
    return LinearMeasurement(np.asarray(uv, dtype=float) - uv_pred, H, N, state.timestamp)


def landmark_position_measurement(state: SystemState, feature_index, z, noise_cov):
    """Direct world-position constraint on an in-state landmark (used by
    collaborative updates with a remote agent's estimate)."""
    p_w, D = feature_world_position(state, feature_index)
    return LinearMeasurement(np.asarray(z, dtype=float) - p_w, D,
                             np.asarray(noise_cov, dtype=float), state.timestamp)
