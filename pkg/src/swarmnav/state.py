"""Per-agent system state, its error-vector layout, and the retraction.

The full state holds the navigation extended pose, IMU biases, the GNSS
antenna lever arm, M camera pose clones and N inverse-depth landmarks.
The matching error vector is laid out as

    [dtheta(3), dv(3), dp(3), dbg(3), dba(3), dlever(3),
     (clone_att(3), clone_pos(3)) x M, dfeature(3) x N]

for a total of 18 + 6M + 3N entries.

Three error conventions are supported for the navigation block:

* ``liekf``  -- left-invariant:  e = log(truth^-1 * est)
* ``riekf``  -- right-invariant: e = log(est * truth^-1)
* ``ekf``    -- body-frame attitude error with additive velocity/position

Clone, bias, lever-arm and feature errors are convention-independent
(body-frame clone attitude, plain differences est - truth). ``retract`` is
the exact inverse of ``error_between`` in every convention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lie import ExtendedPose, compose, inverse, se23_exp, se23_log, so3_exp, so3_log

CONVENTIONS = ("liekf", "riekf", "ekf")

CORE_DIM = 18  # nav 9 + biases 6 + lever 3


@dataclass(frozen=True)
class CameraClone:
    """Camera pose kept in the sliding window, keyed by capture timestamp."""

    rotation: np.ndarray
    position: np.ndarray
    timestamp: float


@dataclass(frozen=True)
class Feature:
    """Anchored inverse-depth landmark (alpha, beta, rho) = (x/z, y/z, 1/z)
    in the anchor clone's camera frame."""

    feature_id: int
    anchor_timestamp: float
    params: np.ndarray


@dataclass(frozen=True)
class SystemState:
    nav: ExtendedPose
    gyro_bias: np.ndarray
    accel_bias: np.ndarray
    lever_arm: np.ndarray
    clones: tuple
    features: tuple
    timestamp: float = 0.0

    @staticmethod
    def identity(timestamp=0.0):
        return SystemState(
            nav=ExtendedPose.identity(),
            gyro_bias=np.zeros(3),
            accel_bias=np.zeros(3),
            lever_arm=np.zeros(3),
            clones=(),
            features=(),
            timestamp=timestamp,
        )

    @property
    def num_clones(self):
        return len(self.clones)

    @property
    def num_features(self):
        return len(self.features)

    @property
    def error_dim(self):
        return CORE_DIM + 6 * len(self.clones) + 3 * len(self.features)


class StateIndexMap:
    """Named block -> (offset, size) table for the error vector of (M, N)."""

    def __init__(self, num_clones, num_features):
        self.num_clones = num_clones
        self.num_features = num_features
        self.blocks = {
            "att": (0, 3),
            "vel": (3, 3),
            "pos": (6, 3),
            "bg": (9, 3),
            "ba": (12, 3),
            "lever": (15, 3),
        }
        for i in range(num_clones):
            self.blocks[f"clone{i}"] = (CORE_DIM + 6 * i, 6)
        base = CORE_DIM + 6 * num_clones
        for j in range(num_features):
            self.blocks[f"feature{j}"] = (base + 3 * j, 3)
        self.dim = base + 3 * num_features

    def offset(self, name):
        return self.blocks[name][0]

    def slice(self, name):
        off, size = self.blocks[name]
        return slice(off, off + size)

    @staticmethod
    def for_state(state: SystemState):
        return StateIndexMap(state.num_clones, state.num_features)


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown error convention {convention!r}")


def _nav_error(truth: ExtendedPose, est: ExtendedPose, convention):
    if convention == "liekf":
        return se23_log(compose(inverse(truth), est))
    if convention == "riekf":
        return se23_log(compose(est, inverse(truth)))
    return np.concatenate([
        so3_log(truth.rotation.T @ est.rotation),
        est.velocity - truth.velocity,
        est.position - truth.position,
    ])


def _nav_retract(nav: ExtendedPose, e, convention):
    if convention == "liekf":
        return compose(nav, se23_exp(e))
    if convention == "riekf":
        return compose(se23_exp(e), nav)
    return ExtendedPose(
        nav.rotation @ so3_exp(e[:3]),
        nav.velocity + e[3:6],
        nav.position + e[6:9],
    )


def nav_error(truth: ExtendedPose, estimate: ExtendedPose, convention="liekf"):
    """9-dim navigation error (attitude, velocity, position) in the given
    convention; the nav block of error_between without requiring matching
    clone/feature structure."""
    _check_convention(convention)
    return _nav_error(truth, estimate, convention)


def _check_matching(truth: SystemState, estimate: SystemState):
    if truth.num_clones != estimate.num_clones or truth.num_features != estimate.num_features:
        raise ValueError("state structures (M, N) do not match")
    for a, b in zip(truth.clones, estimate.clones):
        if a.timestamp != b.timestamp:
            raise ValueError("clone timestamps do not match")
    for a, b in zip(truth.features, estimate.features):
        if a.feature_id != b.feature_id:
            raise ValueError("feature identities do not match")


def error_between(truth: SystemState, estimate: SystemState, convention="liekf"):
    """Error vector e such that estimate == retract(truth, e)."""
    _check_convention(convention)
    _check_matching(truth, estimate)
    parts = [
        _nav_error(truth.nav, estimate.nav, convention),
        estimate.gyro_bias - truth.gyro_bias,
        estimate.accel_bias - truth.accel_bias,
        estimate.lever_arm - truth.lever_arm,
    ]
    for ct, ce in zip(truth.clones, estimate.clones):
        parts.append(so3_log(ct.rotation.T @ ce.rotation))
        parts.append(ce.position - ct.position)
    for ft, fe in zip(truth.features, estimate.features):
        parts.append(fe.params - ft.params)
    return np.concatenate(parts) if parts else np.zeros(0)


def retract(state: SystemState, correction, convention="liekf") -> SystemState:
    """Apply an error vector to a state; exact inverse of error_between."""
    _check_convention(convention)
    correction = np.asarray(correction, dtype=float)
    if correction.shape != (state.error_dim,):
        raise ValueError(
            f"correction has length {correction.shape}, state error dim is {state.error_dim}"
        )
    idx = StateIndexMap.for_state(state)
    nav = _nav_retract(state.nav, correction[:9], convention)
    clones = []
    for i, c in enumerate(state.clones):
        e = correction[idx.slice(f"clone{i}")]
        clones.append(CameraClone(c.rotation @ so3_exp(e[:3]), c.position + e[3:6], c.timestamp))
    features = []
    for j, f in enumerate(state.features):
        features.append(replace(f, params=f.params + correction[idx.slice(f"feature{j}")]))
    return SystemState(
        nav=nav,
        gyro_bias=state.gyro_bias + correction[idx.slice("bg")],
        accel_bias=state.accel_bias + correction[idx.slice("ba")],
        lever_arm=state.lever_arm + correction[idx.slice("lever")],
        clones=tuple(clones),
        features=tuple(features),
        timestamp=state.timestamp,
    )


def clone_pose_from_nav(nav: ExtendedPose, camera_extrinsics):
    """Camera pose in the world frame from the IMU pose and fixed extrinsics
    (R_imu_cam, p_imu_cam)."""
    R_ic, p_ic = camera_extrinsics
    return nav.rotation @ R_ic, nav.position + nav.rotation @ p_ic


def augment_clone(state: SystemState, camera_extrinsics, max_clones=None) -> SystemState:
    """Append a camera clone of the current IMU pose to the sliding window."""
    if max_clones is not None and state.num_clones >= max_clones:
        raise ValueError(f"clone window is full (M = {state.num_clones})")
    R_c, p_c = clone_pose_from_nav(state.nav, camera_extrinsics)
    clone = CameraClone(R_c, p_c, state.timestamp)
    return replace(state, clones=state.clones + (clone,))


def marginalize_clone(state: SystemState, index) -> SystemState:
    """Drop the clone at the given index from the window."""
    if not 0 <= index < state.num_clones:
        raise ValueError(f"clone index {index} out of range (M = {state.num_clones})")
    clones = state.clones[:index] + state.clones[index + 1:]
    return replace(state, clones=clones)


def add_feature(state: SystemState, feature: Feature, max_features=None) -> SystemState:
    if max_features is not None and state.num_features >= max_features:
        raise ValueError(f"feature list is full (N = {state.num_features})")
    return replace(state, features=state.features + (feature,))


def remove_feature(state: SystemState, index) -> SystemState:
    if not 0 <= index < state.num_features:
        raise ValueError(f"feature index {index} out of range")
    return replace(state, features=state.features[:index] + state.features[index + 1:])
