"""Measurement synthesis: IMU, GNSS and landmark bearings from an analytic
trajectory, with seeded noise so identical seeds give identical streams.

IMU samples cover the interval ending at their timestamp and carry the
midpoint rate/force of that interval, which keeps the zero-order-hold
integrator's discretization error third order in the step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .filters import ImuSample, NoiseDensities
from .trajectories import TrajectorySpec, truth_at


@dataclass(frozen=True)
class SensorSuite:
    imu_rate: float = 200.0
    gnss_rate: float = 10.0
    camera_rate: float = 30.0
    noise: NoiseDensities = field(default_factory=NoiseDensities)
    gnss_sigma: float = 0.02          # m
    pixel_sigma: float = 0.002        # normalized image plane
    lever_arm: tuple = (0.1, 0.0, 0.05)   # IMU -> antenna, body frame, m
    cam_rotation: tuple = None        # camera-to-IMU rotation (3x3); default nadir
    cam_offset: tuple = (0.0, 0.0, 0.0)
    fov_half_tangent: float = 1.2     # field-of-view cut on |x/z|, |y/z|
    min_depth: float = 0.5            # m
    max_depth: float = 80.0           # m

    def __post_init__(self):
        for r in (self.imu_rate, self.gnss_rate, self.camera_rate):
            if r <= 0:
                raise ValueError("sensor rates must be positive")

    @property
    def camera_extrinsics(self):
        if self.cam_rotation is None:
            # Nadir camera: optical axis along -z (down), image x forward.
            R = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
        else:
            R = np.asarray(self.cam_rotation, dtype=float)
        return R, np.asarray(self.cam_offset, dtype=float)


@dataclass(frozen=True)
class GnssFix:
    timestamp: float
    position: np.ndarray
    is_outlier: bool = False


@dataclass(frozen=True)
class CameraFrame:
    timestamp: float
    observations: tuple  # ((landmark_id, uv), ...)


@dataclass(frozen=True)
class LandmarkMap:
    points: tuple  # ((id, 3-vector), ...)

    def __post_init__(self):
        ids = [i for i, _ in self.points]
        if len(ids) != len(set(ids)):
            raise ValueError("landmark ids must be unique")


def grid_landmarks(center, extent, count, altitude_range, seed):
    """Uniformly scattered landmarks around the trajectory area."""
    rng = np.random.default_rng(seed)
    c = np.asarray(center, dtype=float)
    pts = []
    for i in range(count):
        xy = c[:2] + rng.uniform(-extent, extent, size=2)
        z = rng.uniform(*altitude_range)
        pts.append((i, np.array([xy[0], xy[1], z])))
    return LandmarkMap(tuple(pts))


def synthesize_imu(spec: TrajectorySpec, suite: SensorSuite, seed):
    """IMU stream over the trajectory duration. Returns (samples,
    bias_truth) where bias_truth maps timestamp -> (gyro bias, accel bias)
    for the random-walk bias truth at each sample time."""
    rng = np.random.default_rng(seed)
    dt = 1.0 / suite.imu_rate
    n = int(round(spec.duration * suite.imu_rate))
    sq = np.sqrt(dt)
    nd = suite.noise
    bg = np.zeros(3)
    ba = np.zeros(3)
    samples = []
    bias_truth = {}
    for k in range(1, n + 1):
        t = k * dt
        _, omega, f = truth_at(spec, t - dt / 2.0)
        bg = bg + nd.gyro_walk * sq * rng.standard_normal(3)
        ba = ba + nd.accel_walk * sq * rng.standard_normal(3)
        gyro = omega + bg + nd.gyro_noise / sq * rng.standard_normal(3)
        accel = f + ba + nd.accel_noise / sq * rng.standard_normal(3)
        samples.append(ImuSample(gyro, accel, t))
        bias_truth[t] = (bg.copy(), ba.copy())
    return samples, bias_truth


def synthesize_gnss(spec: TrajectorySpec, suite: SensorSuite, seed):
    """Antenna-position fixes: p + R @ lever_arm plus white noise."""
    rng = np.random.default_rng(seed)
    dt = 1.0 / suite.gnss_rate
    n = int(np.floor(spec.duration / dt))
    lb = np.asarray(suite.lever_arm, dtype=float)
    fixes = []
    for k in range(1, n + 1):
        t = k * dt
        pose, _, _ = truth_at(spec, t)
        z = pose.position + pose.rotation @ lb + suite.gnss_sigma * rng.standard_normal(3)
        fixes.append(GnssFix(t, z))
    return fixes


def synthesize_bearings(spec: TrajectorySpec, suite: SensorSuite, lmap: LandmarkMap,
                        seed, snap_rate=None):
    """Normalized-plane landmark observations with field-of-view and depth
    culling; association is by landmark id. With `snap_rate` set, frame
    times are snapped onto that sampling grid (so clones line up with
    propagated filter states)."""
    rng = np.random.default_rng(seed)
    R_ic, p_ic = suite.camera_extrinsics
    dt = 1.0 / suite.camera_rate
    n = int(np.floor(spec.duration / dt))
    frames = []
    last_t = 0.0
    for k in range(1, n + 1):
        t = k * dt
        if snap_rate is not None:
            t = round(t * snap_rate) / snap_rate
        if t <= last_t or t > spec.duration:
            continue
        last_t = t
        pose, _, _ = truth_at(spec, t)
        R_c = pose.rotation @ R_ic
        p_c = pose.position + pose.rotation @ p_ic
        obs = []
        for lid, pw in lmap.points:
            X = R_c.T @ (np.asarray(pw) - p_c)
            if not (suite.min_depth < X[2] < suite.max_depth):
                continue
            uv = X[:2] / X[2]
            if np.max(np.abs(uv)) > suite.fov_half_tangent:
                continue
            obs.append((lid, uv + suite.pixel_sigma * rng.standard_normal(2)))
        frames.append(CameraFrame(t, tuple(obs)))
    return frames


def inject_outliers(fixes, rate, magnitude, seed):
    """Displace a Bernoulli(rate) subset of fixes by a random direction
    times magnitude; the labels travel with the fixes for scoring."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for fix in fixes:
        if rng.uniform() < rate:
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            out.append(replace(fix, position=fix.position + magnitude * d,
                               is_outlier=True))
        else:
            out.append(fix)
    return out
