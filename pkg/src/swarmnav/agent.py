"""Single-agent estimator: strapdown propagation with a segmented
covariance, sliding-window camera clones, inverse-depth landmarks, and the
GNSS / vision / collaborative update paths.

The covariance is split into an 18-dim core (propagated every IMU step) and
one "visual" group holding all clone and landmark entries; the cross block
is brought up to date lazily from the buffered transitions just before it
is needed, which keeps the per-step propagation cost independent of the
window size.
"""

from __future__ import annotations

import numpy as np

from . import state as st
from .buffers import (
    HistoryBuffer,
    ImuBufferEntry,
    SensorBufferEntry,
    apply_delayed_update,
    core_update_partitioned,
)
from .covariance import (
    CovariancePartition,
    assemble_full,
    collaborative_update,
    insert_block_rows,
    propagate_core_only,
    remove_block_rows,
    split_full,
    sync_cross,
)
from .filters import (
    ImuSample,
    LinearMeasurement,
    NoiseDensities,
    bearing_measurement,
    gnss_measurement,
    mechanize,
    stack_measurements,
    transition,
    update,
)
from .lie import skew
from .state import CORE_DIM, Feature, SystemState, retract


class AgentFilter:
    """One vehicle's filter with buffered history for delayed measurements."""

    def __init__(self, state: SystemState, covariance, convention="liekf",
                 noise: NoiseDensities = None,
                 camera_extrinsics=None,
                 max_clones=6, max_features=30,
                 imu_buffer_capacity=300, sensor_buffer_capacity=10,
                 buffer_horizon=None):
        if convention not in st.CONVENTIONS:
            raise ValueError(f"unknown error convention {convention!r}")
        self.convention = convention
        self.noise = noise if noise is not None else NoiseDensities()
        if camera_extrinsics is None:
            camera_extrinsics = (np.eye(3), np.zeros(3))
        self.camera_extrinsics = camera_extrinsics
        self.max_clones = max_clones
        self.max_features = max_features
        self.state = state
        covariance = np.asarray(covariance, dtype=float)
        if covariance.shape != (state.error_dim, state.error_dim):
            raise ValueError(
                f"covariance is {covariance.shape}, state error dim is {state.error_dim}"
            )
        self.partition = CovariancePartition(covariance[:CORE_DIM, :CORE_DIM],
                                             timestamp=state.timestamp)
        self.partition.add_block("visual", state.error_dim - CORE_DIM)
        if state.error_dim > CORE_DIM:
            split_full(self.partition, covariance)
        self.imu_buffer = HistoryBuffer(imu_buffer_capacity, buffer_horizon)
        self.gnss_buffer = HistoryBuffer(sensor_buffer_capacity, buffer_horizon)
        self.visual_buffer = HistoryBuffer(sensor_buffer_capacity, buffer_horizon)
        self.dropped_feature_ids = set()

    # ------------------------------------------------------------------
    # covariance access

    def sync(self):
        """Bring all cross blocks up to the current time."""
        for bid in self.partition.cross:
            sync_cross(self.partition, self.imu_buffer,
                       [self.gnss_buffer, self.visual_buffer], bid,
                       self.partition.timestamp)
        return self.partition

    def full_covariance(self):
        self.sync()
        return assemble_full(self.partition)

    def set_full_covariance(self, P):
        split_full(self.partition, P)
        for bid in self.partition.last_sync:
            self.partition.last_sync[bid] = self.partition.timestamp

    def snapshot(self):
        """(state, synchronized partition copy) at the current time; used as
        the epoch reference of a measurement that will complete late."""
        self.sync()
        return self.state, self.partition.copy()

    # ------------------------------------------------------------------
    # propagation

    def propagate(self, imu: ImuSample):
        dt = imu.timestamp - self.state.timestamp
        if dt <= 0:
            raise ValueError(
                f"IMU sample at t={imu.timestamp} is not after state t={self.state.timestamp}"
            )
        T = transition(self.convention, self.state, imu, dt, self.noise.gravity)
        self.state = mechanize(self.state, imu, dt, self.noise.gravity)
        Q = self.noise.discrete_q(dt)
        propagate_core_only(self.partition, T, Q)
        # Pin the partition clock to the state clock; summing dt increments
        # would drift away from the exact sample timestamps.
        self.partition.timestamp = self.state.timestamp
        self.imu_buffer.push(ImuBufferEntry(
            self.state, self.partition.core.copy(), T.F, T.G, Q, imu.timestamp,
            imu))
        return self.state

    # ------------------------------------------------------------------
    # updates

    def update_gnss(self, z, sigma):
        """Immediate antenna-position update, applied through the segmented
        core-block path (no full-matrix assembly)."""
        meas = gnss_measurement(self.state, z, sigma, self.convention)
        meas_core = LinearMeasurement(meas.residual, meas.H[:, :CORE_DIM],
                                      meas.noise_cov, meas.timestamp)
        self.sync()
        xi_core, xi_blocks, lam = core_update_partitioned(self.partition, meas_core)
        xi = np.zeros(self.state.error_dim)
        xi[:CORE_DIM] = xi_core
        for bid, xb in xi_blocks.items():
            xi[self.partition.block_slice(self.state, bid)] = xb
        self.state = retract(self.state, xi, self.convention)
        self.gnss_buffer.push(SensorBufferEntry(
            self.state, self.partition.core.copy(), lam, self.state.timestamp))
        return xi

    def update_gnss_delayed(self, z, sigma, snapshot, t_now):
        """Apply a GNSS fix whose processing finished at t_now against the
        epoch snapshot, transporting the correction forward through the
        buffered transitions."""
        state_k, _ = snapshot
        meas = gnss_measurement(state_k, z, sigma, self.convention)
        meas_core = LinearMeasurement(meas.residual, meas.H[:, :CORE_DIM],
                                      meas.noise_cov, state_k.timestamp)
        return apply_delayed_update(self, meas_core, t_now, snapshot=snapshot)

    def update_vision(self, observations, pixel_sigma):
        """Stacked normalized-image observations (clone_index, feature_index,
        uv) of in-state landmarks; returns the number of rows applied."""
        measurements = []
        for clone_index, feature_index, uv in observations:
            m = bearing_measurement(self.state, clone_index, feature_index, uv,
                                    pixel_sigma)
            if m is not None:
                measurements.append(m)
        if not measurements:
            return 0
        meas = stack_measurements(measurements)
        P = self.full_covariance()
        result = update(self.state, P, meas, self.convention)
        self.state = result.state
        self.set_full_covariance(result.covariance)
        self._push_visual(result.correction_term)
        return len(measurements)

    def update_collaborative(self, correspondences):
        """Covariance-intersection landmark constraints from a neighbor."""
        n = collaborative_update(self, correspondences)
        if n:
            self._push_visual(np.eye(CORE_DIM))
        return n

    def _push_visual(self, correction_term):
        t = self.state.timestamp
        if self.visual_buffer.entries and self.visual_buffer.entries[-1].timestamp == t:
            return  # one marker per epoch is enough for cross-block chaining
        self.visual_buffer.push(SensorBufferEntry(
            self.state, self.partition.core.copy(),
            np.asarray(correction_term)[:CORE_DIM, :CORE_DIM], t))

    # ------------------------------------------------------------------
    # window management

    def _clone_jacobian(self):
        """d(clone error) / d(core error) for a clone of the current pose."""
        R_ic, p_ic = self.camera_extrinsics
        R = self.state.nav.rotation
        p = self.state.nav.position
        J = np.zeros((6, CORE_DIM))
        if self.convention == "riekf":
            J[0:3, 0:3] = (R @ R_ic).T
            J[3:6, 0:3] = -skew(p + R @ p_ic)
            J[3:6, 6:9] = np.eye(3)
        else:
            J[0:3, 0:3] = R_ic.T
            J[3:6, 0:3] = -R @ skew(p_ic)
            J[3:6, 6:9] = R if self.convention == "liekf" else np.eye(3)
        return J

    def augment_clone(self):
        """Push the current camera pose into the sliding window, evicting the
        oldest clone (and any landmark anchored to it) when full."""
        if self.state.num_clones >= self.max_clones:
            self.marginalize_clone(0)
        self.sync()
        at = 6 * self.state.num_clones
        insert_block_rows(self.partition, "visual", at, self._clone_jacobian())
        self.state = st.augment_clone(self.state, self.camera_extrinsics,
                                      self.max_clones)
        return self.state.num_clones - 1

    def marginalize_clone(self, index):
        """Drop a window clone; landmarks anchored to it are dropped too and
        their ids remembered so they are not immediately re-initialized from
        stale tracks."""
        t_anchor = self.state.clones[index].timestamp
        for j in reversed(range(self.state.num_features)):
            if self.state.features[j].anchor_timestamp == t_anchor:
                self.dropped_feature_ids.add(self.state.features[j].feature_id)
                self.remove_feature(j)
        self.sync()
        remove_block_rows(self.partition, "visual", 6 * index, 6)
        self.state = st.marginalize_clone(self.state, index)

    def add_feature(self, feature: Feature, prior_sigma):
        self.sync()
        at = 6 * self.state.num_clones + 3 * self.state.num_features
        insert_block_rows(self.partition, "visual", at, None,
                          prior=np.eye(3) * prior_sigma ** 2)
        self.state = st.add_feature(self.state, feature, self.max_features)
        self.dropped_feature_ids.discard(feature.feature_id)
        return self.state.num_features - 1

    def remove_feature(self, index):
        self.sync()
        remove_block_rows(self.partition, "visual",
                          6 * self.state.num_clones + 3 * index, 3)
        self.state = st.remove_feature(self.state, index)

    def initialize_feature(self, feature_id, tracks, prior_sigma=1.0,
                           pixel_sigma=1.0 / 500.0, min_observations=3):
        """Triangulate a tracked point from window clones and add it as an
        inverse-depth landmark, then absorb the track as a stacked update.

        `tracks` is a list of (clone_index, uv) normalized observations.
        Returns the landmark's state index, or None when triangulation is not
        possible (too few views or degenerate geometry).
        """
        if len(tracks) < min_observations:
            return None
        p_w = self._triangulate(tracks)
        if p_w is None:
            return None
        # Sanity: the triangulated point must actually explain the track;
        # a bad linearization point here would poison the filter.
        for ci, uv in tracks:
            clone = self.state.clones[ci]
            X = clone.rotation.T @ (p_w - clone.position)
            if X[2] <= 1e-3 or np.max(np.abs(X[:2] / X[2] - uv)) > 0.05:
                return None
        ai, _ = tracks[0]
        anchor = self.state.clones[ai]
        X_a = anchor.rotation.T @ (p_w - anchor.position)
        if X_a[2] <= 1e-3:
            return None
        params = np.array([X_a[0] / X_a[2], X_a[1] / X_a[2], 1.0 / X_a[2]])
        feature = Feature(feature_id, anchor.timestamp, params)
        j = self.add_feature(feature, prior_sigma)
        obs = [(ci, j, uv) for ci, uv in tracks]
        self.update_vision(obs, pixel_sigma)
        return j

    def _triangulate(self, tracks):
        """Midpoint triangulation: world point closest to all bearing rays."""
        A = np.zeros((3, 3))
        b = np.zeros(3)
        for clone_index, uv in tracks:
            clone = self.state.clones[clone_index]
            d = clone.rotation @ np.array([uv[0], uv[1], 1.0])
            d = d / np.linalg.norm(d)
            M = np.eye(3) - np.outer(d, d)
            A += M
            b += M @ clone.position
        if np.linalg.cond(A) > 1e8:
            return None
        return np.linalg.solve(A, b)
