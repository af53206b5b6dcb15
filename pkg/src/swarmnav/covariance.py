"""Segmented covariance bookkeeping and covariance-intersection fusion.

The full covariance is kept as a core block (navigation + biases + lever
arm, 18x18), one cross block per sensor group, and the sensor groups' own
blocks. Only the core is propagated at IMU rate; cross blocks are
reconstructed on demand by left-multiplying the accumulated transition
product (and any correction terms of updates that landed in between), which
is exact because the sensor states are static under IMU propagation.

Inter-agent fusion uses covariance intersection, so no inter-agent
cross-covariance is ever stored (the partition has no slot for one).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import (
    LinearMeasurement,
    TransitionPair,
    UpdateRejected,
    kalman_step,
    landmark_position_measurement,
    propagate_covariance,
)
from .state import CORE_DIM, retract


class StaleBlockError(RuntimeError):
    """A cross block was requested without synchronizing it first."""


class CovariancePartition:
    """Core covariance plus per-sensor-group cross and self blocks."""

    def __init__(self, core, timestamp=0.0):
        self.core = np.asarray(core, dtype=float)
        self.cross = {}          # block id -> 18 x d
        self.sensor_self = {}    # block id -> d x d
        self.last_sync = {}      # block id -> timestamp of last cross sync
        self.timestamp = timestamp

    def add_block(self, block_id, dim, timestamp=None):
        self.cross[block_id] = np.zeros((CORE_DIM, dim))
        self.sensor_self[block_id] = np.zeros((dim, dim))
        self.last_sync[block_id] = self.timestamp if timestamp is None else timestamp

    def block_dim(self, block_id):
        return self.cross[block_id].shape[1]

    def block_slice(self, state, block_id):
        """Slice of the block inside the full error vector. The single
        'visual' group covers all clone and feature entries."""
        if block_id != "visual":
            raise KeyError(block_id)
        return slice(CORE_DIM, CORE_DIM + 6 * state.num_clones + 3 * state.num_features)

    def copy(self):
        other = CovariancePartition(self.core.copy(), self.timestamp)
        other.cross = {k: v.copy() for k, v in self.cross.items()}
        other.sensor_self = {k: v.copy() for k, v in self.sensor_self.items()}
        other.last_sync = dict(self.last_sync)
        return other


def propagate_core_only(partition: CovariancePartition, T: TransitionPair, Q_d,
                        check=False):
    """Advance only the core block; cross blocks are left untouched and
    become stale (their pending transitions live in the IMU buffer)."""
    partition.core = propagate_covariance(partition.core, T, Q_d, check=check)
    partition.timestamp += T.dt
    return partition


def sync_cross(partition: CovariancePartition, imu_buffer, sensor_buffer, block_id,
               t_now):
    """Reconstruct a stale cross block at t_now by chaining, in time order,
    the stored core transitions F_i and the correction terms Lambda of any
    core updates that completed inside the stale interval."""
    t_from = partition.last_sync[block_id]
    if t_now < t_from:
        raise ValueError("cannot synchronize backwards in time")
    if t_now == t_from:
        return partition
    events = [(e.timestamp, 0, e.F) for e in imu_buffer.range_after(t_from, t_now)]
    if sensor_buffer is not None:
        bufs = sensor_buffer if isinstance(sensor_buffer, (list, tuple)) else [sensor_buffer]
        for buf in bufs:
            for e in buf.range_after(t_from, t_now):
                events.append((e.timestamp, 1, e.correction_term))
    op = np.eye(CORE_DIM)
    for _, _, mat in sorted(events, key=lambda ev: (ev[0], ev[1])):
        op = mat @ op
    partition.cross[block_id] = op @ partition.cross[block_id]
    partition.last_sync[block_id] = t_now
    return partition


def assemble_full(partition: CovariancePartition):
    """Symmetric full covariance [[core, cross], [cross', self]]. All blocks
    must be synchronized to the partition's own timestamp."""
    order = sorted(partition.cross)
    for bid in order:
        if partition.last_sync[bid] != partition.timestamp:
            raise StaleBlockError(
                f"block {bid!r} is stale (synced {partition.last_sync[bid]}, "
                f"core at {partition.timestamp}); call sync_cross first"
            )
    dims = [CORE_DIM] + [partition.block_dim(b) for b in order]
    D = sum(dims)
    P = np.zeros((D, D))
    P[:CORE_DIM, :CORE_DIM] = partition.core
    off = CORE_DIM
    for bid in order:
        d = partition.block_dim(bid)
        P[:CORE_DIM, off:off + d] = partition.cross[bid]
        P[off:off + d, :CORE_DIM] = partition.cross[bid].T
        P[off:off + d, off:off + d] = partition.sensor_self[bid]
        off += d
    return (P + P.T) / 2.0


def split_full(partition: CovariancePartition, P):
    """Write an assembled full covariance back into the partition blocks."""
    partition.core = np.array(P[:CORE_DIM, :CORE_DIM])
    off = CORE_DIM
    for bid in sorted(partition.cross):
        d = partition.block_dim(bid)
        partition.cross[bid] = np.array(P[:CORE_DIM, off:off + d])
        partition.sensor_self[bid] = np.array(P[off:off + d, off:off + d])
        off += d
    return partition


def insert_block_rows(partition: CovariancePartition, block_id, at, J, prior=None):
    """Grow a sensor block by new states whose error is J @ core_error
    (clone augmentation) or independent with the given prior covariance
    (landmark initialization). `at` is the insertion offset inside the
    block; J is (k x 18) or None when `prior` is given."""
    cross = partition.cross[block_id]
    selfb = partition.sensor_self[block_id]
    if J is not None:
        new_cross = (J @ partition.core).T          # 18 x k
        new_self_cross = J @ cross                  # k x d
        new_self = J @ partition.core @ J.T
    else:
        k = prior.shape[0]
        new_cross = np.zeros((CORE_DIM, k))
        new_self_cross = np.zeros((k, cross.shape[1]))
        new_self = np.asarray(prior, dtype=float)
    k = new_cross.shape[1]
    d = cross.shape[1]
    partition.cross[block_id] = np.hstack([cross[:, :at], new_cross, cross[:, at:]])
    grown = np.zeros((d + k, d + k))
    grown[:at, :at] = selfb[:at, :at]
    grown[:at, at + k:] = selfb[:at, at:]
    grown[at + k:, :at] = selfb[at:, :at]
    grown[at + k:, at + k:] = selfb[at:, at:]
    grown[at:at + k, at:at + k] = new_self
    grown[at:at + k, :at] = new_self_cross[:, :at]
    grown[at:at + k, at + k:] = new_self_cross[:, at:]
    grown[:at, at:at + k] = new_self_cross[:, :at].T
    grown[at + k:, at:at + k] = new_self_cross[:, at:].T
    partition.sensor_self[block_id] = grown
    return partition


def remove_block_rows(partition: CovariancePartition, block_id, at, size):
    """Marginalize states out of a sensor block by dropping their rows."""
    keep = np.r_[0:at, at + size:partition.block_dim(block_id)]
    partition.cross[block_id] = partition.cross[block_id][:, keep]
    partition.sensor_self[block_id] = partition.sensor_self[block_id][np.ix_(keep, keep)]
    return partition


@dataclass(frozen=True)
class CiResult:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float


def _check_spd(P, name):
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} covariance is not symmetric positive definite")


def _golden_section(f, lo=0.0, hi=1.0, iters=40):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    # Trace can be monotone; check the interval ends too.
    candidates = [(f(lo), lo), (f(hi), hi), (f(x), x)]
    return min(candidates)[1]


def ci_fuse(local_mean, local_cov, remote_mean, remote_cov) -> CiResult:
    """Covariance-intersection fusion of two estimates with unknown
    cross-correlation: P^-1 = w Pa^-1 + (1-w) Pb^-1, w chosen to minimize
    the fused trace."""
    Pa = np.asarray(local_cov, dtype=float)
    Pb = np.asarray(remote_cov, dtype=float)
    xa = np.asarray(local_mean, dtype=float)
    xb = np.asarray(remote_mean, dtype=float)
    if Pa.shape != Pb.shape:
        raise ValueError("covariance dimensions do not match")
    _check_spd(Pa, "local")
    _check_spd(Pb, "remote")
    Ia = np.linalg.inv(Pa)
    Ib = np.linalg.inv(Pb)

    def fused_cov(w):
        return np.linalg.inv(w * Ia + (1.0 - w) * Ib)

    w = _golden_section(lambda w: np.trace(fused_cov(w)))
    P = fused_cov(w)
    P = (P + P.T) / 2.0
    mean = P @ (w * (Ia @ xa) + (1.0 - w) * (Ib @ xb))
    return CiResult(mean, P, float(w))


@dataclass(frozen=True)
class Correspondence:
    """A co-observed landmark: the local in-state feature id plus the remote
    agent's world-position estimate of the same landmark."""

    feature_id: int
    remote_position: np.ndarray
    remote_cov: np.ndarray


_REJECTED = object()


def _ci_weighted_posterior(P, meas: LinearMeasurement, w):
    """Posterior covariance of the CI-weighted update (local inflated by
    1/w, remote pseudo-measurement inflated by 1/(1-w)). Returns None for
    the no-op limit w -> 1 and _REJECTED when the inflation makes the
    update numerically unusable."""
    if w >= 1.0 - 1e-9:
        return None  # uninformative remote: no-op
    if w < 1e-6:
        return _REJECTED  # discarding all local information entirely
    P_inf = P / w
    m = LinearMeasurement(meas.residual, meas.H, meas.noise_cov / (1.0 - w), meas.timestamp)
    try:
        return kalman_step(P_inf, m)
    except UpdateRejected:
        return _REJECTED


def _ci_trace_objective(P, meas: LinearMeasurement):
    """Trace of the CI-weighted posterior as a function of the weight,
    in closed form. With the local covariance inflated to P/w and the
    remote noise to R/(1-w),

        tr(P+) = tr(P)/w - tr(A S(w)^-1 A') / w^2,
        A = P H',  S(w) = (H P H')/w + R/(1-w),

    so the weight search costs one small solve per evaluation instead of a
    full-dimension update."""
    H = meas.H
    R = meas.noise_cov
    A = P @ H.T
    B = H @ A
    tp = np.trace(P)

    def objective(w):
        if w >= 1.0 - 1e-9:
            return tp  # uninformative remote: no-op
        if w < 1e-6:
            return np.inf  # discarding all local information entirely
        S = B / w + R / (1.0 - w)
        S = (S + S.T) / 2.0
        return tp / w - np.trace(A @ np.linalg.solve(S, A.T)) / w ** 2

    return objective


def collaborative_update(agent, correspondences):
    """CI-weighted landmark-constraint update from remote co-observations.

    Each remote estimate is treated as an independent pseudo-measurement of
    the shared (static) landmark with covariance inflated according to the
    CI weight, so no inter-agent correlation ever needs to be tracked.
    Correspondences whose landmark id is not in the local state are
    rejected.
    """
    if not correspondences:
        raise ValueError("empty correspondence set")
    local_ids = {f.feature_id: j for j, f in enumerate(agent.state.features)}
    for c in correspondences:
        if c.feature_id not in local_ids:
            raise ValueError(f"landmark id {c.feature_id} is not in the local state")
    applied = 0
    for c in correspondences:
        j = local_ids[c.feature_id]
        meas = landmark_position_measurement(agent.state, j, c.remote_position, c.remote_cov)
        P = agent.full_covariance()
        w = _golden_section(_ci_trace_objective(P, meas))
        result = _ci_weighted_posterior(P, meas, w)
        if result is None or result is _REJECTED:
            continue  # no usable information balance at this weight
        K, IKH, P_post, xi = result
        agent.state = retract(agent.state, xi, agent.convention)
        agent.set_full_covariance(P_post)
        local_ids = {f.feature_id: jj for jj, f in enumerate(agent.state.features)}
        applied += 1
    return applied
