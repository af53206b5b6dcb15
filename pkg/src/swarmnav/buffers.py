"""Time-horizon sliding buffers and buffered re-propagation of delayed
measurements.

Each agent keeps a high-rate IMU buffer of (state, core covariance,
transition, noise map, time) snapshots plus small per-sensor buffers of
(state, covariance, correction term, time). A measurement that completes
late is updated against the snapshot taken at its epoch and the corrected
mean/covariance are transported to the present through the stored
transition matrices, instead of rewinding and replaying the filter.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .filters import LinearMeasurement, kalman_step, mechanize
from .state import SystemState, retract


class DelayExceedsHorizon(RuntimeError):
    """The requested interval reaches past the oldest buffered entry."""


@dataclass(frozen=True)
class ImuBufferEntry:
    """One propagation step ending at `timestamp`: the post-step snapshot
    plus the transition/noise matrices and raw sample of the step that
    produced it."""

    state: SystemState
    P: np.ndarray          # core covariance at timestamp
    F: np.ndarray          # core transition of the step into timestamp
    G: np.ndarray
    Q: np.ndarray          # discrete process noise of the step
    timestamp: float
    imu: object = None     # the ImuSample driving the step (mean replay)


@dataclass(frozen=True)
class SensorBufferEntry:
    state: SystemState
    P: np.ndarray
    correction_term: np.ndarray  # Lambda = I - K H over the core block
    timestamp: float


@dataclass
class HistoryBuffer:
    """Chronological ring: oldest entries are discarded beyond capacity or
    beyond the time horizon."""

    capacity: int
    horizon: float = None
    entries: list = field(default_factory=list)
    _times: list = field(default_factory=list)
    last_evicted: float = None

    def __len__(self):
        return len(self.entries)

    def push(self, entry):
        t = entry.timestamp
        if self._times and t < self._times[-1]:
            raise ValueError(
                f"out-of-order push: t={t} is before last t={self._times[-1]}"
            )
        self.entries.append(entry)
        self._times.append(t)
        while len(self.entries) > self.capacity or (
            self.horizon is not None and self._times[0] < t - self.horizon
        ):
            self.last_evicted = self._times[0]
            self.entries.pop(0)
            self._times.pop(0)

    def lookup(self, t):
        """Entry at or immediately before t."""
        i = bisect.bisect_right(self._times, t)
        if i == 0:
            raise DelayExceedsHorizon(f"no entry at or before t={t}")
        return self.entries[i - 1]

    def range_after(self, t_start, t_end):
        """Entries with t_start < t <= t_end, oldest first. Raises when the
        interval start has already been evicted."""
        if self.last_evicted is not None and t_start < self.last_evicted:
            raise DelayExceedsHorizon(
                f"interval start t={t_start} predates buffer horizon"
            )
        lo = bisect.bisect_right(self._times, t_start)
        hi = bisect.bisect_right(self._times, t_end)
        return self.entries[lo:hi]

    def latest(self):
        if not self.entries:
            raise ValueError("buffer is empty")
        return self.entries[-1]


def accumulate_noise(buffer: HistoryBuffer, t_first, t_last):
    """Accumulated process noise over the stored steps with
    t_first <= t <= t_last (t_first is the first step after the measurement
    epoch). Matches chained single-step propagation:

        M_i = F_i M_{i-1} F_i' + G_i Q_i G_i'
    """
    steps = buffer.range_after(t_first - 1e-12, t_last)
    if not steps:
        raise ValueError(f"no buffered steps in [{t_first}, {t_last}]")
    dim = steps[0].F.shape[0]
    M = np.zeros((dim, dim))
    for e in steps:
        M = e.F @ M @ e.F.T + e.G @ e.Q @ e.G.T
    return M


def repropagate(buffer: HistoryBuffer, P_kk, xi_k, t_k, t_m):
    """Transport a corrected covariance and error mean from t_k to t_m using
    the stored transitions: returns (P_m, xi_m, Phi) with
    Phi = F_m ... F_{k+1}. t_m == t_k yields the identity transport with no
    added noise."""
    P_kk = np.asarray(P_kk, dtype=float)
    xi_k = np.asarray(xi_k, dtype=float)
    steps = buffer.range_after(t_k, t_m)
    dim = P_kk.shape[0]
    Phi = np.eye(dim)
    P = P_kk.copy()
    for e in steps:
        P = e.F @ P @ e.F.T + e.G @ e.Q @ e.G.T
        Phi = e.F @ Phi
    P = (P + P.T) / 2.0
    return P, Phi @ xi_k, Phi


def core_update_partitioned(partition, meas_core: LinearMeasurement):
    """Measurement update whose H touches only the core block, applied to a
    segmented covariance without assembling the full matrix.

    Returns (xi_core, xi_sensor_blocks, Lambda_core) and mutates the
    partition blocks in place:

        P^C+      Joseph form
        P^{C,S}+  = Lambda P^{C,S}
        P^{S,S}+  = P^{S,S} - K_S S K_S'
    """
    K, Lam, P_post, xi_core = kalman_step(partition.core, meas_core)
    H = meas_core.H
    S = H @ partition.core @ H.T + meas_core.noise_cov
    S = (S + S.T) / 2.0
    partition.core = P_post
    xi_blocks = {}
    for bid in list(partition.cross):
        cross = partition.cross[bid]
        K_s = np.linalg.solve(S, H @ cross).T
        xi_blocks[bid] = K_s @ meas_core.residual
        partition.cross[bid] = Lam @ cross
        self_block = partition.sensor_self[bid] - K_s @ S @ K_s.T
        partition.sensor_self[bid] = (self_block + self_block.T) / 2.0
    return xi_core, xi_blocks, Lam


def apply_delayed_update(agent, meas_core: LinearMeasurement, t_now, snapshot=None):
    """Apply a core-block measurement taken at meas_core.timestamp whose
    processing completes at t_now.

    The gain and correction are computed against the snapshot at the
    measurement epoch, then the posterior mean/covariance are transported to
    t_now through the buffered transitions. `snapshot` is a
    (state, partition) pair captured at the epoch; when omitted, the state
    and core covariance are taken from the IMU buffer and the agent's
    current partition is synchronized back to the epoch (valid only when no
    other update landed in between).

    Raises DelayExceedsHorizon when the epoch has left the IMU buffer; the
    caller should drop the measurement and report it.
    """
    t_k = meas_core.timestamp
    if t_k > t_now:
        raise ValueError("measurement timestamp is after the completion time")
    if snapshot is None:
        entry = agent.imu_buffer.lookup(t_k)
        part_k = agent.partition.copy()
        part_k.core = entry.P.copy()
        state_k = entry.state
        # Cross blocks must be synchronized no further than t_k; with no
        # intervening updates they are unchanged since their last sync.
        for bid in part_k.last_sync:
            if part_k.last_sync[bid] > t_k:
                raise ValueError("cross block was synchronized past the epoch")
    else:
        state_k, part_k = snapshot
        part_k = part_k.copy()

    xi_core, xi_blocks, Lam = core_update_partitioned(part_k, meas_core)

    # Transport the corrected covariance to t_now with the stored transition
    # products; sensor blocks are static so only the cross rows rotate.
    P_m, _, Phi = repropagate(agent.imu_buffer, part_k.core, xi_core, t_k, t_now)
    part_k.core = P_m
    part_k.timestamp = t_now
    for bid in part_k.cross:
        part_k.cross[bid] = Phi @ part_k.cross[bid]
        part_k.last_sync[bid] = t_now

    # Mean: apply the correction at the epoch and re-integrate the buffered
    # IMU samples. This costs a handful of strapdown steps (no transition
    # matrices) and reproduces rewind-and-replay exactly, where a linear
    # transport of the correction would drop second-order bias terms.
    xi = np.zeros(state_k.error_dim)
    xi[:xi_core.shape[0]] = xi_core
    for bid, xb in xi_blocks.items():
        sl = agent.partition.block_slice(state_k, bid)
        xi[sl] = xb
    state = retract(state_k, xi, agent.convention)
    for entry in agent.imu_buffer.range_after(t_k, t_now):
        state = mechanize(state, entry.imu, entry.timestamp - state.timestamp,
                          getattr(agent.noise, "gravity", None))
    agent.state = state
    agent.partition = part_k

    agent.gnss_buffer.push(SensorBufferEntry(agent.state, P_m.copy(), Lam, t_now))
    return xi
