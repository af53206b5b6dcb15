"""Deterministic event-driven multi-agent simulation.

A single priority queue of timestamped events drives every agent's IMU
propagation, GNSS gating and (possibly delayed) updates, keyframe camera
processing with landmark initialization, and the request/response message
exchange that triggers collaborative landmark updates. All randomness is
drawn from generators spawned off the one config seed, so identical configs
produce identical artifacts byte for byte.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .agent import AgentFilter
from .buffers import DelayExceedsHorizon
from .covariance import Correspondence
from .filters import NoiseDensities, UpdateRejected, feature_world_position
from .gate import GateConfig, GateState, evaluate, vio_kinematics
from .metrics import AteReport, ate, nees
from .network import BandwidthLedger, NetworkModel, SwarmMessage
from .sensors import (
    LandmarkMap,
    SensorSuite,
    grid_landmarks,
    inject_outliers,
    synthesize_bearings,
    synthesize_gnss,
    synthesize_imu,
)
from .state import SystemState, nav_error, retract
from .trajectories import TrajectorySpec, truth_at

ARTIFACT_HEADER = "# swarmnav-artifact v1"


class ConfigError(ValueError):
    """Invalid or incomplete simulation configuration."""


@dataclass(frozen=True)
class GateOptions:
    enabled: bool = True
    window: int = 10
    v_emp: float = 5.0
    beta: float = None
    fixed_threshold: float = None


@dataclass(frozen=True)
class OutlierOptions:
    rate: float = 0.0
    magnitude: float = 10.0


@dataclass(frozen=True)
class InitUncertainty:
    """1-sigma initial errors; the initial estimate is drawn from these
    around the truth, matching the initial covariance exactly."""

    roll_pitch: float = 0.02
    yaw: float = 0.1
    velocity: float = 0.1
    position: float = 0.3
    gyro_bias: float = 0.005
    accel_bias: float = 0.02
    lever: float = 0.01

    def sigmas(self):
        return np.array(
            [self.roll_pitch, self.roll_pitch, self.yaw]
            + [self.velocity] * 3 + [self.position] * 3
            + [self.gyro_bias] * 3 + [self.accel_bias] * 3 + [self.lever] * 3
        )


@dataclass(frozen=True)
class FilterOptions:
    max_clones: int = 6
    max_features: int = 16
    clone_every: int = 6        # camera frames per keyframe
    feature_prior_sigma: float = 1.0
    min_track_length: int = 3
    imu_buffer_capacity: int = 300
    sensor_buffer_capacity: int = 10


@dataclass(frozen=True)
class LandmarkOptions:
    count: int = 16
    extent: float = 30.0
    alt_low: float = 0.0
    alt_high: float = 6.0
    points: tuple = None  # explicit ((id, (x, y, z)), ...) overrides the grid


@dataclass(frozen=True)
class AgentConfig:
    agent_id: int
    trajectory: TrajectorySpec
    suite: SensorSuite
    use_gnss: bool = True  # lets individual agents fly GNSS-denied


@dataclass(frozen=True)
class SimConfig:
    agents: tuple
    convention: str = "liekf"
    seed: int = 0
    landmarks: LandmarkOptions = field(default_factory=LandmarkOptions)
    network: NetworkModel = field(default_factory=NetworkModel)
    gate: GateOptions = field(default_factory=GateOptions)
    outliers: OutlierOptions = field(default_factory=OutlierOptions)
    filter: FilterOptions = field(default_factory=FilterOptions)
    init: InitUncertainty = field(default_factory=InitUncertainty)
    use_gnss: bool = True
    use_vision: bool = True
    collaboration: bool = True
    request_rate: float = 10.0
    gnss_delay: float = 0.02
    record_rate: float = 10.0

    def __post_init__(self):
        if not self.agents:
            raise ConfigError("at least one agent is required")
        if self.convention not in ("liekf", "riekf", "ekf"):
            raise ConfigError(f"unknown filter variant {self.convention!r}")
        ids = [a.agent_id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ConfigError("agent ids must be unique")
        if self.gnss_delay < 0:
            raise ConfigError("gnss_delay must be non-negative")

    @property
    def duration(self):
        return min(a.trajectory.duration for a in self.agents)


# ----------------------------------------------------------------------
# config file loading


def _build(cls, d, path):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    valid = set(cls.__dataclass_fields__)
    unknown = set(d) - valid
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    if "agents" not in d or not d["agents"]:
        raise ConfigError("config must define at least one agent")
    agents = []
    for i, ad in enumerate(d["agents"]):
        if "trajectory" not in ad:
            raise ConfigError(f"agents[{i}]: missing trajectory section")
        traj_d = dict(ad["trajectory"])
        for key in ("center", "waypoints"):
            if key in traj_d and traj_d[key] is not None:
                traj_d[key] = tuple(map(tuple, traj_d[key])) if key == "waypoints" \
                    else tuple(traj_d[key])
        traj = _build(TrajectorySpec, traj_d, f"agents[{i}].trajectory")
        suite_d = dict(ad.get("suite") or {})
        if "noise" in suite_d:
            noise_d = dict(suite_d.pop("noise") or {})
            suite_d["noise"] = _build(NoiseDensities, noise_d, f"agents[{i}].suite.noise")
        for key in ("lever_arm", "cam_offset"):
            if key in suite_d:
                suite_d[key] = tuple(suite_d[key])
        suite = _build(SensorSuite, suite_d, f"agents[{i}].suite")
        agents.append(AgentConfig(ad.get("agent_id", i), traj, suite,
                                  ad.get("use_gnss", True)))
    lm_d = dict(d.get("landmarks") or {})
    if lm_d.get("points"):
        lm_d["points"] = tuple((int(k), tuple(v)) for k, v in lm_d["points"])
    kwargs = dict(
        agents=tuple(agents),
        landmarks=_build(LandmarkOptions, lm_d, "landmarks"),
        network=_build(NetworkModel, d.get("network"), "network"),
        gate=_build(GateOptions, d.get("gate"), "gate"),
        outliers=_build(OutlierOptions, d.get("outliers"), "outliers"),
        filter=_build(FilterOptions, d.get("filter"), "filter"),
        init=_build(InitUncertainty, d.get("init"), "init"),
    )
    for key in ("convention", "seed", "use_gnss", "use_vision", "collaboration",
                "request_rate", "gnss_delay", "record_rate"):
        if key in d:
            kwargs[key] = d[key]
    known = set(kwargs) | {"agents", "landmarks", "network", "gate", "outliers",
                           "filter", "init"}
    unknown = set(d) - known - {"agents"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    return SimConfig(**kwargs)


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(raw)


# ----------------------------------------------------------------------
# artifacts


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(ARTIFACT_HEADER + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


@dataclass
class RunArtifacts:
    config: SimConfig
    agents: list            # per-agent dict of result tables
    bandwidth: dict         # class -> (count, bytes)
    timing: dict            # wall-clock measurements, excluded from determinism
    counters: dict

    def summary(self):
        out = {
            "schema": 1,
            "convention": self.config.convention,
            "seed": int(self.config.seed),
            "agents": [],
            "bandwidth_bytes": int(sum(b for _, b in self.bandwidth.values())),
            "messages": {c: int(n) for c, (n, _) in self.bandwidth.items()},
            "counters": {k: int(v) for k, v in self.counters.items()},
        }
        for a in self.agents:
            rep = a["ate"]
            nees_rows = np.array(a["nees"]) if a["nees"] else np.zeros((0, 3))
            cov_rows = np.array(a["covariance"]) if a["covariance"] else np.zeros((0, 3))
            gate_rows = a["gate"]
            out["agents"].append({
                "agent_id": int(a["agent_id"]),
                "ate_rmse": float(rep.rmse),
                "mean_position_nees": float(nees_rows[:, 1].mean()) if len(nees_rows) else None,
                "mean_orientation_nees": float(nees_rows[:, 2].mean()) if len(nees_rows) else None,
                "mean_position_cov_trace": float(cov_rows[:, 1].mean()) if len(cov_rows) else None,
                "gate_accepted": int(sum(1 for g in gate_rows if g[4])),
                "gate_rejected": int(sum(1 for g in gate_rows if not g[4])),
            })
        return out

    def write(self, out_dir):
        import os
        os.makedirs(out_dir, exist_ok=True)
        for a in self.agents:
            i = a["agent_id"]
            _write_csv(os.path.join(out_dir, f"trajectory_agent{i}.csv"),
                       ["t", "est_x", "est_y", "est_z", "truth_x", "truth_y", "truth_z"],
                       a["trajectory"])
            _write_csv(os.path.join(out_dir, f"covariance_agent{i}.csv"),
                       ["t", "position_trace", "orientation_trace"],
                       a["covariance"])
            _write_csv(os.path.join(out_dir, f"nees_agent{i}.csv"),
                       ["t", "position_nees", "orientation_nees"],
                       a["nees"])
            _write_csv(os.path.join(out_dir, f"gate_agent{i}.csv"),
                       ["t", "speed", "threshold", "k", "accepted", "is_outlier"],
                       a["gate"])
        _write_csv(os.path.join(out_dir, "bandwidth.csv"),
                   ["class", "messages", "bytes"],
                   [(c, n, b) for c, (n, b) in sorted(self.bandwidth.items())])
        _write_csv(os.path.join(out_dir, "timing.csv"),
                   ["metric", "seconds"],
                   sorted(self.timing.items()))
        with open(os.path.join(out_dir, "summary.yaml"), "w") as fh:
            fh.write(ARTIFACT_HEADER + "\n")
            yaml.safe_dump(self.summary(), fh, sort_keys=True)
        return out_dir


# ----------------------------------------------------------------------
# the event loop

# Event ordering at equal timestamps: propagation first, then completions of
# delayed updates (so a new epoch's snapshot sees them), then new measurement
# epochs, camera frames, networking, recording.
_IMU, _GNSS_DONE, _GNSS, _CAMERA, _REQUEST, _MSG, _RECORD = range(7)


class _AgentRuntime:
    def __init__(self, cfg: SimConfig, acfg: AgentConfig, seeds):
        self.cfg = acfg
        suite = acfg.suite
        rng_init = np.random.default_rng(seeds["init"])
        truth0, _, _ = truth_at(acfg.trajectory, 0.0)
        truth_state = SystemState(
            nav=truth0,
            gyro_bias=np.zeros(3),
            accel_bias=np.zeros(3),
            lever_arm=np.asarray(suite.lever_arm, dtype=float),
            clones=(), features=(), timestamp=0.0,
        )
        sig = cfg.init.sigmas()
        e0 = sig * rng_init.standard_normal(18)
        est0 = retract(truth_state, e0, cfg.convention)
        P0 = np.diag(sig ** 2)
        self.filter = AgentFilter(
            est0, P0, cfg.convention, noise=suite.noise,
            camera_extrinsics=suite.camera_extrinsics,
            max_clones=cfg.filter.max_clones,
            max_features=cfg.filter.max_features,
            imu_buffer_capacity=cfg.filter.imu_buffer_capacity,
            sensor_buffer_capacity=cfg.filter.sensor_buffer_capacity,
        )
        self.gate_cfg = GateConfig(
            window=cfg.gate.window, v_emp=cfg.gate.v_emp,
            dt=1.0 / suite.gnss_rate, beta=cfg.gate.beta,
            fixed_threshold=cfg.gate.fixed_threshold,
        )
        self.gate = GateState()
        self.vio_positions = []
        self.inflight = {}        # gnss epoch -> completion time
        self.tracks = {}          # landmark id -> [(clone timestamp, uv), ...]
        self.frame_count = 0
        self.rows_traj = []
        self.rows_cov = []
        self.rows_nees = []
        self.rows_gate = []


def _clone_index_by_time(state, t):
    for i, c in enumerate(state.clones):
        if c.timestamp == t:
            return i
    return None


def run_swarm(config: SimConfig) -> RunArtifacts:
    t_start = time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    agent_seeds = root.spawn(len(config.agents))
    net_rng = np.random.default_rng(root.spawn(1)[0])
    lm = config.landmarks
    if lm.points is not None:
        lmap = LandmarkMap(tuple((i, np.asarray(p, dtype=float)) for i, p in lm.points))
    else:
        center = config.agents[0].trajectory.center
        lmap = LandmarkMap(grid_landmarks(center, lm.extent, lm.count,
                                          (lm.alt_low, lm.alt_high),
                                          np.random.SeedSequence((config.seed, 977))).points)

    duration = config.duration
    counters = {"gnss_applied": 0, "gnss_rejected_numerical": 0,
                "gnss_dropped_horizon": 0, "vision_rows": 0,
                "features_initialized": 0, "collab_updates": 0,
                "messages_dropped": 0}
    ledger = BandwidthLedger()
    heap = []
    seq = [0]

    def push(t, order, payload):
        seq[0] += 1
        heapq.heappush(heap, (round(t, 9), order, seq[0], payload))

    runtimes = []
    for idx, acfg in enumerate(config.agents):
        children = agent_seeds[idx].spawn(4)
        seeds = {"imu": children[0], "gnss": children[1],
                 "bearings": children[2], "init": children[3]}
        rt = _AgentRuntime(config, acfg, seeds)
        runtimes.append(rt)
        imu, _ = synthesize_imu(acfg.trajectory, acfg.suite, seeds["imu"])
        for s in imu:
            push(s.timestamp, _IMU, ("imu", idx, s))
        if config.use_gnss and acfg.use_gnss:
            fixes = synthesize_gnss(acfg.trajectory, acfg.suite, seeds["gnss"])
            if config.outliers.rate > 0:
                fixes = inject_outliers(fixes, config.outliers.rate,
                                        config.outliers.magnitude,
                                        np.random.SeedSequence((config.seed, 311, idx)))
            for fix in fixes:
                push(fix.timestamp, _GNSS, ("gnss", idx, fix))
        if config.use_vision:
            # Frames are snapped onto the IMU grid so clone poses line up
            # with the propagated state at the frame epoch.
            frames = synthesize_bearings(acfg.trajectory, acfg.suite, lmap,
                                         seeds["bearings"],
                                         snap_rate=acfg.suite.imu_rate)
            for fr in frames:
                if fr.timestamp <= duration:
                    push(fr.timestamp, _CAMERA, ("camera", idx, fr))
        if config.collaboration and len(config.agents) > 1:
            push(1.0 / config.request_rate, _REQUEST, ("request", idx))
        k = 1
        while k / config.record_rate <= duration + 1e-9:
            push(k / config.record_rate, _RECORD, ("record", idx))
            k += 1

    # ------------------------------------------------------------------

    def handle_gnss(t, idx, fix):
        rt = runtimes[idx]
        ag = rt.filter
        if len(rt.vio_positions) >= 3 and config.gate.enabled:
            speed, accel = vio_kinematics([p for _, p in rt.vio_positions[-3:]],
                                          rt.gate_cfg.dt)
        else:
            speed, accel = 0.0, 0.0
        if config.gate.enabled:
            verdict = evaluate(rt.gate, fix.position, speed, accel, rt.gate_cfg,
                               timestamp=t)
            rt.rows_gate.append((t, verdict.speed, verdict.threshold, verdict.k,
                                 verdict.accepted, fix.is_outlier))
            accepted = verdict.accepted
        else:
            accepted = True
        if accepted:
            sigma = max(rt.cfg.suite.gnss_sigma, 1e-6)
            try:
                if config.gnss_delay > 0:
                    snap = ag.snapshot()
                    done = t + config.gnss_delay
                    rt.inflight[t] = done
                    push(done, _GNSS_DONE, ("gnss_done", idx, fix, snap))
                else:
                    ag.update_gnss(fix.position, sigma)
                    counters["gnss_applied"] += 1
            except UpdateRejected:
                counters["gnss_rejected_numerical"] += 1
        rt.vio_positions.append((t, ag.state.nav.position.copy()))
        del rt.vio_positions[:-8]

    def handle_gnss_done(t, idx, fix, snap):
        rt = runtimes[idx]
        sigma = max(rt.cfg.suite.gnss_sigma, 1e-6)
        try:
            # Use the filter's own clock: the IMU event at this epoch has
            # already run, and buffered timestamps must match exactly.
            rt.filter.update_gnss_delayed(fix.position, sigma, snap,
                                          rt.filter.state.timestamp)
            counters["gnss_applied"] += 1
        except DelayExceedsHorizon:
            counters["gnss_dropped_horizon"] += 1
        except UpdateRejected:
            counters["gnss_rejected_numerical"] += 1
        rt.inflight.pop(fix.timestamp, None)

    def deferred(t, idx, order, payload):
        """Updates that touch the whole covariance must wait for in-flight
        delayed GNSS corrections whose epoch snapshot they would clobber."""
        rt = runtimes[idx]
        pending = [done for done in rt.inflight.values() if done > t]
        if pending:
            push(max(pending), order, payload)
            return True
        return False

    def handle_camera(t, idx, frame):
        rt = runtimes[idx]
        if deferred(t, idx, _CAMERA, ("camera", idx, frame)):
            return
        rt.frame_count += 1
        if (rt.frame_count - 1) % config.filter.clone_every != 0:
            return
        ag = rt.filter
        ci = ag.augment_clone()
        for lid in list(ag.dropped_feature_ids):
            rt.tracks.pop(lid, None)
        ag.dropped_feature_ids.clear()
        window_ts = {c.timestamp for c in ag.state.clones}
        in_state = {f.feature_id: j for j, f in enumerate(ag.state.features)}
        obs_now = []
        for lid, uv in frame.observations:
            hist = [e for e in rt.tracks.get(lid, []) if e[0] in window_ts]
            hist.append((ag.state.timestamp, uv))
            rt.tracks[lid] = hist[-config.filter.max_clones:]
            if lid in in_state:
                obs_now.append((ci, in_state[lid], uv))
        for lid in list(rt.tracks):
            rt.tracks[lid] = [e for e in rt.tracks[lid] if e[0] in window_ts]
            if not rt.tracks[lid]:
                del rt.tracks[lid]
        if obs_now:
            try:
                counters["vision_rows"] += rt.filter.update_vision(
                    obs_now, rt.cfg.suite.pixel_sigma)
            except UpdateRejected:
                pass
        observed = {lid for lid, _ in frame.observations}
        for lid in sorted(observed - set(in_state)):
            hist = rt.tracks.get(lid, [])
            if len(hist) < config.filter.min_track_length:
                continue
            if ag.state.num_features >= config.filter.max_features:
                break
            # Anchor at the newest clone so the landmark outlives the window.
            ordered = [hist[-1]] + hist[:-1]
            tracks_idx = []
            ok = True
            for ts, uv in ordered:
                k = _clone_index_by_time(ag.state, ts)
                if k is None:
                    ok = False
                    break
                tracks_idx.append((k, uv))
            if not ok:
                continue
            try:
                j = ag.initialize_feature(lid, tracks_idx,
                                          prior_sigma=config.filter.feature_prior_sigma,
                                          pixel_sigma=rt.cfg.suite.pixel_sigma,
                                          min_observations=config.filter.min_track_length)
            except UpdateRejected:
                continue
            if j is not None:
                counters["features_initialized"] += 1
                rt.tracks.pop(lid, None)  # absorbed; only fresh frames from here

    def handle_request(t, idx):
        rt = runtimes[idx]
        ids = tuple(f.feature_id for f in rt.filter.state.features)
        if ids:
            msg = SwarmMessage("request", idx, t, ids)
            for other in range(len(runtimes)):
                if other == idx:
                    continue
                ledger.record(msg)
                delivered, lat = config.network.sample_delivery(net_rng)
                if delivered:
                    push(t + lat, _MSG, ("msg", other, msg))
                else:
                    counters["messages_dropped"] += 1
        nxt = t + 1.0 / config.request_rate
        if nxt <= duration:
            push(nxt, _REQUEST, ("request", idx))

    def handle_msg(t, idx, msg):
        rt = runtimes[idx]
        ag = rt.filter
        if msg.msg_class == "request":
            in_state = {f.feature_id: j for j, f in enumerate(ag.state.features)}
            shared = [lid for lid in msg.payload if lid in in_state]
            if not shared:
                return
            P = ag.full_covariance()
            entries = []
            for lid in shared:
                p_w, D = feature_world_position(ag.state, in_state[lid])
                cov = D @ P @ D.T
                entries.append((lid, p_w, (cov + cov.T) / 2.0))
            reply = SwarmMessage("full", idx, t, tuple(entries))
            ledger.record(reply)
            delivered, lat = config.network.sample_delivery(net_rng)
            if delivered:
                push(t + lat, _MSG, ("msg", msg.sender, reply))
            else:
                counters["messages_dropped"] += 1
            return
        if deferred(t, idx, _MSG, ("msg", idx, msg)):
            return
        in_state = {f.feature_id for f in ag.state.features}
        corr = [Correspondence(lid, p, cov) for lid, p, cov in msg.payload
                if lid in in_state]
        if not corr:
            return
        try:
            counters["collab_updates"] += ag.update_collaborative(corr)
        except (UpdateRejected, ValueError):
            pass

    def handle_record(t, idx):
        rt = runtimes[idx]
        ag = rt.filter
        truth_pose, _, _ = truth_at(rt.cfg.trajectory, t)
        est = ag.state.nav
        rt.rows_traj.append((t, est.position[0], est.position[1], est.position[2],
                             truth_pose.position[0], truth_pose.position[1],
                             truth_pose.position[2]))
        core = ag.partition.core
        rt.rows_cov.append((t, np.trace(core[6:9, 6:9]), np.trace(core[0:3, 0:3])))
        e = nav_error(truth_pose, est, config.convention)
        try:
            pn = nees(e[6:9], core[6:9, 6:9])
            on = nees(e[0:3], core[0:3, 0:3])
            rt.rows_nees.append((t, pn, on))
        except ValueError:
            pass

    handlers = {
        "imu": lambda t, idx, s: runtimes[idx].filter.propagate(s),
        "gnss": handle_gnss,
        "gnss_done": handle_gnss_done,
        "camera": handle_camera,
        "request": handle_request,
        "msg": handle_msg,
        "record": handle_record,
    }

    while heap:
        t, _, _, payload = heapq.heappop(heap)
        if t > duration + 1e-9:
            continue
        kind = payload[0]
        handlers[kind](t, *payload[1:])

    agents_out = []
    for rt in runtimes:
        rows = np.array(rt.rows_traj)
        if len(rows):
            report = ate(rows[:, 0], rows[:, 1:4], rows[:, 0], rows[:, 4:7])
        else:
            report = AteReport(0.0, 0.0, np.zeros(3))
        agents_out.append({
            "agent_id": rt.cfg.agent_id,
            "trajectory": rt.rows_traj,
            "covariance": rt.rows_cov,
            "nees": rt.rows_nees,
            "gate": rt.rows_gate,
            "ate": report,
            "filter": rt.filter,
        })
    timing = {"wall_total": time.perf_counter() - t_start}
    bandwidth = {c: (ledger.counts[c], ledger.bytes[c]) for c in ledger.counts}
    return RunArtifacts(config, agents_out, bandwidth, timing, counters)
