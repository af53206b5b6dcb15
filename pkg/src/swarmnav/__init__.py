"""Decentralized multi-agent GNSS-visual-inertial state estimation.

Invariant Kalman filtering on extended poses, segmented covariance
bookkeeping with buffered delayed-measurement re-propagation, adaptive GNSS
outlier gating, covariance-intersection collaborative fusion, and a
deterministic swarm simulator with an evaluation CLI.
"""

from .agent import AgentFilter
from .covariance import CiResult, Correspondence, CovariancePartition, ci_fuse
from .filters import ImuSample, LinearMeasurement, NoiseDensities
from .gate import GateConfig, GateState, GateVerdict, adaptive_k, evaluate
from .lie import ExtendedPose, se23_exp, se23_log, so3_exp, so3_log
from .metrics import anees, anees_interval, ate, gate_score, nees
from .sensors import LandmarkMap, SensorSuite
from .sim import RunArtifacts, SimConfig, load_config, run_swarm
from .state import SystemState, error_between, retract
from .trajectories import TrajectorySpec, truth_at

__version__ = "0.1.0"

__all__ = [
    "AgentFilter", "CiResult", "Correspondence", "CovariancePartition",
    "ci_fuse", "ImuSample", "LinearMeasurement", "NoiseDensities",
    "GateConfig", "GateState", "GateVerdict", "adaptive_k", "evaluate",
    "ExtendedPose", "se23_exp", "se23_log", "so3_exp", "so3_log",
    "anees", "anees_interval", "ate", "gate_score", "nees",
    "LandmarkMap", "SensorSuite", "RunArtifacts", "SimConfig",
    "load_config", "run_swarm", "SystemState", "error_between", "retract",
    "TrajectorySpec", "truth_at", "__version__",
]
