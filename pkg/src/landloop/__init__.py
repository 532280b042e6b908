"""Human-in-the-loop workbench for a quadrotor landing task.

A deterministic kinematic simulator with a synthetic downward camera, a
from-scratch MLP policy trained online from human demonstrations and
hold-to-intervene corrections, a scripted pilot for unattended experiment
grids, PPO/random baselines, and a websocket bridge for live teleoperation.
"""

from .camera import CameraConfig, ObservationScales, PadDetection, PadTracker
from .dataset import HumanDataset, HumanSample, SampleSource
from .mlp import Minibatch, OptimizerState, PolicyParams, forward, init_policy
from .pilot import PilotConfig, ScriptedPilot
from .sim import (
    ActionCommand,
    EpisodeStatus,
    Simulator,
    StatusTag,
    TaskConfig,
    VehicleState,
    VelocityCommand,
)
from .session import (
    BurstTrainer,
    ControlSource,
    SessionConfig,
    SessionMode,
    TrainerConfig,
    run_session,
)

__version__ = "0.1.0"

__all__ = [
    "ActionCommand",
    "BurstTrainer",
    "CameraConfig",
    "ControlSource",
    "EpisodeStatus",
    "HumanDataset",
    "HumanSample",
    "Minibatch",
    "ObservationScales",
    "OptimizerState",
    "PadDetection",
    "PadTracker",
    "PilotConfig",
    "PolicyParams",
    "SampleSource",
    "ScriptedPilot",
    "SessionConfig",
    "SessionMode",
    "Simulator",
    "StatusTag",
    "TaskConfig",
    "TrainerConfig",
    "VehicleState",
    "VelocityCommand",
    "forward",
    "init_policy",
    "run_session",
]
