"""Deterministic quadrotor landing simulator.

Velocity-tracking kinematics: the autopilot turns stick commands into
body-frame reference velocities, the vehicle relaxes toward them with a
first-order lag, and roll/pitch follow a small-angle proxy of the commanded
horizontal acceleration. One agent step covers ``dt_agent`` seconds split
into ``physics_substeps`` sub-steps; each sub-step uses the exact solution
of the lag ODE under a command held constant, so trajectories are
reproducible bit for bit under a fixed seed and action sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidActionError

GRAVITY = 9.81

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class ActionCommand:
    """Four stick axes, each dimensionless in [-1, 1]."""

    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    throttle: float = 0.0

    def clamped(self) -> "ActionCommand":
        return ActionCommand(
            roll=_clamp(self.roll),
            pitch=_clamp(self.pitch),
            yaw=_clamp(self.yaw),
            throttle=_clamp(self.throttle),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw, self.throttle], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "ActionCommand":
        roll, pitch, yaw, throttle = (float(x) for x in a)
        return ActionCommand(roll, pitch, yaw, throttle)

    def is_finite(self) -> bool:
        return all(math.isfinite(x) for x in (self.roll, self.pitch, self.yaw, self.throttle))


@dataclass(frozen=True)
class VelocityCommand:
    """Autopilot reference velocities (SI units).

    v_lateral is along body-right, v_longitudinal along body-forward,
    heading_rate about world z, v_heave along world up (negative descends).
    """

    v_lateral: float = 0.0
    v_longitudinal: float = 0.0
    heading_rate: float = 0.0
    v_heave: float = 0.0


@dataclass(frozen=True)
class VehicleState:
    """Full simulator state: world-frame pose and velocities plus step index.

    ``angular_rate`` holds the backward difference of attitude over the last
    agent step; its yaw entry doubles as the lag-filter state for heading
    rate (yaw rate is held constant within an agent step, which makes the
    backward difference and the filter state identical).
    """

    position: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    attitude: Vec3 = (0.0, 0.0, 0.0)
    angular_rate: Vec3 = (0.0, 0.0, 0.0)
    time_step: int = 0


class StatusTag(Enum):
    RUNNING = "running"
    LANDED_SUCCESS = "landed_success"
    LANDED_FAILURE = "landed_failure"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class EpisodeStatus:
    tag: StatusTag
    touchdown_offset: float | None = None

    @property
    def running(self) -> bool:
        return self.tag is StatusTag.RUNNING

    @property
    def landed_success(self) -> bool:
        return self.tag is StatusTag.LANDED_SUCCESS


@dataclass(frozen=True)
class TaskConfig:
    """Landing task parameters. All units SI; defaults are the published setup."""

    pad_radius: float = 0.5
    start_height: float = 8.0
    start_xy_radius: float = 3.0
    dt_agent: float = 1.0 / 10.5
    physics_substeps: int = 10
    max_lateral_speed: float = 2.0
    max_longitudinal_speed: float = 2.0
    max_heading_rate: float = 1.0
    max_heave_speed: float = 1.5
    tau_velocity: float = 0.3
    tau_heading: float = 0.3
    max_episode_steps: int = 500
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.physics_substeps < 1:
            raise ValueError("physics_substeps must be >= 1")
        if self.dt_agent <= 0:
            raise ValueError("dt_agent must be positive")


def _clamp(x: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return lo if x < lo else hi if x > hi else x


def body_axes(yaw: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """World-frame (forward, right) unit vectors for a given yaw (z-up)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return (c, s), (s, -c)


def autopilot_map(action: ActionCommand, cfg: TaskConfig) -> VelocityCommand:
    """Scale stick deflections into reference velocities, clamping to [-1, 1] first."""
    if not action.is_finite():
        raise InvalidActionError(f"non-finite action: {action}")
    a = action.clamped()
    return VelocityCommand(
        v_lateral=a.roll * cfg.max_lateral_speed,
        v_longitudinal=a.pitch * cfg.max_longitudinal_speed,
        heading_rate=a.yaw * cfg.max_heading_rate,
        v_heave=a.throttle * cfg.max_heave_speed,
    )


def step_dynamics(state: VehicleState, cmd: VelocityCommand, cfg: TaskConfig) -> VehicleState:
    """Advance one agent step under a fixed velocity command.

    Velocity relaxes toward the commanded body-frame reference with time
    constant tau_velocity (exact exponential per sub-step); yaw rate follows
    the commanded heading rate with tau_heading but is held constant across
    the agent step; position integrates the exact lag solution; z clamps at
    ground level.
    """
    px, py, pz = state.position
    vx, vy, vz = state.velocity
    prev_roll, prev_pitch, prev_yaw = state.attitude
    roll, pitch, yaw = state.attitude

    # Heading rate: one exact lag update per agent step, then constant.
    r_prev = state.angular_rate[2]
    decay_psi = math.exp(-cfg.dt_agent / cfg.tau_heading)
    r_act = cmd.heading_rate + (r_prev - cmd.heading_rate) * decay_psi

    dt = cfg.dt_agent / cfg.physics_substeps
    decay_v = math.exp(-dt / cfg.tau_velocity)
    tau = cfg.tau_velocity

    grounded = False
    for _ in range(cfg.physics_substeps):
        fwd, right = body_axes(yaw)
        cx = cmd.v_longitudinal * fwd[0] + cmd.v_lateral * right[0]
        cy = cmd.v_longitudinal * fwd[1] + cmd.v_lateral * right[1]
        cz = cmd.v_heave

        # Commanded acceleration drives the small-angle attitude proxy.
        ax = (cx - vx) / tau
        ay = (cy - vy) / tau
        a_fwd = ax * fwd[0] + ay * fwd[1]
        a_right = ax * right[0] + ay * right[1]
        roll = a_right / GRAVITY
        pitch = -a_fwd / GRAVITY

        # Exact lag solution over the sub-step, command held constant.
        px += cx * dt + (vx - cx) * tau * (1.0 - decay_v)
        py += cy * dt + (vy - cy) * tau * (1.0 - decay_v)
        pz += cz * dt + (vz - cz) * tau * (1.0 - decay_v)
        vx = cx + (vx - cx) * decay_v
        vy = cy + (vy - cy) * decay_v
        vz = cz + (vz - cz) * decay_v

        yaw += r_act * dt

        if pz <= 0.0:
            pz = 0.0
            grounded = True
            break

    dt_a = cfg.dt_agent
    rate = (
        (roll - prev_roll) / dt_a,
        (pitch - prev_pitch) / dt_a,
        r_act if not grounded else (yaw - prev_yaw) / dt_a,
    )
    return VehicleState(
        position=(px, py, pz),
        velocity=(vx, vy, vz),
        attitude=(roll, pitch, yaw),
        angular_rate=rate,
        time_step=state.time_step + 1,
    )


def reset_episode(cfg: TaskConfig, rng: np.random.Generator) -> VehicleState:
    """Fresh start: fixed height, (x, y) uniform on the start disc, everything else zero."""
    u = rng.random()
    theta = rng.random() * 2.0 * math.pi
    r = cfg.start_xy_radius * math.sqrt(u)
    return VehicleState(position=(r * math.cos(theta), r * math.sin(theta), cfg.start_height))


def check_termination(
    state: VehicleState,
    cfg: TaskConfig,
    pad_center: tuple[float, float] = (0.0, 0.0),
) -> EpisodeStatus:
    """Classify the episode: ground contact by the pad-radius rule, else timeout at the step cap."""
    px, py, pz = state.position
    if pz <= 0.0:
        offset = math.hypot(px - pad_center[0], py - pad_center[1])
        tag = StatusTag.LANDED_SUCCESS if offset <= cfg.pad_radius else StatusTag.LANDED_FAILURE
        return EpisodeStatus(tag=tag, touchdown_offset=offset)
    if state.time_step >= cfg.max_episode_steps:
        return EpisodeStatus(tag=StatusTag.TIMEOUT)
    return EpisodeStatus(tag=StatusTag.RUNNING)


@dataclass
class Simulator:
    """Owns one vehicle and its reset stream. Exactly one loop may step it."""

    cfg: TaskConfig
    pad_center: tuple[float, float] = (0.0, 0.0)
    rng: np.random.Generator = field(default=None)  # type: ignore[assignment]
    state: VehicleState = field(default_factory=VehicleState)

    def __post_init__(self) -> None:
        if self.rng is None:
            self.rng = np.random.default_rng(self.cfg.rng_seed)

    def reset(self) -> VehicleState:
        self.state = reset_episode(self.cfg, self.rng)
        return self.state

    def step(self, action: ActionCommand) -> tuple[VehicleState, EpisodeStatus]:
        cmd = autopilot_map(action, self.cfg)
        self.state = step_dynamics(self.state, cmd, self.cfg)
        return self.state, self.status()

    def status(self) -> EpisodeStatus:
        return check_termination(self.state, self.cfg, self.pad_center)
