"""Scripted landing pilot: stands in for a human operator.

Flies a proportional horizontal correction toward the pad plus a gated
descent, optionally with Gaussian stick noise, and decides when to grab the
sticks during supervised flights via a height-dependent hysteresis band on
the horizontal error. Deterministic under a seeded generator, so whole
experiment grids can run unattended.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import PadDetection
from .sim import ActionCommand, TaskConfig, VehicleState, body_axes

IMAGE_BORDER_MARGIN_PX = 20.0


@dataclass(frozen=True)
class PilotConfig:
    """Gains, imperfection model, and engagement thresholds.

    Thresholds are linear in height h. Imperfection has two parts: white
    per-step stick noise everywhere, and a per-episode roll/pitch trim bias
    applied only while flying a full demonstration. The trim stands in for
    the correlated sloppiness of sustained piloting (a whole attempt flown
    slightly off-center); short corrective grabs stay sharp. That contrast
    is what makes demonstrations imperfect teachers worth correcting.
    """

    kp_horizontal: float = 0.8  # 1/s
    descent_speed: float = 0.6  # m/s
    descent_gate_slope: float = 0.15
    descent_gate_offset: float = 0.3
    engage_slope: float = 0.10
    engage_offset: float = 0.15
    release_slope: float = 0.03
    release_offset: float = 0.06
    action_noise_std: float = 0.05
    demo_trim_std: float = 0.06
    seed: int = 0

    def descent_gate(self, h: float) -> float:
        return self.descent_gate_slope * h + self.descent_gate_offset

    def engage_threshold(self, h: float) -> float:
        return self.engage_slope * h + self.engage_offset

    def release_threshold(self, h: float) -> float:
        return self.release_slope * h + self.release_offset

    def __post_init__(self) -> None:
        # Hysteresis must stay well-formed at every height.
        if self.release_slope > self.engage_slope or self.release_offset >= self.engage_offset:
            raise ValueError("release threshold must sit below engage threshold for all h")


def horizontal_error(state: VehicleState,
                     pad_center: tuple[float, float] = (0.0, 0.0)) -> tuple[float, float]:
    """Vehicle offset from the pad, expressed in the body-yaw frame (right, fwd)."""
    ex = state.position[0] - pad_center[0]
    ey = state.position[1] - pad_center[1]
    fwd, right = body_axes(state.attitude[2])
    return ex * right[0] + ey * right[1], ex * fwd[0] + ey * fwd[1]


def pilot_action(
    state: VehicleState,
    cfg: PilotConfig,
    task: TaskConfig,
    rng: np.random.Generator | None = None,
    pad_center: tuple[float, float] = (0.0, 0.0),
    trim: tuple[float, float] = (0.0, 0.0),
) -> ActionCommand:
    """Stick command for one step: proportional horizontal capture, gated descent."""
    e_right, e_fwd = horizontal_error(state, pad_center)
    err = math.hypot(e_right, e_fwd)
    h = state.position[2]

    roll = -cfg.kp_horizontal * e_right / task.max_lateral_speed + trim[0]
    pitch = -cfg.kp_horizontal * e_fwd / task.max_longitudinal_speed + trim[1]
    if err < cfg.descent_gate(h):
        heave = -cfg.descent_speed
    else:
        heave = -0.15 * cfg.descent_speed
    throttle = heave / task.max_heave_speed

    if rng is not None and cfg.action_noise_std > 0.0:
        noise = rng.normal(0.0, cfg.action_noise_std, size=4)
        roll += noise[0]
        pitch += noise[1]
        yaw = noise[2]
        throttle += noise[3]
    else:
        yaw = 0.0
    return ActionCommand(roll=roll, pitch=pitch, yaw=yaw, throttle=throttle).clamped()


def intervention_gate(
    state: VehicleState,
    det: PadDetection,
    engaged: bool,
    cfg: PilotConfig,
    image_size: tuple[float, float] = (320.0, 240.0),
    pad_center: tuple[float, float] = (0.0, 0.0),
) -> bool:
    """Hysteresis rule for grabbing/releasing the sticks while supervising.

    Engage when the flight predicts a miss: horizontal error above the
    height-scaled engage threshold, a committed descent outside the lateral
    descent envelope, or the pad detection drifting within 20 px of the
    image border. Release only once the error drops under the (lower)
    release threshold.
    """
    e_right, e_fwd = horizontal_error(state, pad_center)
    err = math.hypot(e_right, e_fwd)
    h = state.position[2]
    if not engaged:
        descending_off_envelope = (
            state.velocity[2] < -0.5 * cfg.descent_speed and err > cfg.descent_gate(h)
        )
        if descending_off_envelope:
            return True
        # Border proximity only matters while the pad is a distinct blob; at
        # touchdown heights the disc fills the frame and its center pixel is
        # meaningless, so losing it is not grounds for intervention.
        pad_fills_view = det.radius_px >= min(image_size) / 2.0
        if pad_fills_view:
            near_border = False
        elif det.visible:
            near_border = (
                det.u < IMAGE_BORDER_MARGIN_PX
                or det.u > image_size[0] - IMAGE_BORDER_MARGIN_PX
                or det.v < IMAGE_BORDER_MARGIN_PX
                or det.v > image_size[1] - IMAGE_BORDER_MARGIN_PX
            )
        else:
            near_border = True  # pad fully out of frame
        return err > cfg.engage_threshold(h) or near_border
    if err < cfg.release_threshold(h):
        return False
    return True


class ScriptedPilot:
    """Session actor: produces stick commands and the hold-to-intervene signal."""

    def __init__(self, cfg: PilotConfig, task: TaskConfig,
                 pad_center: tuple[float, float] = (0.0, 0.0),
                 image_size: tuple[float, float] = (320.0, 240.0)) -> None:
        self.cfg = cfg
        self.task = task
        self.pad_center = pad_center
        self.image_size = image_size
        self.rng = np.random.default_rng(cfg.seed)
        self.engaged = False
        self.trim = (0.0, 0.0)

    def begin_episode(self, demonstration: bool = False) -> None:
        self.engaged = False
        if demonstration and self.cfg.demo_trim_std > 0.0:
            t = self.rng.normal(0.0, self.cfg.demo_trim_std, size=2)
            self.trim = (float(t[0]), float(t[1]))
        else:
            self.trim = (0.0, 0.0)

    def act(self, state: VehicleState, det: PadDetection) -> ActionCommand:
        rng = self.rng if self.cfg.action_noise_std > 0.0 else None
        return pilot_action(state, self.cfg, self.task, rng, self.pad_center, self.trim)

    def wants_control(self, state: VehicleState, det: PadDetection) -> bool:
        self.engaged = intervention_gate(
            state, det, self.engaged, self.cfg, self.image_size, self.pad_center)
        return self.engaged
