"""Synthetic downward-facing camera.

Replaces image capture with exact pinhole geometry: the landing pad center
projects to a pixel position and apparent radius in a 320x240 frame whose
u axis points along body-right and v axis along body-forward. The camera
hangs rigidly under the vehicle looking straight down, rotating only with
body yaw. Observations concatenate pose, velocities and the pad detection
into a 15-dim vector normalized to roughly [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError, ObservationError
from .sim import TaskConfig, VehicleState, body_axes

OBSERVATION_DIM = 15
MIN_VISIBLE_HEIGHT = 0.05


@dataclass(frozen=True)
class CameraConfig:
    image_width: int = 320
    image_height: int = 240
    horizontal_fov: float = math.pi / 2

    @property
    def focal_px(self) -> float:
        return (self.image_width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    @property
    def principal_point(self) -> tuple[float, float]:
        return (self.image_width / 2.0, self.image_height / 2.0)


@dataclass(frozen=True)
class PadDetection:
    u: float
    v: float
    radius_px: float
    visible: bool


def project_pad(
    state: VehicleState,
    cam: CameraConfig,
    pad_radius: float,
    pad_center: tuple[float, float] = (0.0, 0.0),
) -> PadDetection:
    """Project the pad center into pixel coordinates at the current pose.

    Raises GeometryError below ground; marks the detection not visible when
    the projected center leaves the frame or height drops under 5 cm.
    """
    px, py, pz = state.position
    if pz <= 0.0:
        raise GeometryError(f"camera height must be positive, got {pz}")
    fwd, right = body_axes(state.attitude[2])
    dx = pad_center[0] - px
    dy = pad_center[1] - py
    d_right = dx * right[0] + dy * right[1]
    d_fwd = dx * fwd[0] + dy * fwd[1]
    cx, cy = cam.principal_point
    f = cam.focal_px
    u = cx + f * d_right / pz
    v = cy + f * d_fwd / pz
    radius_px = f * pad_radius / pz
    visible = (
        0.0 <= u <= cam.image_width
        and 0.0 <= v <= cam.image_height
        and pz > MIN_VISIBLE_HEIGHT
    )
    return PadDetection(u=u, v=v, radius_px=radius_px, visible=visible)


def back_project(
    det: PadDetection, state: VehicleState, cam: CameraConfig
) -> tuple[float, float]:
    """Invert project_pad: recover the world-frame pad offset from pixels and height."""
    px, py, pz = state.position
    cx, cy = cam.principal_point
    f = cam.focal_px
    d_right = (det.u - cx) * pz / f
    d_fwd = (det.v - cy) * pz / f
    fwd, right = body_axes(state.attitude[2])
    return (
        d_right * right[0] + d_fwd * fwd[0],
        d_right * right[1] + d_fwd * fwd[1],
    )


class PadTracker:
    """Zero-order hold over the raw projection: keeps the last valid detection
    when the pad leaves the frame, flagged not visible."""

    def __init__(self, cam: CameraConfig, pad_radius: float,
                 pad_center: tuple[float, float] = (0.0, 0.0)) -> None:
        self.cam = cam
        self.pad_radius = pad_radius
        self.pad_center = pad_center
        self._held: PadDetection | None = None

    def reset(self) -> None:
        self._held = None

    def observe(self, state: VehicleState) -> PadDetection:
        det = project_pad(state, self.cam, self.pad_radius, self.pad_center)
        if det.visible:
            self._held = det
            return det
        if self._held is None:
            # First frame of an episode is guaranteed in-frame by config validation.
            return det
        held = self._held
        return PadDetection(u=held.u, v=held.v, radius_px=held.radius_px, visible=False)


def check_pad_in_initial_fov(task: TaskConfig, cam: CameraConfig) -> None:
    """Reject task/camera combinations whose worst-case start hides the pad."""
    max_px = cam.focal_px * task.start_xy_radius / task.start_height
    half_extent = min(cam.image_width / 2.0, cam.image_height / 2.0)
    if max_px > half_extent:
        raise ConfigError(
            "start disc exceeds the initial camera field of view: "
            f"worst-case pad offset {max_px:.1f}px > half extent {half_extent:.1f}px"
        )


@dataclass(frozen=True)
class ObservationScales:
    """Per-dimension affine normalization x' = (x - offset) / scale."""

    offsets: tuple[float, ...]
    scales: tuple[float, ...]

    @staticmethod
    def from_configs(task: TaskConfig, cam: CameraConfig,
                     rate_scale: float = 2.0, radius_scale: float = 120.0) -> "ObservationScales":
        cx, cy = cam.principal_point
        offsets = (0.0, 0.0, 0.0,
                   0.0, 0.0, 0.0,
                   0.0, 0.0, 0.0,
                   0.0, 0.0, 0.0,
                   cx, cy, 0.0)
        scales = (task.start_xy_radius, task.start_xy_radius, task.start_height,
                  math.pi, math.pi, math.pi,
                  task.max_lateral_speed, task.max_longitudinal_speed, task.max_heave_speed,
                  rate_scale, rate_scale, rate_scale,
                  cam.image_width / 2.0, cam.image_height / 2.0, radius_scale)
        return ObservationScales(offsets=offsets, scales=scales)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - np.asarray(self.offsets)) / np.asarray(self.scales)

    def denormalize(self, obs: np.ndarray) -> np.ndarray:
        return obs * np.asarray(self.scales) + np.asarray(self.offsets)


def assemble_observation(
    state: VehicleState, det: PadDetection, scales: ObservationScales
) -> np.ndarray:
    """Build the normalized 15-dim policy input.

    Order: position (3), attitude (3), linear velocity (3), angular rate (3),
    pad pixel (u, v), pad radius. Raises ObservationError on non-finite entries.
    """
    raw = np.array(
        [*state.position, *state.attitude, *state.velocity, *state.angular_rate,
         det.u, det.v, det.radius_px],
        dtype=np.float64,
    )
    obs = scales.normalize(raw)
    if not np.all(np.isfinite(obs)):
        raise ObservationError(f"non-finite observation at step {state.time_step}: {obs}")
    return obs
