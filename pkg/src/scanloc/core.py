"""Shared geometry and sensor types: planar poses, scan containers, beam rays.

All angles are radians, all distances meters.  Headings are kept wrapped to
(-pi, pi].  Beams with no detection inside the sensor's range window are
stored as NaN ("no-return"); every consumer must mask on `np.isfinite`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NO_RETURN = float("nan")


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]; exact no-op for already-wrapped values."""
    if -math.pi < theta <= math.pi:
        return theta
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized `wrap_angle` for arrays."""
    theta = np.asarray(theta, dtype=float)
    w = np.mod(theta + np.pi, 2.0 * np.pi)
    w = np.where(w <= 0.0, w + 2.0 * np.pi, w) - np.pi
    return np.where((theta > -np.pi) & (theta <= np.pi), theta, w)


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, heading); heading wrapped to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @property
    def origin(self) -> np.ndarray:
        """The (x, y) translation as a 2-vector."""
        return np.array([self.x, self.y], dtype=float)


def pose_compose(a: Pose2, delta: Pose2) -> Pose2:
    """Compose two poses in SE(2): apply `delta` in the frame of `a`."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * delta.x - s * delta.y,
        a.y + s * delta.x + c * delta.y,
        a.theta + delta.theta,
    )


def pose_between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose delta such that pose_compose(a, delta) == b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


@dataclass(frozen=True)
class LidarParams:
    """Static description of a 2D scanner: beam layout and range window.

    Beam i points at `angle_min + i * (angle_max - angle_min) / (B - 1)` in the
    sensor frame (inclusive endpoints); a single-beam scanner degenerates to
    `angle_min`.
    """

    num_beams: int
    angle_min: float
    angle_max: float
    range_min: float
    range_max: float

    def __post_init__(self) -> None:
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.num_beams > 1 and not self.angle_min < self.angle_max:
            raise ValueError("angle_min must be < angle_max")
        if not 0.0 <= self.range_min < self.range_max:
            raise ValueError("need 0 <= range_min < range_max")

    def beam_angles(self) -> np.ndarray:
        """Sensor-frame beam angles, shape (num_beams,)."""
        if self.num_beams == 1:
            return np.array([self.angle_min], dtype=float)
        return np.linspace(self.angle_min, self.angle_max, self.num_beams)


@dataclass
class LidarFrame:
    """One scan: a timestamp plus `num_beams` ranges (NaN marks no-return)."""

    timestamp: float
    ranges: np.ndarray
    params: LidarParams

    def __post_init__(self) -> None:
        self.ranges = np.asarray(self.ranges, dtype=float)
        if self.ranges.shape != (self.params.num_beams,):
            raise ValueError(
                f"expected {self.params.num_beams} ranges, got shape {self.ranges.shape}"
            )

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of beams that returned a detection."""
        return np.isfinite(self.ranges)

    def points(self, pose: Pose2) -> np.ndarray:
        """Project valid beams to world-frame 2D points `o + r*d`, shape (n_valid, 2)."""
        origins, dirs = beam_rays(pose, self.params)
        m = self.valid
        return origins[m] + self.ranges[m, None] * dirs[m]


@dataclass(frozen=True)
class Ray:
    """Half-line with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        o = np.asarray(self.origin, dtype=float).reshape(2)
        d = np.asarray(self.direction, dtype=float).reshape(2)
        n = float(np.hypot(d[0], d[1]))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"direction must be unit-norm, |d| = {n}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


def beam_rays(pose: Pose2, params: LidarParams) -> tuple[np.ndarray, np.ndarray]:
    """World-frame beam origins and unit directions as (B, 2) arrays.

    The sensor sits at the robot origin; beam i's world angle is
    `pose.theta + beam_angle(i)` (unwrapped, so angles increase monotonically
    across the scan).
    """
    ang = pose.theta + params.beam_angles()
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    origins = np.broadcast_to(pose.origin, dirs.shape).copy()
    return origins, dirs


def beams_of(pose: Pose2, params: LidarParams) -> list[Ray]:
    """Per-beam `Ray` objects; the array form `beam_rays` is the fast path."""
    origins, dirs = beam_rays(pose, params)
    return [Ray(o, d) for o, d in zip(origins, dirs)]


@dataclass
class Box2:
    """Axis-aligned 2D box (bounds of a map or scene)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("degenerate box")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def padded(self, margin: float) -> "Box2":
        return Box2(self.x_min - margin, self.y_min - margin,
                    self.x_max + margin, self.y_max + margin)
