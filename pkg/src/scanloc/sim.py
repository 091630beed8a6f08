"""Synthetic 2D worlds and an exact ray-casting scan generator.

Worlds are plain line-segment soups, so every range value has a closed-form
answer: the oracle used to verify the learned field, the renderer, and the
particle filter without real sensor data.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    NO_RETURN,
    Box2,
    LidarFrame,
    LidarParams,
    Pose2,
    Ray,
    beam_rays,
    pose_between,
    wrap_angle,
)
from .motion import MotionNoise, sample_odometry

_PARALLEL_EPS = 1e-12

WORLD_FORMAT_VERSION = 1


@dataclass
class WorldMap:
    """2D environment as line segments, shape (S, 4) rows of (x0, y0, x1, y1)."""

    segments: np.ndarray
    bounds: Box2
    name: str = ""

    def __post_init__(self) -> None:
        segs = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
        if np.any(lengths == 0.0):
            raise ValueError("zero-length segment in world")
        for x, y in ((segs[:, 0], segs[:, 1]), (segs[:, 2], segs[:, 3])):
            if np.any(x < self.bounds.x_min) or np.any(x > self.bounds.x_max) \
                    or np.any(y < self.bounds.y_min) or np.any(y > self.bounds.y_max):
                raise ValueError("segment endpoint outside world bounds")
        self.segments = segs


@dataclass
class TrajectorySpec:
    """Waypoint path driven at constant speed, scanning at a fixed rate."""

    waypoints: list[Pose2]
    speed: float = 0.5
    scan_rate: float = 10.0
    odom_noise: MotionNoise = field(default_factory=MotionNoise.zero)
    range_noise_std: float = 0.0

    def __post_init__(self) -> None:
        if self.scan_rate <= 0.0:
            raise ValueError("scan_rate must be positive")
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")
        if self.range_noise_std < 0.0:
            raise ValueError("range_noise_std must be >= 0")


_RAYS_PER_CHUNK = 262_144


def cast_rays(world: WorldMap, origins: np.ndarray, dirs: np.ndarray,
              m_min: float, m_max: float) -> np.ndarray:
    """Exact ranges for a batch of rays against every segment.

    origins, dirs: (R, 2) arrays; dirs unit-norm.  Returns (R,) ranges in
    [m_min, m_max] with NaN where no segment is hit inside the window.
    Intersections closer than m_min do not block farther ones (the sensor's
    blind zone).
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 2)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 2)
    total = origins.shape[0]
    if total > _RAYS_PER_CHUNK:      # bound the (R, S) intermediates
        out = np.empty(total)
        for start in range(0, total, _RAYS_PER_CHUNK):
            stop = min(start + _RAYS_PER_CHUNK, total)
            out[start:stop] = cast_rays(world, origins[start:stop],
                                        dirs[start:stop], m_min, m_max)
        return out
    segs = world.segments
    p0 = segs[:, 0:2]                      # (S, 2)
    sv = segs[:, 2:4] - segs[:, 0:2]       # (S, 2) segment vectors

    # Ray o + t*d against segment p0 + u*s, solved via 2D cross products.
    # denom = d x s; t = (p0 - o) x s / denom; u = (p0 - o) x d / denom.
    d = dirs[:, None, :]                   # (R, 1, 2)
    q = p0[None, :, :] - origins[:, None, :]   # (R, S, 2)
    s = sv[None, :, :]                     # (1, S, 2)
    denom = d[..., 0] * s[..., 1] - d[..., 1] * s[..., 0]    # (R, S)
    qxs = q[..., 0] * s[..., 1] - q[..., 1] * s[..., 0]
    qxd = q[..., 0] * d[..., 1] - q[..., 1] * d[..., 0]

    with np.errstate(divide="ignore", invalid="ignore"):
        t = qxs / denom
        u = qxd / denom
    hit = (np.abs(denom) > _PARALLEL_EPS) & (u >= 0.0) & (u <= 1.0) \
        & (t >= m_min) & (t <= m_max)
    t = np.where(hit, t, np.inf)

    # Collinear overlap (parallel and on the ray's line): nearest endpoint.
    collinear = (np.abs(denom) <= _PARALLEL_EPS) & (np.abs(qxd) <= _PARALLEL_EPS)
    if np.any(collinear):
        t0 = np.einsum("rsk,rk->rs", q, dirs)                    # to first endpoint
        t1 = np.einsum("rsk,rk->rs", q + s, dirs)                # to second endpoint
        for te in (t0, t1):
            ok = collinear & (te >= m_min) & (te <= m_max)
            t = np.where(ok & (te < t), te, t)

    best = t.min(axis=1)
    return np.where(np.isfinite(best), best, NO_RETURN)


def cast_ray_exact(world: WorldMap, ray: Ray, m_min: float, m_max: float) -> float:
    """Range along one ray, or NaN if nothing is hit inside [m_min, m_max]."""
    r = cast_rays(world, ray.origin[None, :], ray.direction[None, :], m_min, m_max)
    return float(r[0])


def scan_at(world: WorldMap, pose: Pose2, params: LidarParams,
            timestamp: float = 0.0) -> LidarFrame:
    """Noise-free oracle scan at a pose."""
    origins, dirs = beam_rays(pose, params)
    ranges = cast_rays(world, origins, dirs, params.range_min, params.range_max)
    return LidarFrame(timestamp, ranges, params)


class WorldScanSource:
    """Renders exact scans for pose batches; used as the oracle observation model."""

    def __init__(self, world: WorldMap, params: LidarParams):
        self.world = world
        self.params = params

    def render_poses(self, poses: np.ndarray,
                     beam_indices: np.ndarray | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
        """Ranges (M, B) and validity mask (M, B) for an (M, 3) pose array."""
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        beam = self.params.beam_angles()
        if beam_indices is not None:
            beam = beam[beam_indices]
        ang = poses[:, 2:3] + beam[None, :]                      # (M, B)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=2)      # (M, B, 2)
        origins = np.broadcast_to(poses[:, None, 0:2], dirs.shape)
        flat_r = cast_rays(self.world, origins.reshape(-1, 2), dirs.reshape(-1, 2),
                           self.params.range_min, self.params.range_max)
        ranges = flat_r.reshape(poses.shape[0], beam.size)
        return ranges, np.isfinite(ranges)


def _interp_heading(a: float, b: float, t: float) -> float:
    return wrap_angle(a + t * wrap_angle(b - a))


def trajectory_poses(spec: TrajectorySpec) -> tuple[list[Pose2], list[float]]:
    """Poses sampled along the waypoint polyline at the scan rate."""
    wps = spec.waypoints
    if len(wps) < 2:
        raise ValueError("need at least two waypoints")
    seg_len = [math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(wps[:-1], wps[1:])]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])
    if total <= 0.0:
        raise ValueError("trajectory has zero length")

    dt = 1.0 / spec.scan_rate
    n_frames = int(math.floor(total / (spec.speed * dt))) + 1
    poses, times = [], []
    for k in range(n_frames):
        t = k * dt
        dist = min(spec.speed * t, total)
        i = int(np.searchsorted(cum, dist, side="right")) - 1
        i = min(i, len(seg_len) - 1)
        frac = 0.0 if seg_len[i] == 0.0 else (dist - cum[i]) / seg_len[i]
        a, b = wps[i], wps[i + 1]
        poses.append(Pose2(a.x + frac * (b.x - a.x),
                           a.y + frac * (b.y - a.y),
                           _interp_heading(a.theta, b.theta, frac)))
        times.append(t)
    return poses, times


@dataclass
class SimLog:
    """Ground truth plus what the sensors would actually record."""

    frames: list[LidarFrame]
    true_poses: list[Pose2]
    odometry: list[Pose2]          # odometry[k] = measured delta from frame k-1 to k
    params: LidarParams


def generate_log(world: WorldMap, spec: TrajectorySpec, params: LidarParams,
                 rng: np.random.Generator) -> SimLog:
    """Drive the trajectory, scanning with range noise and odometry noise.

    Noisy ranges are clamped below at range_min; anything that would exceed
    range_max becomes a no-return, matching how a real scanner drops them.
    """
    for wp in spec.waypoints:
        if not world.bounds.contains(wp.x, wp.y):
            raise ValueError(f"waypoint ({wp.x}, {wp.y}) outside world bounds")

    poses, times = trajectory_poses(spec)
    frames = []
    for pose, t in zip(poses, times):
        frame = scan_at(world, pose, params, timestamp=t)
        r = frame.ranges
        if spec.range_noise_std > 0.0:
            noisy = r + rng.normal(size=r.shape) * spec.range_noise_std
            noisy = np.maximum(noisy, params.range_min)
            noisy = np.where(noisy > params.range_max, NO_RETURN, noisy)
            r = np.where(np.isfinite(r), noisy, NO_RETURN)
        frames.append(LidarFrame(t, r, params))

    true_deltas = np.array(
        [pose_between(a, b).as_array() for a, b in zip(poses[:-1], poses[1:])]
    ).reshape(-1, 3)
    noisy_deltas = sample_odometry(true_deltas, spec.odom_noise, rng) \
        if len(true_deltas) else true_deltas
    odometry = [Pose2(0.0, 0.0, 0.0)] + [Pose2(*d) for d in noisy_deltas]
    return SimLog(frames, poses, odometry, params)


def _rectangle(x0: float, y0: float, x1: float, y1: float) -> list[list[float]]:
    return [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]


def builtin_worlds() -> dict[str, WorldMap]:
    """Canonical desk-scale test environments."""
    worlds: dict[str, WorldMap] = {}

    room = Box2(0.0, 0.0, 10.0, 8.0)
    worlds["room"] = WorldMap(np.array(_rectangle(0, 0, 10, 8)), room, name="room")

    # Rectangle with two interior walls; the vertical one has a 1 m doorway.
    office_segs = _rectangle(0, 0, 10, 8)
    office_segs += [[4.0, 0.0, 4.0, 3.5], [4.0, 4.5, 4.0, 8.0]]
    office_segs += [[6.0, 4.0, 10.0, 4.0]]
    worlds["office"] = WorldMap(np.array(office_segs), Box2(0, 0, 10, 8), name="office")

    # Rectangular loop corridor, 1.5 m wide between outer and inner walls.
    loop_segs = _rectangle(0, 0, 10, 8) + _rectangle(1.5, 1.5, 8.5, 6.5)
    worlds["corridor-loop"] = WorldMap(np.array(loop_segs), Box2(0, 0, 10, 8),
                                       name="corridor-loop")
    return worlds


def save_world(path: str, world: WorldMap) -> None:
    """Versioned structured-text world file; write→read→write is byte-identical."""
    doc = {
        "format": "scanloc-world",
        "version": WORLD_FORMAT_VERSION,
        "name": world.name,
        "bounds": [world.bounds.x_min, world.bounds.y_min,
                   world.bounds.x_max, world.bounds.y_max],
        "segments": [list(map(float, row)) for row in world.segments],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_world(path: str) -> WorldMap:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != "scanloc-world":
        raise ValueError(f"{path}: not a world file")
    if doc.get("version") != WORLD_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported world format version {doc.get('version')}")
    b = doc["bounds"]
    return WorldMap(np.array(doc["segments"], dtype=float),
                    Box2(b[0], b[1], b[2], b[3]), name=doc.get("name", ""))
