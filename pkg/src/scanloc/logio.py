"""Scan-log file formats: the native line-delimited log and CARMEN import.

The native format keeps one JSON frame per line under a JSON header, which
diffs cleanly and round-trips byte-identically.  CARMEN logs (FLASER/ODOM
lines, the format of the classic public indoor datasets) are import-only.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import NO_RETURN, LidarFrame, LidarParams, Pose2, pose_between

SCANLOG_FORMAT_VERSION = 1

CARMEN_DEFAULT_RANGE_MIN = 0.05
CARMEN_DEFAULT_RANGE_MAX = 80.0


@dataclass
class ScanLog:
    """Frames plus optional per-frame truth poses and odometry deltas.

    odometry[k] is the measured motion from frame k-1 to frame k (frame 0
    carries the identity).  Training needs `poses`; localization needs
    `odometry`.
    """

    params: LidarParams
    frames: list[LidarFrame] = field(default_factory=list)
    poses: list[Pose2 | None] = field(default_factory=list)
    odometry: list[Pose2 | None] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.frames)
        if len(self.poses) not in (0, n) or len(self.odometry) not in (0, n):
            raise ValueError("poses/odometry must be empty or match frame count")
        if not self.poses:
            self.poses = [None] * n
        if not self.odometry:
            self.odometry = [None] * n

    def __len__(self) -> int:
        return len(self.frames)

    def require_poses(self) -> list[Pose2]:
        if any(p is None for p in self.poses):
            raise ValueError("log has frames without poses")
        return list(self.poses)          # type: ignore[arg-type]

    def require_odometry(self) -> list[Pose2 | None]:
        if any(o is None for o in self.odometry[1:]):
            raise ValueError("log has frames without odometry")
        return list(self.odometry)

    def times(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])


def from_sim(sim_log) -> ScanLog:
    """Adapt a simulator log (which always carries truth and odometry)."""
    return ScanLog(sim_log.params, list(sim_log.frames),
                   list(sim_log.true_poses), list(sim_log.odometry))


def _pose_field(p: Pose2 | None):
    return None if p is None else [p.x, p.y, p.theta]


def save_scanlog(path: str, log: ScanLog) -> None:
    header = {
        "format": "scanloc-scanlog",
        "version": SCANLOG_FORMAT_VERSION,
        "frame_count": len(log),
        "lidar": {
            "num_beams": log.params.num_beams,
            "angle_min": log.params.angle_min,
            "angle_max": log.params.angle_max,
            "range_min": log.params.range_min,
            "range_max": log.params.range_max,
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for frame, pose, odom in zip(log.frames, log.poses, log.odometry):
            ranges = [None if not math.isfinite(r) else r for r in frame.ranges]
            rec = {"t": frame.timestamp, "pose": _pose_field(pose),
                   "odom": _pose_field(odom), "ranges": ranges}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_scanlog(path: str) -> ScanLog:
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("format") != "scanloc-scanlog":
            raise ValueError(f"{path}: not a scan log")
        if header.get("version") != SCANLOG_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported scan-log version")
        li = header["lidar"]
        params = LidarParams(li["num_beams"], li["angle_min"], li["angle_max"],
                             li["range_min"], li["range_max"])
        frames, poses, odometry = [], [], []
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            ranges = np.array([NO_RETURN if r is None else float(r)
                               for r in d["ranges"]])
            frames.append(LidarFrame(d["t"], ranges, params))
            poses.append(None if d["pose"] is None else Pose2(*d["pose"]))
            odometry.append(None if d["odom"] is None else Pose2(*d["odom"]))
    if len(frames) != header["frame_count"]:
        raise ValueError(f"{path}: header says {header['frame_count']} frames, "
                         f"found {len(frames)}")
    return ScanLog(params, frames, poses, odometry)


def infer_carmen_params(num_beams: int,
                        range_min: float = CARMEN_DEFAULT_RANGE_MIN,
                        range_max: float = CARMEN_DEFAULT_RANGE_MAX
                        ) -> LidarParams:
    """Laser geometry from the beam count, SICK-convention defaults.

    Classic logs carry no sensor metadata; 180/360 beams mean a 180 degree fan
    starting at -90 with the endpoint excluded, 181/361 include both ends.
    """
    if num_beams in (180, 360):
        step = math.pi / num_beams
        return LidarParams(num_beams, -math.pi / 2,
                           -math.pi / 2 + (num_beams - 1) * step,
                           range_min, range_max)
    if num_beams in (181, 361):
        return LidarParams(num_beams, -math.pi / 2, math.pi / 2,
                           range_min, range_max)
    if num_beams == 1:
        return LidarParams(1, 0.0, 0.0, range_min, range_max)
    # unknown scanner: assume a symmetric 180 degree fan, endpoints included
    return LidarParams(num_beams, -math.pi / 2, math.pi / 2,
                       range_min, range_max)


@dataclass
class CarmenParseReport:
    frames: int
    skipped_lines: int


def parse_carmen(path: str, params: LidarParams | None = None
                 ) -> tuple[ScanLog, CarmenParseReport]:
    """Import FLASER/ODOM records from a CARMEN-format log.

    FLASER: count, ranges, laser pose, robot odometry pose, timestamp.  The
    frame pose is the laser pose; per-frame odometry deltas come from the
    robot odometry poses of consecutive FLASER lines.  Malformed lines are
    skipped and counted.  Readings outside the range window become
    no-returns.
    """
    frames_raw: list[tuple[float, np.ndarray, Pose2, Pose2]] = []
    skipped = 0
    inferred: LidarParams | None = params

    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0] != "FLASER":
                continue
            try:
                n = int(parts[1])
                if n < 1 or len(parts) < 2 + n + 6 + 1:
                    raise ValueError
                ranges = np.array([float(v) for v in parts[2:2 + n]])
                lx, ly, lth, ox, oy, oth = (float(v)
                                            for v in parts[2 + n:2 + n + 6])
                timestamp = float(parts[2 + n + 6])
            except (ValueError, IndexError):
                skipped += 1
                continue
            if inferred is None:
                inferred = infer_carmen_params(n)
            if n != inferred.num_beams:
                skipped += 1
                continue
            frames_raw.append((timestamp, ranges, Pose2(lx, ly, lth),
                               Pose2(ox, oy, oth)))

    if not frames_raw:
        raise ValueError(f"{path}: no valid FLASER lines")
    assert inferred is not None

    frames, poses, odometry = [], [], []
    prev_odom: Pose2 | None = None
    for timestamp, ranges, laser_pose, odom_pose in frames_raw:
        bad = (ranges < inferred.range_min) | (ranges >= inferred.range_max)
        ranges = np.where(bad, NO_RETURN, ranges)
        frames.append(LidarFrame(timestamp, ranges, inferred))
        poses.append(laser_pose)
        odometry.append(Pose2(0.0, 0.0, 0.0) if prev_odom is None
                        else pose_between(prev_odom, odom_pose))
        prev_odom = odom_pose

    log = ScanLog(inferred, frames, poses, odometry)
    return log, CarmenParseReport(len(frames), skipped)
