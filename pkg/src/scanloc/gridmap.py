"""Classical occupancy grid baseline: log-odds mapping + Bresenham ray casts.

Maps are built from known poses with the standard inverse sensor model, and
scans are rendered by marching grid cells with Bresenham's line algorithm
until the first occupied cell.  This is the comparator the learned field is
judged against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .core import NO_RETURN, Box2, LidarFrame, LidarParams, Pose2, beam_rays

GRID_KIND = "gridmap"
GRID_VERSION = 1

LOG_ODDS_HIT = 0.9
LOG_ODDS_MISS = -0.4
LOG_ODDS_CLAMP = 10.0
OCCUPIED_PROB = 0.5            # strictly greater counts as occupied


@dataclass
class OccGrid:
    """Log-odds occupancy grid; layout matches `Nog` (row j = y, column i = x)."""

    origin: np.ndarray
    resolution: float
    log_odds: np.ndarray

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.log_odds = np.asarray(self.log_odds, dtype=float)
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")

    @property
    def width(self) -> int:
        return self.log_odds.shape[1]

    @property
    def height(self) -> int:
        return self.log_odds.shape[0]

    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds))

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        ix = int(np.floor((x - self.origin[0]) / self.resolution))
        iy = int(np.floor((y - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return self.origin + (np.array([ix, iy]) + 0.5) * self.resolution

    def query(self, points: np.ndarray) -> np.ndarray:
        """OccupancySource capability: logistic of log-odds, 0 outside."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        out = np.zeros(pts.shape[0])
        lo = self.log_odds[iy[inside], ix[inside]]
        out[inside] = 1.0 / (1.0 + np.exp(-lo))
        return out

    def save(self, path: str) -> None:
        meta = {"grid_version": GRID_VERSION, "resolution": self.resolution,
                "origin": [self.origin[0], self.origin[1]],
                "width": self.width, "height": self.height}
        write_container(path, GRID_KIND, meta, {"log_odds": self.log_odds})

    @classmethod
    def load(cls, path: str) -> "OccGrid":
        _, meta, arrays = read_container(path, expect_kind=GRID_KIND)
        if meta.get("grid_version") != GRID_VERSION:
            raise ValueError(f"{path}: unsupported grid version")
        return cls(np.array(meta["origin"]), meta["resolution"], arrays["log_odds"])

    def save_pgm(self, path: str) -> None:
        img = np.round((1.0 - np.flipud(self.probabilities())) * 255.0)
        img = np.clip(img, 0, 255).astype(np.uint8)
        with open(path, "wb") as f:
            f.write(f"P5\n{self.width} {self.height}\n255\n".encode("ascii"))
            f.write(img.tobytes())


def bresenham_cells(ix0: int, iy0: int, ix1: int, iy1: int) -> np.ndarray:
    """Integer cells visited from (ix0, iy0) to (ix1, iy1), endpoints included."""
    dx = abs(ix1 - ix0)
    dy = abs(iy1 - iy0)
    sx = 1 if ix0 < ix1 else -1
    sy = 1 if iy0 < iy1 else -1
    err = dx - dy
    cells = []
    x, y = ix0, iy0
    while True:
        cells.append((x, y))
        if x == ix1 and y == iy1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return np.array(cells, dtype=np.int64).reshape(-1, 2)


def build_grid(poses: list[Pose2], frames: list[LidarFrame],
               resolution: float = 0.05, bounds: Box2 | None = None,
               hit: float = LOG_ODDS_HIT, miss: float = LOG_ODDS_MISS) -> OccGrid:
    """Inverse sensor model over posed scans.

    Every traversed cell gets the miss decrement, the hit cell the hit
    increment; no-return beams mark free space out to the range limit.
    Bounds default to the data extent padded by one max range.
    """
    if not frames:
        raise ValueError("empty scan log")
    if len(poses) != len(frames):
        raise ValueError("poses and frames must align")

    params = frames[0].params
    if bounds is None:
        xs = [p.x for p in poses]
        ys = [p.y for p in poses]
        pad = params.range_max
        bounds = Box2(min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)

    width = int(np.ceil(bounds.width / resolution))
    height = int(np.ceil(bounds.height / resolution))
    grid = OccGrid(np.array([bounds.x_min, bounds.y_min]), resolution,
                   np.zeros((height, width)))

    for pose, frame in zip(poses, frames):
        if pose is None:
            raise ValueError("grid building requires a pose on every frame")
        origins, dirs = beam_rays(pose, frame.params)
        ix0, iy0 = grid.cell_index(pose.x, pose.y)
        valid = frame.valid
        reach = np.where(valid, frame.ranges, frame.params.range_max)
        ends = origins + reach[:, None] * dirs
        for b in range(frame.params.num_beams):
            ix1, iy1 = grid.cell_index(ends[b, 0], ends[b, 1])
            if not (0 <= ix1 < width and 0 <= iy1 < height
                    and 0 <= ix0 < width and 0 <= iy0 < height):
                continue
            cells = bresenham_cells(ix0, iy0, ix1, iy1)
            if valid[b]:
                free, last = cells[:-1], cells[-1]
                grid.log_odds[free[:, 1], free[:, 0]] += miss
                grid.log_odds[last[1], last[0]] += hit
            else:
                grid.log_odds[cells[:, 1], cells[:, 0]] += miss
    np.clip(grid.log_odds, -LOG_ODDS_CLAMP, LOG_ODDS_CLAMP, out=grid.log_odds)
    return grid


def raycast_grid(grid: OccGrid, pose: Pose2, params: LidarParams,
                 timestamp: float = 0.0) -> LidarFrame:
    """Render a scan by cell marching: range to the first cell with p > 0.5.

    Hits inside the sensor blind zone (< range_min) are skipped, mirroring the
    exact-geometry caster; a beam with no occupied cell in reach is a
    no-return.
    """
    occupied = grid.probabilities() > OCCUPIED_PROB
    origins, dirs = beam_rays(pose, params)
    ranges = np.full(params.num_beams, NO_RETURN)
    ox, oy = grid.cell_index(pose.x, pose.y)
    for b in range(params.num_beams):
        end = origins[b] + params.range_max * dirs[b]
        ex, ey = grid.cell_index(end[0], end[1])
        cells = bresenham_cells(ox, oy, ex, ey)
        inside = (cells[:, 0] >= 0) & (cells[:, 0] < grid.width) \
            & (cells[:, 1] >= 0) & (cells[:, 1] < grid.height)
        for cx, cy in cells[inside]:
            if occupied[cy, cx]:
                center = grid.cell_center(cx, cy)
                r = float(np.hypot(center[0] - pose.x, center[1] - pose.y))
                if r < params.range_min:
                    continue
                if r <= params.range_max:
                    ranges[b] = r
                break
    return LidarFrame(timestamp, ranges, params)


class GridScanSource:
    """Bresenham scan renderer over a grid map, as an observation model."""

    def __init__(self, grid: OccGrid, params: LidarParams):
        self.grid = grid
        self.params = params

    def render_poses(self, poses: np.ndarray,
                     beam_indices: np.ndarray | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        ranges = np.empty((poses.shape[0], self.params.num_beams))
        for i, p in enumerate(poses):
            ranges[i] = raycast_grid(self.grid, Pose2(*p), self.params).ranges
        if beam_indices is not None:
            ranges = ranges[:, beam_indices]
        return ranges, np.isfinite(ranges)
