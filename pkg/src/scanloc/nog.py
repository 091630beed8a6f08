"""Dense cache of field predictions for fast nearest-cell occupancy lookup.

Rendering through the raw network costs a forward pass per sample point;
during particle filtering that multiplies out to millions of queries per
frame.  Precomputing the field once over the scene at a fixed resolution
turns each query into an integer index into this grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .core import Box2

NOG_KIND = "nog"
NOG_VERSION = 1

DEFAULT_RESOLUTION = 0.05
MAX_CELLS = 100_000_000

# Cell count per chunked field query while building.
_BUILD_CHUNK = 500_000


@dataclass
class Nog:
    """Row-major grid of occupancy probabilities; row j spans y, column i x.

    Cell (i, j) covers [origin + (i, j)*res, origin + (i+1, j+1)*res) with its
    stored value sampled at the cell center.
    """

    origin: np.ndarray          # lower-left corner (2,)
    resolution: float
    values: np.ndarray          # (height, width)

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2D array")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """X and Y center coordinates as (width,) and (height,) arrays."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def query(self, points: np.ndarray) -> np.ndarray:
        """Nearest-cell occupancy for (n, 2) points; outside the grid -> 0.

        Floor indexing decides cell membership, so a point exactly on a shared
        cell edge reads from the higher-index cell it floors into.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        out = np.zeros(pts.shape[0])
        out[inside] = self.values[iy[inside], ix[inside]]
        return out

    def lookup(self, point: np.ndarray) -> float:
        return float(self.query(np.asarray(point).reshape(1, 2))[0])

    def contains(self, x: float, y: float) -> bool:
        return bool(self.origin[0] <= x < self.origin[0] + self.width * self.resolution
                    and self.origin[1] <= y < self.origin[1] + self.height * self.resolution)

    # -- persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {"nog_version": NOG_VERSION, "resolution": self.resolution,
                "origin": [self.origin[0], self.origin[1]],
                "width": self.width, "height": self.height}
        write_container(path, NOG_KIND, meta, {"values": self.values})

    @classmethod
    def load(cls, path: str) -> "Nog":
        _, meta, arrays = read_container(path, expect_kind=NOG_KIND)
        if meta.get("nog_version") != NOG_VERSION:
            raise ValueError(f"{path}: unsupported grid version")
        return cls(np.array(meta["origin"]), meta["resolution"], arrays["values"])

    def save_pgm(self, path: str) -> None:
        """Grayscale inspection image; occupancy 1 renders black, top row = max y."""
        img = np.round((1.0 - np.flipud(self.values)) * 255.0)
        img = np.clip(img, 0, 255).astype(np.uint8)
        with open(path, "wb") as f:
            f.write(f"P5\n{self.width} {self.height}\n255\n".encode("ascii"))
            f.write(img.tobytes())


class NogScanSource:
    """Throughput-oriented scan renderer over a grid cache.

    Computes sample-cell indices directly in float32 instead of going through
    the generic point pipeline; at particle-filter scales this is what makes
    the cache pay off.  Results match the generic renderer up to float32
    rounding.
    """

    def __init__(self, nog: Nog, params, sampling=None):
        from .render import RaySampling
        self.nog = nog
        self.params = params
        self.sampling = sampling or RaySampling.for_params(params)
        self._values = nog.values.astype(np.float32)
        self._inv_res = np.float32(1.0 / nog.resolution)
        self._origin = nog.origin.astype(np.float32)
        self._distances = self.sampling.distances().astype(np.float32)

    def render_poses(self, poses: np.ndarray,
                     beam_indices: np.ndarray | None = None,
                     rays_per_chunk: int = 65_536
                     ) -> tuple[np.ndarray, np.ndarray]:
        from .render import ESCAPE_THRESHOLD
        poses = np.asarray(poses, dtype=np.float32).reshape(-1, 3)
        beams = self.params.beam_angles().astype(np.float32)
        if beam_indices is not None:
            beams = beams[beam_indices]
        n_poses, n_beams = poses.shape[0], beams.size
        m = self._distances
        h, w = self._values.shape

        ang = poses[:, 2:3] + beams[None, :]
        cx = (np.cos(ang) .reshape(-1))
        sy = (np.sin(ang).reshape(-1))
        px = np.repeat(poses[:, 0], n_beams) - self._origin[0]
        py = np.repeat(poses[:, 1], n_beams) - self._origin[1]

        total = n_poses * n_beams
        ranges = np.empty(total, dtype=np.float32)
        escape = np.empty(total, dtype=np.float32)
        for s in range(0, total, rays_per_chunk):
            e = min(s + rays_per_chunk, total)
            x = px[s:e, None] + cx[s:e, None] * m[None, :]
            y = py[s:e, None] + sy[s:e, None] * m[None, :]
            x *= self._inv_res
            y *= self._inv_res
            ix = np.floor(x).astype(np.int32)
            iy = np.floor(y).astype(np.int32)
            inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            np.clip(ix, 0, w - 1, out=ix)
            np.clip(iy, 0, h - 1, out=iy)
            occ = self._values[iy, ix]
            occ[~inside] = 0.0
            surv = np.cumprod(1.0 - occ, axis=1)
            alpha = occ
            alpha[:, 1:] *= surv[:, :-1]
            ranges[s:e] = alpha @ m
            escape[s:e] = 1.0 - alpha.sum(axis=1)

        ranges = ranges.astype(float).reshape(n_poses, n_beams)
        escape = escape.reshape(n_poses, n_beams)
        valid = escape <= ESCAPE_THRESHOLD
        from .core import NO_RETURN
        return np.where(valid, ranges, NO_RETURN), valid


def build_nog(source, bounds: Box2, resolution: float = DEFAULT_RESOLUTION,
              max_cells: int = MAX_CELLS) -> Nog:
    """Evaluate an occupancy source at every cell center over `bounds`.

    The grid is sized with ceil so it always covers the bounds entirely.
    Deterministic: fixed evaluation order, chunked only along whole rows.
    """
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    width = int(np.ceil(bounds.width / resolution))
    height = int(np.ceil(bounds.height / resolution))
    if width * height > max_cells:
        raise ValueError(
            f"grid of {width} x {height} = {width * height} cells exceeds the "
            f"cap of {max_cells}")

    origin = np.array([bounds.x_min, bounds.y_min])
    xs = origin[0] + (np.arange(width) + 0.5) * resolution
    ys = origin[1] + (np.arange(height) + 0.5) * resolution

    values = np.empty((height, width))
    rows_per_chunk = max(1, _BUILD_CHUNK // width)
    for j0 in range(0, height, rows_per_chunk):
        j1 = min(j0 + rows_per_chunk, height)
        gx, gy = np.meshgrid(xs, ys[j0:j1])
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        values[j0:j1] = np.asarray(source.query(pts)).reshape(j1 - j0, width)
    return Nog(origin, resolution, values)
