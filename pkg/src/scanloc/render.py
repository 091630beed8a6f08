"""Range-scan synthesis from any occupancy source by expected-stop rendering.

Along each beam, sample probabilities turn into per-sample termination
weights (probability the beam stops there given it survived everything
closer), and the range is the weight-averaged sample distance.  The formula
is applied literally: a beam whose weights sum to well below one has mostly
"escaped", and its leftover mass is reported so callers can treat it as a
no-return instead of trusting the underweighted range.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import NO_RETURN, LidarFrame, LidarParams, Pose2, Ray

ESCAPE_THRESHOLD = 0.99

# Cap on points per occupancy-source query; larger requests are chunked.
MAX_POINTS_PER_QUERY = 4_000_000


class OccupancySource(Protocol):
    """Anything that maps (n, 2) points to occupancy probabilities in [0, 1]."""

    def query(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class RaySampling:
    """Uniform sample placement along beams: N cell centers in [t_min, t_max]."""

    num_samples: int = 256
    t_min: float = 0.05
    t_max: float = 30.0

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not 0.0 <= self.t_min < self.t_max:
            raise ValueError("need 0 <= t_min < t_max")

    def distances(self) -> np.ndarray:
        """Sample distances m_i, strictly increasing, shape (N,)."""
        step = (self.t_max - self.t_min) / self.num_samples
        return self.t_min + (np.arange(self.num_samples) + 0.5) * step

    @classmethod
    def for_params(cls, params: LidarParams, num_samples: int = 256) -> "RaySampling":
        return cls(num_samples, params.range_min, params.range_max)


def termination_weights(occ: np.ndarray) -> np.ndarray:
    """Per-sample stop weights along the last axis.

    weight_i = occ_i * prod_{j<i} (1 - occ_j); all in [0, 1], summing to at
    most 1 (exactly 1 only when some prefix contains an occupancy of 1).
    """
    occ = np.asarray(occ, dtype=float)
    surv = np.cumprod(1.0 - occ, axis=-1)
    prior = np.concatenate(
        [np.ones(occ.shape[:-1] + (1,)), surv[..., :-1]], axis=-1)
    return occ * prior


def _render_from_occ(occ: np.ndarray, distances: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Expected ranges and escape mass for occupancy rows (..., N)."""
    alpha = termination_weights(occ)
    ranges = (alpha * distances).sum(axis=-1)
    escape = 1.0 - alpha.sum(axis=-1)
    return ranges, escape


def render_range(source: OccupancySource, ray: Ray,
                 sampling: RaySampling) -> tuple[float, float]:
    """Expected range along one ray, plus the escaped (unterminated) mass."""
    m = sampling.distances()
    points = ray.origin[None, :] + m[:, None] * ray.direction[None, :]
    occ = np.asarray(source.query(points), dtype=float).ravel()
    r, esc = _render_from_occ(occ, m)
    return float(r), float(esc)


@dataclass
class ScanRender:
    """Literal rendered ranges plus per-beam escape mass."""

    ranges: np.ndarray
    escape_mass: np.ndarray
    params: LidarParams

    @property
    def valid(self) -> np.ndarray:
        """Beams with enough terminated mass to trust the range."""
        return self.escape_mass <= ESCAPE_THRESHOLD

    def frame(self, timestamp: float = 0.0) -> LidarFrame:
        """As a scan, with escaped beams converted to no-returns."""
        r = np.where(self.valid, self.ranges, NO_RETURN)
        return LidarFrame(timestamp, r, self.params)


def render_scans(source: OccupancySource, poses: np.ndarray, params: LidarParams,
                 sampling: RaySampling,
                 beam_indices: np.ndarray | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Render scans at (M, 3) poses in one batched pass.

    Returns (ranges, escape_mass) as (M, B) arrays, where B is the full beam
    count or `len(beam_indices)` when a subset is requested.  The M*B*N sample
    points go to the source in chunks of whole beams; chunk boundaries cannot
    change results because the source is a pure per-point map.
    """
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    m = sampling.distances()
    beams = params.beam_angles()
    if beam_indices is not None:
        beams = beams[beam_indices]
    n, b = m.size, beams.size
    angles = poses[:, 2:3] + beams[None, :]                         # (M, B)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=2)       # (M, B, 2)
    origins = poses[:, None, 0:2]

    beams_per_chunk = max(1, MAX_POINTS_PER_QUERY // n)
    flat_dirs = dirs.reshape(-1, 2)
    flat_origins = np.broadcast_to(origins, dirs.shape).reshape(-1, 2)
    total = flat_dirs.shape[0]

    ranges = np.empty(total)
    escape = np.empty(total)
    for start in range(0, total, beams_per_chunk):
        stop = min(start + beams_per_chunk, total)
        pts = (flat_origins[start:stop, None, :]
               + m[None, :, None] * flat_dirs[start:stop, None, :])
        occ = np.asarray(source.query(pts.reshape(-1, 2)), dtype=float)
        occ = occ.reshape(stop - start, n)
        ranges[start:stop], escape[start:stop] = _render_from_occ(occ, m)
    return ranges.reshape(-1, b), escape.reshape(-1, b)


def render_scan(source: OccupancySource, pose: Pose2, params: LidarParams,
                sampling: RaySampling) -> ScanRender:
    """Render one scan; see `render_scans` for the batched form."""
    ranges, escape = render_scans(source, pose.as_array()[None, :], params, sampling)
    return ScanRender(ranges[0], escape[0], params)


class VolumeScanSource:
    """Scan renderer over an occupancy source, usable as an observation model.

    Mirrors the oracle's `render_poses` interface: escaped beams come back as
    NaN with a False validity flag.
    """

    def __init__(self, source: OccupancySource, params: LidarParams,
                 sampling: RaySampling | None = None):
        self.source = source
        self.params = params
        self.sampling = sampling or RaySampling.for_params(params)

    def render_poses(self, poses: np.ndarray,
                     beam_indices: np.ndarray | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
        ranges, escape = render_scans(self.source, poses, self.params,
                                      self.sampling, beam_indices)
        valid = escape <= ESCAPE_THRESHOLD
        return np.where(valid, ranges, NO_RETURN), valid
