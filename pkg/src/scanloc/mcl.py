"""Monte-Carlo localization with rendered-scan observation models.

Particles carry pose hypotheses; each filter cycle diffuses them with the
odometry motion model, reweights them by how well a scan rendered at the
hypothesis matches the real scan, resamples on weight degeneracy, and
extracts a weighted mean pose.  Global localization starts with a large
uniform particle budget that shrinks once the cloud has collapsed.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import Box2, LidarFrame, Pose2, wrap_angles
from .motion import MotionNoise, sample_odometry

LIKELIHOOD_FLOOR = 1e-12

TRAJ_FORMAT_VERSION = 1


class ScanSource(Protocol):
    """Observation model backend: render scans at an (M, 3) pose batch.

    Returns (ranges, valid) as (M, B) arrays with NaN on invalid beams;
    `beam_indices` restricts rendering to a beam subset.
    """

    def render_poses(self, poses: np.ndarray,
                     beam_indices: np.ndarray | None = ...
                     ) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class ParticleSet:
    """Pose hypotheses (M, 3) with normalized weights (M,)."""

    poses: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.poses.shape[0] != self.weights.shape[0]:
            raise ValueError("poses and weights must align")

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def ess(self) -> float:
        """Effective sample size 1 / sum(w^2)."""
        s = float((self.weights ** 2).sum())
        return 0.0 if s <= 0.0 else 1.0 / s


@dataclass
class ObservationConfig:
    sigma: float = 0.25                 # range-error scale of the likelihood
    beam_subsample: int | None = None   # use this many evenly spaced beams

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.beam_subsample is not None and self.beam_subsample < 1:
            raise ValueError("beam_subsample must be >= 1")

    def beam_indices(self, num_beams: int) -> np.ndarray | None:
        if self.beam_subsample is None or self.beam_subsample >= num_beams:
            return None
        return np.unique(np.round(
            np.linspace(0, num_beams - 1, self.beam_subsample)).astype(int))


@dataclass
class FilterConfig:
    map_bounds: Box2
    init_particles: int = 100_000
    tracking_particles: int = 5_000
    convergence_spread: float = 0.5
    resample_ess_fraction: float = 0.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.init_particles >= self.tracking_particles >= 1:
            raise ValueError("need init_particles >= tracking_particles >= 1")
        if not 0.0 < self.resample_ess_fraction <= 1.0:
            raise ValueError("resample_ess_fraction must lie in (0, 1]")


def init_uniform(config: FilterConfig, rng: np.random.Generator) -> ParticleSet:
    """Uniform pose hypotheses over the map bounds and all headings."""
    n = config.init_particles
    b = config.map_bounds
    poses = np.empty((n, 3))
    poses[:, 0] = rng.uniform(b.x_min, b.x_max, n)
    poses[:, 1] = rng.uniform(b.y_min, b.y_max, n)
    poses[:, 2] = rng.uniform(-np.pi, np.pi, n)
    return ParticleSet(poses, np.full(n, 1.0 / n))


def motion_update(particles: ParticleSet, delta: Pose2, noise: MotionNoise,
                  rng: np.random.Generator) -> ParticleSet:
    """Compose every particle with its own noisy draw of the odometry delta."""
    n = len(particles)
    deltas = np.broadcast_to(delta.as_array(), (n, 3))
    noisy = sample_odometry(deltas, noise, rng)
    th = particles.poses[:, 2]
    c, s = np.cos(th), np.sin(th)
    out = np.empty_like(particles.poses)
    out[:, 0] = particles.poses[:, 0] + c * noisy[:, 0] - s * noisy[:, 1]
    out[:, 1] = particles.poses[:, 1] + s * noisy[:, 0] + c * noisy[:, 1]
    out[:, 2] = wrap_angles(th + noisy[:, 2])
    return ParticleSet(out, particles.weights.copy())


def scan_likelihoods(real: LidarFrame, poses: np.ndarray, obs: ObservationConfig,
                     source: ScanSource) -> tuple[np.ndarray, int]:
    """Gaussian likelihood of the real scan at each pose hypothesis.

    D is the mean absolute range difference over beams valid in BOTH scans
    (real no-returns and rendered escapes are excluded); the likelihood is
    exp(-D^2 / (2 sigma^2)).  Poses with no mutually valid beam get the
    floor likelihood; their count is returned for diagnostics.
    """
    idx = obs.beam_indices(real.params.num_beams)
    real_ranges = real.ranges if idx is None else real.ranges[idx]
    real_valid = np.isfinite(real_ranges)

    rendered, rend_valid = source.render_poses(poses, beam_indices=idx)
    mutual = rend_valid & real_valid[None, :]
    counts = mutual.sum(axis=1)
    diff = np.where(mutual, np.abs(rendered - real_ranges[None, :]), 0.0)
    with np.errstate(invalid="ignore"):
        d = diff.sum(axis=1) / np.maximum(counts, 1)
    like = np.exp(-0.5 * (d / obs.sigma) ** 2)
    starved = counts == 0
    like[starved] = LIKELIHOOD_FLOOR
    return like, int(starved.sum())


def measurement_likelihood(real: LidarFrame, pose: Pose2, obs: ObservationConfig,
                           source: ScanSource) -> float:
    like, _ = scan_likelihoods(real, pose.as_array()[None, :], obs, source)
    return float(like[0])


def measurement_update(particles: ParticleSet, real: LidarFrame,
                       obs: ObservationConfig, source: ScanSource
                       ) -> tuple[ParticleSet, dict]:
    """Bayes reweighting by scan likelihood, with an underflow reset guard."""
    like, starved = scan_likelihoods(real, particles.poses, obs, source)
    w = particles.weights * like
    total = w.sum()
    info = {"starved_particles": starved, "weight_underflow": False}
    if total <= 0.0 or not np.isfinite(total):
        w = np.full(len(particles), 1.0 / len(particles))
        info["weight_underflow"] = True
    else:
        w = w / total
    return ParticleSet(particles.poses.copy(), w), info


def systematic_resample(particles: ParticleSet, count: int,
                        rng: np.random.Generator) -> ParticleSet:
    """Low-variance resampling: one random offset, `count` evenly spaced picks."""
    positions = (rng.random() + np.arange(count)) / count
    cumulative = np.cumsum(particles.weights)
    cumulative[-1] = 1.0            # guard against float round-off at the tail
    idx = np.searchsorted(cumulative, positions, side="left")
    return ParticleSet(particles.poses[idx].copy(), np.full(count, 1.0 / count))


def resample(particles: ParticleSet, target_count: int, ess_fraction: float,
             rng: np.random.Generator) -> ParticleSet:
    """Resample when the ESS degenerates, or when shrinking the budget.

    With a healthy ESS and an unchanged budget the input passes through
    untouched; a smaller target forces a single systematic pass.
    """
    m = len(particles)
    if particles.ess < ess_fraction * m or target_count < m:
        return systematic_resample(particles, target_count, rng)
    return particles


def estimate_pose(particles: ParticleSet) -> tuple[Pose2, float]:
    """Weighted mean position, circular-mean heading, and RMS position spread."""
    w = particles.weights
    x = float(w @ particles.poses[:, 0])
    y = float(w @ particles.poses[:, 1])
    theta = float(np.arctan2(w @ np.sin(particles.poses[:, 2]),
                             w @ np.cos(particles.poses[:, 2])))
    d2 = (particles.poses[:, 0] - x) ** 2 + (particles.poses[:, 1] - y) ** 2
    spread = float(np.sqrt(w @ d2))
    return Pose2(x, y, theta), spread


@dataclass
class StepRecord:
    """One filter cycle's output for the localization log."""

    timestamp: float
    pose: Pose2
    spread: float
    ess: float
    converged: bool
    seconds: float


class Localizer:
    """Two-stage global localization filter over a pluggable scan source."""

    def __init__(self, config: FilterConfig, obs: ObservationConfig,
                 noise: MotionNoise, source: ScanSource):
        self.config = config
        self.obs = obs
        self.noise = noise
        self.source = source
        self.rng = np.random.default_rng(config.rng_seed)
        self.particles = init_uniform(config, self.rng)
        self.budget = config.init_particles
        self.converged = False
        self.convergence_time: float | None = None

    def step(self, odometry_delta: Pose2 | None, frame: LidarFrame) -> StepRecord:
        t0 = time.perf_counter()
        if odometry_delta is not None:
            self.particles = motion_update(self.particles, odometry_delta,
                                           self.noise, self.rng)
        self.particles, _ = measurement_update(self.particles, frame,
                                               self.obs, self.source)
        ess = self.particles.ess
        self.particles = resample(self.particles, self.budget,
                                  self.config.resample_ess_fraction, self.rng)
        pose, spread = estimate_pose(self.particles)
        if not self.converged and spread < self.config.convergence_spread:
            self.converged = True
            self.convergence_time = frame.timestamp
            self.budget = self.config.tracking_particles
        return StepRecord(frame.timestamp, pose, spread, ess, self.converged,
                          time.perf_counter() - t0)


def save_trajectory(path: str, records: list[StepRecord]) -> None:
    """Line-delimited localization log, one record per filter cycle."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": "scanloc-traj",
                            "version": TRAJ_FORMAT_VERSION}, sort_keys=True) + "\n")
        for r in records:
            f.write(json.dumps(
                {"t": r.timestamp,
                 "pose": [r.pose.x, r.pose.y, r.pose.theta],
                 "spread": r.spread, "ess": r.ess,
                 "converged": r.converged, "seconds": r.seconds},
                sort_keys=True) + "\n")


def load_trajectory(path: str) -> list[StepRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("format") != "scanloc-traj":
            raise ValueError(f"{path}: not a localization log")
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(StepRecord(d["t"], Pose2(*d["pose"]), d["spread"],
                                      d["ess"], d["converged"], d["seconds"]))
    return records
