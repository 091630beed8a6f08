"""Field training from posed scans: losses, optimizer, and the epoch loop.

The per-batch pipeline renders a batch of recorded beams in train mode,
scores the expected ranges with an L1 geometric loss, adds an entropy-style
occupancy regularizer over every sample point, and backpropagates by hand
through the rendering weights into the network.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import LidarFrame, LidarParams, Pose2, beam_rays
from .field import FieldModel
from .render import RaySampling, termination_weights

REG_EPS = 1e-7

REPORT_FORMAT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite loss; carries the offending step."""

    def __init__(self, message: str, epoch: int, batch_index: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    batch_size: int = 1024            # rays per optimizer step
    epochs: int = 32
    learning_rate: float = 1e-4
    lr_decay_epochs: tuple[int, ...] = (4, 8)
    lr_decay_factor: float = 0.5
    weight_decay: float = 0.001
    lambda_reg: float = 1e-5
    samples_per_ray: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.samples_per_ray < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if self.lambda_reg < 0.0 or self.weight_decay < 0.0:
            raise ValueError("lambda_reg and weight_decay must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def lr_at_epoch(self, epoch: int) -> float:
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor ** drops


@dataclass
class TrainSample:
    """One recorded beam: geometry plus the measured range."""

    origin: np.ndarray
    direction: np.ndarray
    true_range: float
    valid: bool


def geometric_loss(rendered: np.ndarray, truth: np.ndarray,
                   valid: np.ndarray) -> float:
    """Mean absolute range error over valid beams; zero when none are valid."""
    rendered = np.asarray(rendered, dtype=float)
    truth = np.asarray(truth, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    if rendered.shape != truth.shape or rendered.shape != valid.shape:
        raise ValueError("rendered, truth, and valid must share a shape")
    if not valid.any():
        return 0.0
    return float(np.abs(rendered[valid] - truth[valid]).mean())


def occupancy_regularizer(occ: np.ndarray) -> float:
    """Mean of log(p) + log(1-p), probabilities clamped to [eps, 1-eps].

    Minimizing this pushes predictions away from 0.5 toward hard 0/1 values.
    """
    p = np.clip(np.asarray(occ, dtype=float), REG_EPS, 1.0 - REG_EPS)
    return float((np.log(p) + np.log1p(-p)).mean())


def _range_grad(occ: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """d(range)/d(occ) rows for occupancy rows (R, N).

    range = sum_i occ_i * prod_{j<i}(1-occ_j) * m_i, so the derivative wrt
    occ_k is its own survival-weighted distance minus the discounted mass of
    everything behind it.
    """
    alpha = termination_weights(occ)
    weighted = alpha * distances
    suffix = np.flip(np.cumsum(np.flip(weighted, axis=-1), axis=-1), axis=-1) \
        - weighted
    prior = np.concatenate(
        [np.ones(occ.shape[:-1] + (1,)), np.cumprod(1.0 - occ, axis=-1)[..., :-1]],
        axis=-1)
    # The suffix mass carries a (1-occ_k) factor, so the ratio stays bounded;
    # the floor only guards the exact occ=1 case (suffix is then zero anyway).
    return prior * distances - suffix / np.maximum(1.0 - occ, 1e-300)


@dataclass
class BatchLoss:
    total: float
    geo: float
    reg: float
    rendered: np.ndarray
    grads: dict[str, np.ndarray]


def total_loss(model: FieldModel, origins: np.ndarray, dirs: np.ndarray,
               truth: np.ndarray, valid: np.ndarray, sampling: RaySampling,
               lambda_reg: float) -> BatchLoss:
    """Forward + backward for one ray batch; returns losses and parameter grads.

    Invalid (no-return) beams are skipped by the geometric term but their
    sample points still feed the regularizer.
    """
    m = sampling.distances()
    n_rays = origins.shape[0]
    pts = origins[:, None, :] + m[None, :, None] * dirs[:, None, :]
    probs = model.forward_train(pts.reshape(-1, 2), clamp_logits=True)
    occ = probs.reshape(n_rays, m.size)

    ranges, _ = _render_ranges(occ, m)
    geo = geometric_loss(ranges, truth, valid)
    reg = occupancy_regularizer(occ)
    total = geo + lambda_reg * reg
    if not np.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss (geo={geo}, reg={reg})", epoch=-1, batch_index=-1)

    n_valid = int(valid.sum())
    d_ranges = np.zeros(n_rays)
    if n_valid:
        d_ranges[valid] = np.sign(ranges[valid] - truth[valid]) / n_valid
    d_occ = d_ranges[:, None] * _range_grad(occ, m)

    if lambda_reg > 0.0:
        inside = (occ >= REG_EPS) & (occ <= 1.0 - REG_EPS)
        p = np.clip(occ, REG_EPS, 1.0 - REG_EPS)
        d_occ = d_occ + lambda_reg * np.where(
            inside, 1.0 / p - 1.0 / (1.0 - p), 0.0) / occ.size

    grads = model.backward(d_occ.ravel())
    return BatchLoss(total, geo, reg, ranges, grads)


def _render_ranges(occ: np.ndarray, distances: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    alpha = termination_weights(occ)
    return (alpha * distances).sum(axis=-1), 1.0 - alpha.sum(axis=-1)


class AdamW:
    """Adam with decoupled weight decay; decay touches matrix weights only."""

    def __init__(self, model: FieldModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.t = 0
        params = model.parameters()
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.config
        self.t += 1
        b1c = 1.0 - cfg.adam_beta1 ** self.t
        b2c = 1.0 - cfg.adam_beta2 ** self.t
        for name, param in self.model.parameters().items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + cfg.adam_eps)
            if cfg.weight_decay > 0.0 and FieldModel.is_weight(name):
                update = update + cfg.weight_decay * param
            param -= lr * update


@dataclass
class EpochStats:
    epoch: int
    geo_loss: float
    reg_loss: float
    lr: float
    seconds: float
    val_abs_err: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            header = {"format": "scanloc-train-report",
                      "version": REPORT_FORMAT_VERSION}
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for e in self.epochs:
                rec = {"epoch": e.epoch, "geo_loss": e.geo_loss,
                       "reg_loss": e.reg_loss, "lr": e.lr,
                       "seconds": e.seconds, "val_abs_err": e.val_abs_err}
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "TrainReport":
        with open(path, "r", encoding="utf-8") as f:
            header = json.loads(f.readline())
            if header.get("format") != "scanloc-train-report":
                raise ValueError(f"{path}: not a training report")
            epochs = []
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                epochs.append(EpochStats(d["epoch"], d["geo_loss"], d["reg_loss"],
                                         d["lr"], d["seconds"], d["val_abs_err"]))
        return cls(epochs)


def build_ray_pool(poses: list[Pose2], frames: list[LidarFrame]
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flatten posed frames into (origins, dirs, truth, valid) beam arrays.

    No-return beams are kept (valid=False): their sample points still carry
    regularization signal even though they contribute no range error.
    """
    if len(poses) != len(frames):
        raise ValueError("poses and frames must align")
    origins, dirs, truth, valid = [], [], [], []
    for pose, frame in zip(poses, frames):
        if pose is None:
            raise ValueError("training requires a pose on every frame")
        o, d = beam_rays(pose, frame.params)
        origins.append(o)
        dirs.append(d)
        truth.append(frame.ranges)
        valid.append(frame.valid)
    return (np.concatenate(origins), np.concatenate(dirs),
            np.concatenate(truth), np.concatenate(valid))


def _validation_error(model: FieldModel, poses: list[Pose2],
                      frames: list[LidarFrame], params: LidarParams,
                      sampling: RaySampling) -> float | None:
    from .render import render_scans
    if not frames:
        return None
    pose_arr = np.array([p.as_array() for p in poses])
    rendered, escape = render_scans(model, pose_arr, params, sampling)
    errs = []
    for i, frame in enumerate(frames):
        mask = frame.valid
        if mask.any():
            errs.append(np.abs(rendered[i][mask] - frame.ranges[mask]))
    if not errs:
        return None
    return float(np.concatenate(errs).mean())


def fit(poses: list[Pose2], frames: list[LidarFrame], config: TrainConfig,
        model: FieldModel | None = None) -> tuple[FieldModel, TrainReport]:
    """Optimize a field on posed scans; deterministic under config.rng_seed.

    The final `val_fraction` of frames is held out and scored per epoch with
    infer-mode rendering; everything else becomes one global beam pool,
    reshuffled every epoch.
    """
    if not frames:
        raise ValueError("empty training log")
    params = frames[0].params
    rng = np.random.default_rng(config.rng_seed)
    if model is None:
        model = FieldModel(rng=np.random.default_rng(config.rng_seed + 1))

    n_val = int(len(frames) * config.val_fraction)
    if n_val > 0:
        train_poses, val_poses = poses[:-n_val], poses[-n_val:]
        train_frames, val_frames = frames[:-n_val], frames[-n_val:]
    else:
        train_poses, val_poses = poses, []
        train_frames, val_frames = frames, []

    origins, dirs, truth, valid = build_ray_pool(train_poses, train_frames)
    if not valid.any():
        raise ValueError("no valid beams in the training log")

    sampling = RaySampling(config.samples_per_ray, params.range_min,
                           params.range_max)
    optimizer = AdamW(model, config)
    report = TrainReport()
    n_rays = origins.shape[0]

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = config.lr_at_epoch(epoch)
        perm = rng.permutation(n_rays)
        geo_sum = reg_sum = 0.0
        n_batches = 0
        for bi, start in enumerate(range(0, n_rays, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            try:
                batch = total_loss(model, origins[idx], dirs[idx], truth[idx],
                                   valid[idx], sampling, config.lambda_reg)
            except NonFiniteLossError as err:
                raise NonFiniteLossError(str(err), epoch, bi) from None
            optimizer.step(batch.grads, lr)
            geo_sum += batch.geo * idx.size
            reg_sum += batch.reg * idx.size
            n_batches += idx.size
        val_err = _validation_error(model, val_poses, val_frames, params, sampling)
        report.epochs.append(EpochStats(
            epoch, geo_sum / n_batches, reg_sum / n_batches, lr,
            time.perf_counter() - t0, val_err))
    return model, report
