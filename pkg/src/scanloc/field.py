"""Learned occupancy field: a 2D point in, probability of occupancy out.

The network is a fixed architecture implemented directly on numpy: a
sinusoidal positional encoding feeding a stack of fully-connected layers,
each with batch normalization and ReLU, joined by additive identity
shortcuts between the equal-width layers, and a 1-unit sigmoid head.
Forward and backward passes are hand-derived for this architecture; there
is deliberately no general autodiff here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container

BN_EPS = 1e-5
LOGIT_CLAMP = 15.0

CHECKPOINT_KIND = "field-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncodingConfig:
    """Sinusoidal positional encoding at frequencies 2^0 .. 2^(L-1)."""

    num_frequencies: int = 10
    include_input: bool = True

    @property
    def dim(self) -> int:
        base = 4 * self.num_frequencies
        return base + (2 if self.include_input else 0)


def encode(points: np.ndarray, config: EncodingConfig,
           dtype: np.dtype | str = np.float64) -> np.ndarray:
    """Lift 2D points (n, 2) to (n, dim) sin/cos features.

    Layout per frequency block k: [sin(2^k x), sin(2^k y), cos(2^k x),
    cos(2^k y)], preceded by the raw coordinates when include_input is set.
    """
    p = np.asarray(points, dtype=dtype).reshape(-1, 2)
    out = np.empty((p.shape[0], config.dim), dtype=dtype)
    col = 0
    if config.include_input:
        out[:, :2] = p
        col = 2
    for k in range(config.num_frequencies):
        scaled = p * p.dtype.type(2.0 ** k)
        np.sin(scaled, out=out[:, col:col + 2])
        np.cos(scaled, out=out[:, col + 2:col + 4])
        col += 4
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class _Layer:
    """One fully-connected + batchnorm block."""

    W: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray


@dataclass
class _TrainCache:
    """Everything the backward pass needs from one train-mode forward."""

    encoded: np.ndarray
    hs: list[np.ndarray]            # hs[0] = layer-1 output, ... final hidden
    xhats: list[np.ndarray]
    stds: list[np.ndarray]
    relu_masks: list[np.ndarray]
    logit_raw: np.ndarray
    prob: np.ndarray
    clamp_pass: np.ndarray | None   # None when logits were not clamped


class FieldModel:
    """Occupancy field network with hand-rolled forward/backward passes.

    train-mode forwards normalize with batch statistics and cache
    intermediates for `backward`; infer-mode forwards use running statistics
    and are bit-deterministic for identical inputs.
    """

    def __init__(self, encoding: EncodingConfig | None = None,
                 hidden_width: int = 256, num_hidden_layers: int = 8,
                 bn_momentum: float = 0.9, rng: np.random.Generator | None = None,
                 dtype: str = "float64"):
        if num_hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {dtype!r}")
        self.encoding = encoding or EncodingConfig()
        self.hidden_width = int(hidden_width)
        self.num_hidden_layers = int(num_hidden_layers)
        self.bn_momentum = float(bn_momentum)
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        dt = self.dtype

        self.layers: list[_Layer] = []
        fan_in = self.encoding.dim
        for _ in range(self.num_hidden_layers):
            bound = np.sqrt(6.0 / fan_in)
            self.layers.append(_Layer(
                W=rng.uniform(-bound, bound,
                              size=(fan_in, self.hidden_width)).astype(dt),
                b=np.zeros(self.hidden_width, dt),
                gamma=np.ones(self.hidden_width, dt),
                beta=np.zeros(self.hidden_width, dt),
                run_mean=np.zeros(self.hidden_width, dt),
                run_var=np.ones(self.hidden_width, dt),
            ))
            fan_in = self.hidden_width
        bound = np.sqrt(6.0 / self.hidden_width)
        self.head_w = rng.uniform(-bound, bound,
                                  size=(self.hidden_width, 1)).astype(dt)
        self.head_b = np.zeros(1, dt)

        self._train_cache: _TrainCache | None = None

    # -- parameter access -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, keyed by name."""
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.W"] = layer.W
            params[f"layer{i}.b"] = layer.b
            params[f"layer{i}.gamma"] = layer.gamma
            params[f"layer{i}.beta"] = layer.beta
        params["head.W"] = self.head_w
        params["head.b"] = self.head_b
        return params

    @staticmethod
    def is_weight(name: str) -> bool:
        """True for matrix weights (the only arrays weight decay touches)."""
        return name.endswith(".W")

    def check_finite(self) -> None:
        for name, arr in self.parameters().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in parameter {name!r}; "
                                 "checkpoint or training state is corrupted")
        for i, layer in enumerate(self.layers):
            if not (np.all(np.isfinite(layer.run_mean))
                    and np.all(np.isfinite(layer.run_var))):
                raise ValueError(f"non-finite normalization statistics in layer {i}")

    # -- forward ----------------------------------------------------------

    def _head_logit(self, h: np.ndarray) -> np.ndarray:
        # Row-local multiply+sum instead of (n,D)@(D,1): BLAS gemv blocks rows
        # differently per batch size, which would break bit-identical outputs
        # across batch shapes.
        return (h * self.head_w.ravel()).sum(axis=1) + self.head_b[0]

    def _forward_infer(self, points: np.ndarray) -> np.ndarray:
        # Singleton batches dispatch to gemv whose final ulps differ from gemm
        # rows; pad to two rows so scalar and batched queries agree exactly.
        n = points.shape[0]
        if n == 1:
            points = np.vstack([points, points])
        h = encode(points, self.encoding, self.dtype)
        for i, layer in enumerate(self.layers):
            z = h @ layer.W
            z += layer.b
            z -= layer.run_mean
            z /= np.sqrt(layer.run_var + BN_EPS)
            z *= layer.gamma
            z += layer.beta
            np.maximum(z, 0.0, out=z)
            if i:
                z += h
            h = z
        prob = _sigmoid(self._head_logit(h))
        return prob[:n]

    def forward_train(self, points: np.ndarray,
                      clamp_logits: bool = False) -> np.ndarray:
        """Train-mode forward: batch statistics, running-stat update, cache.

        With clamp_logits the pre-sigmoid values are clipped to
        [-LOGIT_CLAMP, LOGIT_CLAMP] so downstream log terms stay finite; the
        clamp mask enters the backward pass.
        """
        enc = encode(points, self.encoding, self.dtype)
        h = enc
        hs, xhats, stds, masks = [], [], [], []
        m = self.bn_momentum
        for i, layer in enumerate(self.layers):
            z = h @ layer.W
            z += layer.b
            n = z.shape[0]
            mean = z.mean(axis=0)
            sq = np.einsum("nd,nd->d", z, z) / n
            var = sq - mean * mean
            np.maximum(var, 0.0, out=var)      # guard float cancellation
            layer.run_mean[:] = m * layer.run_mean + (1.0 - m) * mean
            layer.run_var[:] = m * layer.run_var + (1.0 - m) * var
            std = np.sqrt(var + BN_EPS)
            z -= mean
            z /= std
            xhat = z                            # cached; do not mutate below
            pre = xhat * layer.gamma
            pre += layer.beta
            mask = pre > 0.0
            # np.maximum (unlike where-on-mask) propagates NaN, so corrupted
            # arithmetic surfaces as a non-finite loss instead of silent zeros.
            np.maximum(pre, 0.0, out=pre)
            if i:
                pre += h
            h = pre
            hs.append(h)
            xhats.append(xhat)
            stds.append(std)
            masks.append(mask)

        logit = self._head_logit(h)
        clamp_pass = None
        if clamp_logits:
            clamp_pass = np.abs(logit) <= LOGIT_CLAMP
            np.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP, out=logit)
        prob = _sigmoid(logit)
        self._train_cache = _TrainCache(enc, hs, xhats, stds, masks,
                                        logit, prob, clamp_pass)
        return prob

    def occupancy_batch(self, points: np.ndarray, mode: str = "infer") -> np.ndarray:
        """Occupancy probabilities for (n, 2) points, in (0, 1)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if points.shape[0] == 0:
            raise ValueError("empty point batch")
        self.check_finite()
        if mode == "infer":
            return self._forward_infer(points)
        if mode == "train":
            return self.forward_train(points)
        raise ValueError(f"unknown mode {mode!r}")

    def occupancy(self, point: np.ndarray, mode: str = "infer") -> float:
        return float(self.occupancy_batch(np.asarray(point).reshape(1, 2), mode)[0])

    def query(self, points: np.ndarray) -> np.ndarray:
        """OccupancySource capability: infer-mode batch occupancy."""
        return self.occupancy_batch(points, mode="infer")

    # -- backward ---------------------------------------------------------

    def backward(self, d_prob: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given dLoss/d(occupancy) for the cached batch.

        Requires a preceding train-mode forward; the cache is kept so repeated
        calls with different upstream gradients reuse the same forward.
        """
        cache = self._train_cache
        if cache is None:
            raise RuntimeError("backward called without a train-mode forward")
        d_prob = np.asarray(d_prob, dtype=float).ravel()
        if d_prob.shape != cache.prob.shape:
            raise ValueError(
                f"upstream gradient shape {d_prob.shape} does not match the "
                f"cached batch {cache.prob.shape}")

        p = cache.prob
        d_logit = d_prob * p * (1.0 - p)
        if cache.clamp_pass is not None:
            d_logit = np.where(cache.clamp_pass, d_logit, 0.0)
        d_logit = d_logit.astype(self.dtype, copy=False)

        grads: dict[str, np.ndarray] = {}
        h_last = cache.hs[-1]
        grads["head.W"] = (d_logit @ h_last)[:, None]
        grads["head.b"] = np.array([d_logit.sum()], dtype=self.dtype)
        dh = d_logit[:, None] * self.head_w.ravel()
        scratch = np.empty_like(dh)

        for i in range(self.num_hidden_layers - 1, -1, -1):
            layer = self.layers[i]
            xhat, std, mask = cache.xhats[i], cache.stds[i], cache.relu_masks[i]
            x_in = cache.encoded if i == 0 else cache.hs[i - 1]
            n = dh.shape[0]

            da = np.multiply(dh, mask, out=scratch)   # through the branch ReLU
            grads[f"layer{i}.gamma"] = np.einsum("nd,nd->d", da, xhat)
            grads[f"layer{i}.beta"] = da.sum(axis=0)
            da *= layer.gamma                          # da is now dxhat
            m1 = da.mean(axis=0)
            m2 = np.einsum("nd,nd->d", da, xhat) / n
            da -= m1
            da -= xhat * m2
            da /= std                                  # da is now dz
            grads[f"layer{i}.W"] = x_in.T @ da
            grads[f"layer{i}.b"] = da.sum(axis=0)
            dx = da @ layer.W.T
            # Identity shortcut: the incoming gradient also flows straight down.
            if i == 0:
                dh = dx
            else:
                dh += dx
        return grads

    # -- persistence ------------------------------------------------------

    def save(self, path: str) -> None:
        """Checkpoint to a self-describing container; round-trips bit-exactly."""
        arrays: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            arrays[f"layer{i}.W"] = layer.W
            arrays[f"layer{i}.b"] = layer.b
            arrays[f"layer{i}.gamma"] = layer.gamma
            arrays[f"layer{i}.beta"] = layer.beta
            arrays[f"layer{i}.run_mean"] = layer.run_mean
            arrays[f"layer{i}.run_var"] = layer.run_var
        arrays["head.W"] = self.head_w
        arrays["head.b"] = self.head_b
        meta = {
            "checkpoint_version": CHECKPOINT_VERSION,
            "num_frequencies": self.encoding.num_frequencies,
            "include_input": self.encoding.include_input,
            "hidden_width": self.hidden_width,
            "num_hidden_layers": self.num_hidden_layers,
            "bn_momentum": self.bn_momentum,
            "dtype": self.dtype.name,
        }
        write_container(path, CHECKPOINT_KIND, meta, arrays)

    @classmethod
    def load(cls, path: str) -> "FieldModel":
        _, meta, arrays = read_container(path, expect_kind=CHECKPOINT_KIND)
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        model = cls(
            EncodingConfig(meta["num_frequencies"], meta["include_input"]),
            hidden_width=meta["hidden_width"],
            num_hidden_layers=meta["num_hidden_layers"],
            bn_momentum=meta["bn_momentum"],
            dtype=meta.get("dtype", "float64"),
        )
        for i, layer in enumerate(model.layers):
            layer.W = arrays[f"layer{i}.W"]
            layer.b = arrays[f"layer{i}.b"]
            layer.gamma = arrays[f"layer{i}.gamma"]
            layer.beta = arrays[f"layer{i}.beta"]
            layer.run_mean = arrays[f"layer{i}.run_mean"]
            layer.run_var = arrays[f"layer{i}.run_var"]
        model.head_w = arrays["head.W"]
        model.head_b = arrays["head.b"]
        model.check_finite()
        return model
