"""Odometry motion model: rot-trans-rot decomposition with Gaussian noise.

Shared by the simulator (to corrupt ground-truth deltas into odometry) and the
particle filter (to diffuse particles with the same model).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import wrap_angles


@dataclass
class MotionNoise:
    """Noise coefficients for the odometry model.

    alpha1/alpha2 scale rotational variance (from rotation and translation),
    alpha3/alpha4 translational variance.  All unitless, all >= 0.
    """

    alpha1: float = 0.1
    alpha2: float = 0.1
    alpha3: float = 0.05
    alpha4: float = 0.05

    def __post_init__(self) -> None:
        for a in (self.alpha1, self.alpha2, self.alpha3, self.alpha4):
            if a < 0.0:
                raise ValueError("noise coefficients must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4)

    @classmethod
    def zero(cls) -> "MotionNoise":
        return cls(0.0, 0.0, 0.0, 0.0)


def decompose(deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split relative motions (K, 3) into (rot1, trans, rot2) components.

    Pure rotations (trans below 1e-9) put the whole turn into rot2, keeping
    rot1 well-defined.
    """
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 3)
    trans = np.hypot(deltas[:, 0], deltas[:, 1])
    rot1 = np.where(trans > 1e-9, np.arctan2(deltas[:, 1], deltas[:, 0]), 0.0)
    rot2 = wrap_angles(deltas[:, 2] - rot1)
    return rot1, trans, rot2


def sample_odometry(deltas: np.ndarray, noise: MotionNoise,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw noisy versions of relative motions (K, 3), one per row.

    Each decomposed component is perturbed by a zero-mean Gaussian whose
    variance scales with the motion magnitudes through the alpha coefficients.
    """
    rot1, trans, rot2 = decompose(deltas)
    a1, a2, a3, a4 = noise.as_tuple()
    std_r1 = np.sqrt(a1 * rot1 ** 2 + a2 * trans ** 2)
    std_t = np.sqrt(a3 * trans ** 2 + a4 * (rot1 ** 2 + rot2 ** 2))
    std_r2 = np.sqrt(a1 * rot2 ** 2 + a2 * trans ** 2)

    eps = rng.normal(size=(rot1.size, 3))
    r1 = rot1 + eps[:, 0] * std_r1
    tr = trans + eps[:, 1] * std_t
    r2 = rot2 + eps[:, 2] * std_r2

    out = np.empty((rot1.size, 3), dtype=float)
    out[:, 0] = tr * np.cos(r1)
    out[:, 1] = tr * np.sin(r1)
    out[:, 2] = wrap_angles(r1 + r2)
    return out
