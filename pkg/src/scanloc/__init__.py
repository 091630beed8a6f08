"""2D LiDAR localization toolkit: learned occupancy fields, scan rendering,
grid caches, a classical grid-map baseline, and Monte-Carlo localization."""

from .core import Box2, LidarFrame, LidarParams, Pose2, Ray
from .field import EncodingConfig, FieldModel
from .gridmap import OccGrid
from .mcl import FilterConfig, Localizer, ObservationConfig, ParticleSet
from .motion import MotionNoise
from .nog import Nog
from .render import RaySampling
from .sim import TrajectorySpec, WorldMap, builtin_worlds
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Box2", "EncodingConfig", "FieldModel", "FilterConfig", "LidarFrame",
    "LidarParams", "Localizer", "MotionNoise", "Nog", "ObservationConfig",
    "OccGrid", "ParticleSet", "Pose2", "Ray", "RaySampling", "TrainConfig",
    "TrajectorySpec", "WorldMap", "builtin_worlds", "__version__",
]
