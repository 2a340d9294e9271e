"""Memory-augmented bidirectional GAN for one-class anomaly detection."""

from .config import TrainConfig
from .memory import attend, hull_distance, hull_distances, project, sample_convex
from .networks import MemGAN, NetSpec

__version__ = "0.1.0"

__all__ = [
    "MemGAN",
    "NetSpec",
    "TrainConfig",
    "attend",
    "hull_distance",
    "hull_distances",
    "project",
    "sample_convex",
]
