"""Metal-binding residue and metal-type prediction on co-evolved residue
networks with mean-aggregation graph neural networks."""

from .errors import CheckpointError, InputError, MBGNNError, ShapeError, TrainingDivergence
from .kernels import BACKEND
from .metrics import METAL_TYPES

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "METAL_TYPES",
    "CheckpointError",
    "InputError",
    "MBGNNError",
    "ShapeError",
    "TrainingDivergence",
]
