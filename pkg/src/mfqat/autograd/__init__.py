from .engine import DebugOptions, Parameter, Tape, TapeReuseError, Tensor
from . import ops
from .optim import CosineSchedule, MultiStepSchedule, Optimizer

__all__ = [
    "DebugOptions",
    "Parameter",
    "Tape",
    "TapeReuseError",
    "Tensor",
    "ops",
    "Optimizer",
    "CosineSchedule",
    "MultiStepSchedule",
]
