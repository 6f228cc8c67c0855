from . import ops
from .gradcheck import GradCheckReport, grad_check
from .rng import Rng
from .tensor import Tape, Tensor, backward, debug_mode, no_grad, precision

__all__ = [
    "GradCheckReport",
    "Rng",
    "Tape",
    "Tensor",
    "backward",
    "debug_mode",
    "grad_check",
    "no_grad",
    "ops",
    "precision",
]
