"""Dense float64 tensors with reverse-mode differentiation.

Hot spatial kernels (conv2d, max_pool2d) run through numba when available;
set JDX_BACKEND=numpy to force the pure-numpy fallback.  Everything else is
plain vectorized numpy.
"""

from .tensor import (
    Tensor,
    Tape,
    NumericsError,
    ShapeError,
    TapeError,
    backward,
    active_tape,
    pause_recording,
    zero_grad,
)
from . import ops
from .ops import forward_op
from .adam import AdamState, adam_step
from .gradcheck import grad_check, GradCheckReport
from .checkpoint import ParameterStore, save_checkpoint, load_checkpoint
from .backend import BACKEND

__all__ = [
    "Tensor", "Tape", "NumericsError", "ShapeError", "TapeError",
    "backward", "active_tape", "pause_recording", "zero_grad",
    "ops", "forward_op", "AdamState", "adam_step",
    "grad_check", "GradCheckReport",
    "ParameterStore", "save_checkpoint", "load_checkpoint",
    "BACKEND",
]
