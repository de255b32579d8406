"""Dense float64 linear algebra, reverse-mode differentiation, and optimisation."""

from .autodiff import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import analytic_grads, grad_check
from .linalg import as_matrix, bmm, matmul, softmax, softmax_cross_entropy
from .optim import AdamState, adam_step, clip_global_norm
from .rng import stream, truncated_normal

__all__ = [
    "Tape", "Tensor", "load_checkpoint", "save_checkpoint", "analytic_grads",
    "grad_check", "as_matrix", "bmm", "matmul", "softmax", "softmax_cross_entropy",
    "AdamState", "adam_step", "clip_global_norm", "stream", "truncated_normal",
]
