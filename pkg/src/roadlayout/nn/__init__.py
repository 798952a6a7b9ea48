"""Minimal reverse-mode autodiff stack used by the layout models."""

from .tensor import Tensor, concat, stack_rows, take_rows
from . import ops
from .ops import (
    bce_with_logits,
    bilinear_sample,
    bilinear_sample_nchw,
    ce_with_logits,
    conv2d,
    l1_loss,
    linear,
    lstm_cell,
    maxpool2d,
    softmax,
)
from .optim import Parameter, adam_step
from .gradcheck import grad_check, GradCheckResult
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tensor",
    "concat",
    "stack_rows",
    "take_rows",
    "ops",
    "conv2d",
    "maxpool2d",
    "linear",
    "softmax",
    "bilinear_sample",
    "bilinear_sample_nchw",
    "lstm_cell",
    "bce_with_logits",
    "ce_with_logits",
    "l1_loss",
    "Parameter",
    "adam_step",
    "grad_check",
    "GradCheckResult",
    "save_checkpoint",
    "load_checkpoint",
]
