"""Minimal reverse-mode tensor engine used by the whole package."""

from . import arct, ops
from .gradcheck import GradCheckEntry, GradCheckReport, gradcheck, projected_sum
from .tensor import (Parameter, ShapeError, Tensor, as_tensor, backward,
                     clear_record, collect_kinks, grad_enabled, no_grad,
                     record_length)

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad", "grad_enabled",
    "clear_record", "record_length", "collect_kinks", "as_tensor",
    "ShapeError", "ops", "arct", "gradcheck", "projected_sum",
    "GradCheckReport", "GradCheckEntry",
]
