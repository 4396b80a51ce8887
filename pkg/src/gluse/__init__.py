"""Channel-attention ResNet kit: SE / Gated SE / GLUSE blocks on a small
ResNet, dual-teacher knowledge distillation with dynamic weighting, a
parameter/FLOP profiler, classification metrics, Grad-CAM, and bit-exact
binary dataset / logit / checkpoint formats."""

from .tensor import Tensor, finite_difference_check, no_grad
from .backbone import ModelGraph, build_model, describe, model_forward
from .profiler import asymptotic_cost, cost_report, count_flops, count_params

__all__ = [
    "Tensor", "finite_difference_check", "no_grad",
    "ModelGraph", "build_model", "describe", "model_forward",
    "asymptotic_cost", "cost_report", "count_flops", "count_params",
]

__version__ = "0.1.0"
