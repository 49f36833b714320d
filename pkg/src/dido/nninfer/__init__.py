"""Forward inference for the toolkit's two tiny architectures, the training
losses, and finite-difference gradient checking.

Only the two fixed architectures are implemented (a one-block 1D residual
conv net and a three-layer GRU stack with a per-step linear head); gradients
are hand-written reverse mode so everything stays verifiable against central
differences.
"""

from .bundle import DiagCovHead, ShapeError, WeightBundle, random_bundle
from .resnet1d import resnet1d_backward, resnet1d_forward
from .gru import gru_backward, gru_forward
from .losses import (
    NonFiniteGradient,
    lowpass_filter,
    angular_rate_derivative,
    loss_debias_accel,
    loss_debias_gyro,
    loss_resdyn,
    loss_vp,
)
from .gradcheck import central_difference_gradients, grad_check, standard_gradient_report

__all__ = [
    "WeightBundle",
    "DiagCovHead",
    "ShapeError",
    "random_bundle",
    "resnet1d_forward",
    "resnet1d_backward",
    "gru_forward",
    "gru_backward",
    "lowpass_filter",
    "angular_rate_derivative",
    "loss_debias_accel",
    "loss_debias_gyro",
    "loss_resdyn",
    "loss_vp",
    "NonFiniteGradient",
    "central_difference_gradients",
    "grad_check",
    "standard_gradient_report",
]
