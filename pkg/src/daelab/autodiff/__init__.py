from .gradcheck import grad_check
from .ops import (activation, bce_loss, conv2d, conv2d_transpose, dense, flatten,
                  relu, same_padding, sigmoid)
from .optim import AdamState, adam_step, lr_at_epoch
from .rng import Rng
from .tensor import NumericError, Parameter, ShapeError, Tensor

__all__ = [
    "AdamState", "NumericError", "Parameter", "Rng", "ShapeError", "Tensor",
    "activation", "adam_step", "bce_loss", "conv2d", "conv2d_transpose", "dense",
    "flatten", "grad_check", "lr_at_epoch", "relu", "same_padding", "sigmoid",
]
