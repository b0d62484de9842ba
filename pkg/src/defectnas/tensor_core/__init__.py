"""Deterministic CPU tensor kernels with explicit forward and backward passes.

Tensors are plain numpy arrays (float32 for training).  Every kernel is a pure
function of its inputs plus an explicit ``numpy.random.Generator`` where
randomness is involved.
"""
from .layers import (
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    conv2d_reference,
    conv_output_size,
    dense_backward,
    dense_forward,
    depthwise_backward,
    depthwise_forward,
    dropout_backward,
    dropout_forward,
    gap_backward,
    gap_forward,
    pool_backward,
    pool_forward,
    relu_backward,
    relu_forward,
    spp_backward,
    spp_features,
    spp_forward,
)
from .loss import sigmoid, sigmoid_bce
from .optim import init_kaiming, step_adam, step_sgd_momentum
from .params import LayerParams
from .gradcheck import grad_check, numerical_gradient, relative_error


class NumericError(FloatingPointError):
    """A tensor contained NaN or Inf where finite values are required."""


def check_finite(x, what="tensor"):
    import numpy as np

    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains NaN or Inf")
    return x
