"""Kaiming initialization and the two update rules used by the search.

SGD uses classic heavy-ball momentum (``v <- mu*v + g``, ``p <- p - lr*v``),
without dampening or Nesterov.  ADAM is the standard bias-corrected form and
drives the ENAS controller.
"""
from __future__ import annotations

import math

import numpy as np

from .params import LayerParams


def init_kaiming(shape, fan_in: int, rng, dtype=np.float32):
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def step_sgd_momentum(params: LayerParams, grads, lr: float, momentum: float = 0.9):
    for name, g in grads.items():
        v = params.slot("velocity", name)
        v *= momentum
        v += g
        params.arrays[name] -= (lr * v).astype(params.arrays[name].dtype, copy=False)


def step_adam(params: LayerParams, grads, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int | None = None):
    """One ADAM update.  ``t`` defaults to the container's own step counter."""
    if t is None:
        params.step += 1
        t = params.step
    if t < 1:
        raise ValueError("ADAM step index starts at 1")
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, g in grads.items():
        m = params.slot("adam_m", name)
        v = params.slot("adam_v", name)
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        params.arrays[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
