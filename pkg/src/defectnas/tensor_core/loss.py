"""Per-class sigmoid with binary cross entropy, fused in log space."""
from __future__ import annotations

import numpy as np

LOGIT_CLAMP = 50.0


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z))).astype(
        np.result_type(z, np.float32), copy=False
    )


def sigmoid_bce(logits, targets):
    """Mean BCE over all N*K entries and its gradient with respect to the logits.

    The loss is accumulated sequentially over the batch index so the reduction
    order (and therefore the float result) does not depend on thread layout.
    """
    targets = np.asarray(targets)
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} differ in shape")
    if logits.shape[0] < 1:
        raise ValueError("empty batch")
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must be binary (0 or 1)")
    z = np.clip(logits.astype(np.float64), -LOGIT_CLAMP, LOGIT_CLAMP)
    t = targets.astype(np.float64)
    # softplus(z) - t*z == -[t log s(z) + (1-t) log(1-s(z))]
    per = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z))) - t * z
    total = 0.0
    for row in per.sum(axis=1):
        total += float(row)
    count = per.size
    grad = (sigmoid(z) - t) / count
    return total / count, grad.astype(logits.dtype, copy=False)
