"""Multi-target and per-class accuracy on sigmoid outputs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASS_NAMES = ("background", "crack", "spallation", "efflorescence", "exposed_bars", "corrosion_stain")


def binarize(outputs, threshold=0.5):
    # values exactly at the threshold count as positive
    return (np.asarray(outputs) >= threshold).astype(np.int8)


def _check(outputs, targets):
    outputs = np.asarray(outputs)
    targets = np.asarray(targets)
    if outputs.shape != targets.shape or outputs.ndim != 2:
        raise ValueError(f"outputs {outputs.shape} and targets {targets.shape} must be matching N x K arrays")
    if not np.isin(targets, (0, 1)).all():
        raise ValueError("targets must be binary")
    return outputs, targets


def multi_target_accuracy(outputs, targets, threshold=0.5) -> float:
    """Fraction of rows whose every binarized output equals its target."""
    outputs, targets = _check(outputs, targets)
    if len(outputs) == 0:
        return 0.0
    return float(np.mean(np.all(binarize(outputs, threshold) == targets, axis=1)))


def per_class_accuracy(outputs, targets, threshold=0.5):
    """Per-column binary accuracy and their average."""
    outputs, targets = _check(outputs, targets)
    if len(outputs) == 0:
        return np.zeros(outputs.shape[1]), 0.0
    acc = np.mean(binarize(outputs, threshold) == targets, axis=0)
    return acc, float(acc.mean())


@dataclass
class EvalReport:
    multi_target: float
    per_class: list = field(default_factory=list)
    average: float = 0.0
    loss: float = 0.0

    def as_dict(self):
        out = {"multi_target": self.multi_target, "average": self.average, "loss": self.loss}
        out.update({f"acc_{n}": float(a) for n, a in zip(CLASS_NAMES, self.per_class)})
        return out


def evaluate_outputs(outputs, targets, threshold=0.5, loss=0.0) -> EvalReport:
    per, avg = per_class_accuracy(outputs, targets, threshold)
    return EvalReport(multi_target_accuracy(outputs, targets, threshold), [float(a) for a in per], avg, loss)


def moving_average(values, window=20):
    """Trailing mean over ``min(window, i + 1)`` entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - window)
    return ((csum[idx] - csum[lo]) / (idx - lo)).tolist()
