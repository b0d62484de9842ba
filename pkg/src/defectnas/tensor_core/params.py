from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LayerParams:
    """Trainable arrays of one layer plus its non-trainable and optimizer state.

    ``arrays`` holds the trainable tensors by name (``weight``, ``bias``,
    ``gamma``, ``beta``, ``depthwise``, ...).  ``buffers`` holds batchnorm
    running statistics.  ``slots`` holds optimizer buffers keyed
    ``"<slot>:<name>"`` and ``step`` counts ADAM updates.  ``grads`` is
    filled by the network's backward pass.
    """

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    slots: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __getitem__(self, name):
        return self.arrays[name]

    def get(self, name, default=None):
        return self.arrays.get(name, default)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def slot(self, kind: str, name: str) -> np.ndarray:
        key = f"{kind}:{name}"
        if key not in self.slots:
            self.slots[key] = np.zeros_like(self.arrays[name])
        return self.slots[key]

    def zero_grads(self):
        self.grads = {}

    def accumulate(self, grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if name in self.grads:
                self.grads[name] = self.grads[name] + g
            else:
                self.grads[name] = g

    def validate(self):
        for key, buf in self.slots.items():
            name = key.split(":", 1)[1]
            if buf.shape != self.arrays[name].shape:
                raise ValueError(f"optimizer buffer {key} has shape {buf.shape}")
        var = self.buffers.get("running_var")
        if var is not None and np.any(var <= 0):
            raise ValueError("running variance must be strictly positive")

    def state_dict(self, prefix=""):
        out = {f"{prefix}{k}": v for k, v in self.arrays.items()}
        out.update({f"{prefix}buffer.{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_dict(self, state, prefix=""):
        for k in self.arrays:
            self.arrays[k][...] = state[f"{prefix}{k}"]
        for k in self.buffers:
            self.buffers[k][...] = state[f"{prefix}buffer.{k}"]
