"""From controller decisions to architecture graphs, and the shared weight bank."""
from __future__ import annotations

import numpy as np

from ..arch_graph import ArchGraph, LayerSpec, SkipEdge, input_shapes
from ..network import Network, init_layer_params
from ..tensor_core import LayerParams
from .controller import NUM_NODES, OPS, DecisionSequence

FINAL_LADDER = (64, 64, 128, 128, 256, 256, 256)


def op_layer(op: int, features: int) -> LayerSpec:
    name = OPS[op]
    if name.startswith("conv"):
        k = int(name[-1])
        return LayerSpec("conv", kernel=k, features=features, padding=k // 2, bias=False, bn=True, relu=True)
    if name.startswith("sepconv"):
        k = int(name[-1])
        return LayerSpec("sepconv", kernel=k, features=features, padding=k // 2, bias=False, bn=True, relu=True)
    kind = "maxpool" if name.startswith("max") else "avgpool"
    return LayerSpec(kind, kernel=3, features=features, stride=1, padding=1, bias=False)


def ladder(mode: str, base_features: int = 64):
    if mode == "search":
        return (base_features,) * NUM_NODES
    if mode == "final":
        return tuple(f * base_features // 64 for f in FINAL_LADDER)
    raise ValueError(f"mode must be 'search' or 'final', got {mode!r}")


def materialize(decisions: DecisionSequence, mode="search", base_features=64, patch_size=32,
                num_classes=6, name="") -> ArchGraph:
    """Graph for one decision sequence.

    Node ``i`` (graph layer ``i + 1``) reads node ``i - 1`` and adds every
    earlier node ``j < i - 1`` whose bit ``j`` is set; the bit for the
    immediate predecessor is redundant under this rule.  Every op keeps the
    spatial size; final mode widens channels along the ladder and bridges
    mismatched additions with 1x1 projections.  The head is global average
    pooling followed by the classifier.
    """
    if len(decisions.ops) != NUM_NODES:
        raise ValueError(f"expected {NUM_NODES} node decisions, got {len(decisions.ops)}")
    feats = ladder(mode, base_features)
    layers = [op_layer(op, f) for op, f in zip(decisions.ops, feats)]
    skips = []
    for i, bits in enumerate(decisions.skips):
        for j, bit in enumerate(bits):
            if bit and j < i - 1:
                # node j is graph node j + 1; node i is graph layer i + 1
                skips.append(SkipEdge(j + 1, i + 1, "add", projection=feats[j] != feats[i - 1], proj_bias=False))
    layers += [LayerSpec("gap", bias=False), LayerSpec("classifier", features=num_classes)]
    return ArchGraph(tuple(layers), tuple(skips), 3, patch_size, num_classes, "enas", name)


class SharedWeightBank:
    """One parameter container per (node, op), created lazily, plus the classifier.

    Only valid for search mode, where every node maps ``base_features``
    channels to ``base_features`` channels at constant spatial size, so skip
    additions never need projections and a (node, op) entry fits any
    architecture.
    """

    def __init__(self, rng, base_features=64, patch_size=32, num_classes=6, in_channels=3, dtype=np.float32):
        self.rng = rng
        self.base_features = base_features
        self.patch_size = patch_size
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.dtype = dtype
        self.entries: dict = {}
        f = base_features
        self.classifier = init_layer_params(LayerSpec("classifier", features=num_classes), (f,), rng, dtype)
        self._gap = LayerParams()

    def __len__(self):
        return len(self.entries) + 1

    def entry(self, node, op) -> LayerParams:
        key = (node, op)
        if key not in self.entries:
            c = self.in_channels if node == 0 else self.base_features
            shape = (c, self.patch_size, self.patch_size)
            self.entries[key] = init_layer_params(op_layer(op, self.base_features), shape, self.rng, self.dtype)
        return self.entries[key]

    def path(self, decisions):
        return [self.entry(i, op) for i, op in enumerate(decisions.ops)]

    def network(self, decisions, dropout=0.0) -> Network:
        graph = materialize(decisions, "search", self.base_features, self.patch_size, self.num_classes)
        params = self.path(decisions) + [self._gap, self.classifier]
        return Network(graph, rng=self.rng, params=params, skip_params={}, dtype=self.dtype, dropout=dropout)

    def all_params(self):
        return [self.entries[k] for k in sorted(self.entries)] + [self.classifier]

    def zero_grads(self):
        for p in self.all_params():
            p.zero_grads()


def shared_forward(bank: SharedWeightBank, decisions, batch, train=False):
    """Logits of the sampled child on ``batch``; the returned network can run ``backward``."""
    net = bank.network(decisions)
    return net.forward(batch, train=train), net


def check_search_shapes(decisions, base_features=64, patch_size=32):
    """Every node keeps the spatial size and the channel count in search mode."""
    graph = materialize(decisions, "search", base_features, patch_size)
    _, shapes = input_shapes(graph)
    return all(s == (base_features, patch_size, patch_size) for s in shapes[1:NUM_NODES + 1])
