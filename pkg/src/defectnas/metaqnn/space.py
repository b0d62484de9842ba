"""States, actions and legality rules of the sequential layer-picking search space."""
from __future__ import annotations

from dataclasses import dataclass

from ..arch_graph import ArchGraph, LayerSpec, SkipEdge
from ..arch_graph.shapes import METAQNN_DENSE, METAQNN_FEATURES, METAQNN_KERNELS, SPP_SCALES
from ..tensor_core.layers import conv_output_size


@dataclass(frozen=True)
class SearchSpace:
    kernels: tuple = METAQNN_KERNELS
    features: tuple = METAQNN_FEATURES
    dense: tuple = METAQNN_DENSE
    spp_scales: tuple = SPP_SCALES
    min_conv: int = 3
    max_conv: int = 10
    patch_size: int = 224
    allow_skip: bool = True
    num_classes: int = 6

    def is_standard(self) -> bool:
        """True when every choice lies inside the full-size search space (so its rules apply)."""
        return (set(self.kernels) <= set(METAQNN_KERNELS) and set(self.features) <= set(METAQNN_FEATURES)
                and set(self.dense) <= set(METAQNN_DENSE) and set(self.spp_scales) <= set(SPP_SCALES)
                and self.min_conv >= 3 and self.max_conv <= 10)

    def actions(self):
        """Every action in canonical order; the index in this list breaks greedy ties."""
        acts = []
        for k in self.kernels:
            for f in self.features:
                acts.append(("conv", k, f, 1, 0))
                if k == 3:
                    acts.append(("conv", k, f, 1, 1))
                if k > 5:
                    acts.append(("conv", k, f, 2, 0))
        if self.allow_skip:
            acts.append(("skip",))
        acts += [("spp", s) for s in self.spp_scales]
        acts += [("fc", f) for f in self.dense]
        acts.append(("classifier",))
        return acts


@dataclass(frozen=True)
class SearchState:
    """Markov state of the search.

    ``depth`` counts conv layers placed so far.  ``last`` describes the most
    recent decision as (kind, kernel, features, stride, padding, skip flag).
    ``size`` is the current spatial size; it constrains which actions are
    legal but is not part of the Q-table key.
    """

    depth: int = 0
    last: tuple = ("start", 0, 0, 0, 0, False)
    phase: str = "body"
    size: int = 224
    dense_used: bool = False

    @property
    def key(self):
        return (self.depth, self.last, self.phase, self.dense_used)


def start_state(space: SearchSpace) -> SearchState:
    return SearchState(size=space.patch_size)


def legal_actions(space: SearchSpace, state: SearchState, actions=None):
    """Legal subset of the canonical action list, in canonical order."""
    acts = space.actions() if actions is None else actions
    out = []
    min_spp = min(space.spp_scales)
    pending_skip = state.last[0] == "skip"
    for a in acts:
        kind = a[0]
        if state.phase == "terminal":
            break
        if state.phase == "head":
            if kind == "classifier" or (kind == "fc" and not state.dense_used):
                out.append(a)
            continue
        if kind == "conv":
            if state.depth >= space.max_conv:
                continue
            if pending_skip and not (a[1] == 3 and a[3] == 1 and a[4] == 1):
                continue  # a skip spans two padded 3x3 convs
            try:
                size = conv_output_size(state.size, a[1], a[3], a[4])
            except ValueError:
                continue
            if size >= min_spp:
                out.append(a)
        elif kind == "skip":
            last = state.last
            if (not pending_skip and last[0] == "conv" and last[1] == 3 and last[3] == 1 and last[4] == 1
                    and not last[5] and state.depth < space.max_conv):
                out.append(a)
        elif kind == "spp":
            if not pending_skip and state.depth >= space.min_conv and state.size >= a[1]:
                out.append(a)
    return out


def transition(state: SearchState, action) -> SearchState:
    kind = action[0]
    if kind == "conv":
        _, k, f, s, p = action
        size = conv_output_size(state.size, k, s, p)
        closes_skip = state.last[0] == "skip"
        return SearchState(state.depth + 1, ("conv", k, f, s, p, closes_skip), "body", size, False)
    if kind == "skip":
        return SearchState(state.depth, ("skip", 0, 0, 0, 0, True), "body", state.size, False)
    if kind == "spp":
        return SearchState(state.depth, ("spp", action[1], 0, 0, 0, False), "head", state.size, False)
    if kind == "fc":
        return SearchState(state.depth, ("fc", 0, action[1], 0, 0, False), "head", state.size, True)
    if kind == "classifier":
        return SearchState(state.depth, ("classifier", 0, 0, 0, 0, False), "terminal", state.size, state.dense_used)
    raise ValueError(f"unknown action {action!r}")


def build_graph(space: SearchSpace, actions, name="") -> ArchGraph:
    """Turn an action sequence into an ArchGraph (batchnorm + ReLU after every conv and hidden fc).

    A skip runs from the input of the conv before it to the output of the
    conv after it, through a 1x1 projection only when the channel counts
    differ.
    """
    layers, pending = [], []
    channels = [3]  # channels per node
    for a in actions:
        kind = a[0]
        if kind == "conv":
            _, k, f, s, p = a
            layers.append(LayerSpec("conv", kernel=k, features=f, stride=s, padding=p, bn=True, relu=True))
            channels.append(f)
        elif kind == "skip":
            pending.append(len(layers) - 1)
        elif kind == "spp":
            layers.append(LayerSpec("spp", spp_scales=a[1], bias=False))
        elif kind == "fc":
            layers.append(LayerSpec("dense", features=a[1], bn=True, relu=True))
        elif kind == "classifier":
            layers.append(LayerSpec("classifier", features=space.num_classes))
    skips = tuple(SkipEdge(src, src + 3, "add", projection=channels[src] != channels[src + 2]) for src in pending)
    tag = "metaqnn" if space.is_standard() else None
    return ArchGraph(tuple(layers), skips, 3, space.patch_size, space.num_classes, tag, name)
