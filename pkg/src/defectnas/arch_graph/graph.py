"""Immutable DAG description of a candidate CNN.

Node ids: ``0`` is the network input, node ``i`` (1-based) is the output of
``layers[i - 1]``.  Layer ``i`` reads node ``i - 1``; every :class:`SkipEdge`
with ``dest == i`` merges one more node into that input, either by addition
(optionally through a 1x1 projection) or by channel concatenation.

A skip source reads the value a node passes forward, i.e. the node after the
merges into the layer that consumes it.  Residual chains therefore
accumulate (``x_{k+1} = f(x_k) + x_k``) and a DenseNet layer needs a single
concat edge from the node feeding the previous dense layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

LAYER_KINDS = ("conv", "sepconv", "maxpool", "avgpool", "spp", "gap", "flatten", "dense", "classifier")
BODY_KINDS = ("conv", "sepconv", "maxpool", "avgpool")
TRANSITION_KINDS = ("spp", "gap", "flatten")
HEAD_KINDS = ("dense", "classifier")
MERGE_RULES = ("add", "concat")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    features: int = 0
    stride: int = 1
    padding: int = 0
    spp_scales: int = 0
    bias: bool = True
    bn: bool = False
    relu: bool = False
    preact: bool = False

    @property
    def trainable(self) -> bool:
        return self.kind in ("conv", "sepconv", "dense", "classifier")

    def is_padded_3x3(self) -> bool:
        return self.kind == "conv" and self.kernel == 3 and self.padding == 1 and self.stride == 1


@dataclass(frozen=True)
class SkipEdge:
    source: int
    dest: int
    merge: str = "add"
    projection: bool = False
    pool: bool = False  # global-average-pool the source on the skip path
    proj_bias: bool = True


@dataclass(frozen=True)
class ArchGraph:
    layers: tuple[LayerSpec, ...]
    skips: tuple[SkipEdge, ...] = ()
    input_channels: int = 3
    patch_size: int = 224
    num_classes: int = 6
    space: str | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "skips", tuple(self.skips))

    def __len__(self):
        return len(self.layers)

    def skips_into(self, node: int):
        return [s for s in self.skips if s.dest == node]

    def with_patch_size(self, patch_size: int) -> "ArchGraph":
        return replace(self, patch_size=patch_size)

    def without_layer(self, index: int) -> "ArchGraph":
        """Drop ``layers[index]`` (0-based) and renumber skips; edges touching it are dropped."""
        node = index + 1

        def renum(i):
            return i - 1 if i > node else i

        skips = tuple(
            replace(s, source=renum(s.source), dest=renum(s.dest))
            for s in self.skips
            if s.source != node and s.dest != node
        )
        layers = self.layers[:index] + self.layers[index + 1:]
        return replace(self, layers=layers, skips=skips)

    @property
    def conv_count(self) -> int:
        return sum(1 for l in self.layers if l.kind in ("conv", "sepconv"))


@dataclass
class Violation:
    code: str
    message: str
    layer: int | None = None

    def __str__(self):
        where = f" (node {self.layer})" if self.layer is not None else ""
        return f"{self.code}{where}: {self.message}"


@dataclass
class ShapeReport:
    shapes: list = field(default_factory=list)  # node id -> (C, H, W) or (F,)
    layer_params: list = field(default_factory=list)
    skip_params: dict = field(default_factory=dict)  # skip index -> count
    param_count: int = 0
    layer_count: int = 0

    @property
    def millions(self) -> float:
        return self.param_count / 1e6
