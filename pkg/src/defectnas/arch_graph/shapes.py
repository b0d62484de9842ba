"""Shape inference, exact parameter counting and structural validation."""
from __future__ import annotations

from ..tensor_core.layers import ShapeError, conv_output_size, spp_features
from .graph import (
    BODY_KINDS,
    HEAD_KINDS,
    LAYER_KINDS,
    MERGE_RULES,
    TRANSITION_KINDS,
    ArchGraph,
    ShapeReport,
    Violation,
)

METAQNN_KERNELS = (3, 5, 7, 9, 11)
METAQNN_FEATURES = (32, 64, 128, 256)
METAQNN_DENSE = (32, 64, 128)
SPP_SCALES = (3, 4, 5)
MIN_CONV, MAX_CONV = 3, 10
ENAS_NODES = 7


def projection_stride(src_hw: int, dst_hw: int) -> int | None:
    """Stride of a 1x1 projection mapping ``src_hw`` onto ``dst_hw``, if one exists."""
    if dst_hw < 1 or src_hw < dst_hw:
        return None
    for s in range(1, src_hw + 1):
        if (src_hw - 1) // s + 1 == dst_hw:
            return s
    return None


def _merged_input(graph, node, shapes, merged):
    """Shape of layer ``node``'s input after applying its skip merges.

    Returns ``(shape, {skip index: param count})``; raises ShapeError on
    incompatible merges.
    """
    shape = shapes[node - 1]
    skip_params = {}
    for idx, s in enumerate(graph.skips):
        if s.dest != node:
            continue
        src = merged[s.source]
        if s.pool:
            if len(src) != 3:
                raise ShapeError(f"skip {s.source}->{s.dest}: pooling needs a spatial source")
            src = (src[0],)
        if s.merge == "concat":
            if len(src) != len(shape) or src[1:] != shape[1:]:
                raise ShapeError(f"skip {s.source}->{s.dest}: concat of {src} onto {shape}")
            shape = (shape[0] + src[0],) + tuple(shape[1:])
            continue
        if src == shape and not s.projection:
            continue
        if not s.projection:
            if len(src) == 3 and len(shape) == 3 and src[1:] != shape[1:]:
                raise ShapeError(
                    f"skip {s.source}->{s.dest}: spatial change {src[1:]} -> {shape[1:]} without projection"
                )
            raise ShapeError(f"skip {s.source}->{s.dest}: shape {src} differs from {shape}; projection required")
        if len(src) != 3 or len(shape) != 3:
            raise ShapeError(f"skip {s.source}->{s.dest}: projection needs spatial tensors")
        if projection_stride(src[1], shape[1]) is None or projection_stride(src[2], shape[2]) is None:
            raise ShapeError(f"skip {s.source}->{s.dest}: no 1x1 projection maps {src[1:]} to {shape[1:]}")
        skip_params[idx] = src[0] * shape[0] + (shape[0] if s.proj_bias else 0)
    return shape, skip_params


def layer_output(layer, in_shape):
    """Output shape and exact trainable element count of one layer."""
    k = layer.kind
    if k in BODY_KINDS:
        if len(in_shape) != 3:
            raise ShapeError(f"{k} needs a spatial input, got {in_shape}")
        c, h, w = in_shape
        ho = conv_output_size(h, layer.kernel, layer.stride, layer.padding)
        wo = conv_output_size(w, layer.kernel, layer.stride, layer.padding)
        pre = 2 * c if layer.preact else 0
        if k == "conv":
            f = layer.features
            n = layer.kernel ** 2 * c * f
        elif k == "sepconv":
            f = layer.features
            n = layer.kernel ** 2 * c + c * f
        else:
            # pools widen through an internal 1x1 conv only when asked to
            f = layer.features or c
            n = c * f + (f if layer.bias else 0) if f != c else 0
            return (f, ho, wo), n + (2 * f if layer.bn else 0) + pre
        n += (f if layer.bias else 0) + (2 * f if layer.bn else 0) + pre
        return (f, ho, wo), n
    if k == "spp":
        if len(in_shape) != 3:
            raise ShapeError(f"spp needs a spatial input, got {in_shape}")
        c, h, w = in_shape
        if min(h, w) < layer.spp_scales:
            raise ShapeError(f"spp scales={layer.spp_scales} on a {h}x{w} map")
        return (spp_features(c, layer.spp_scales),), (2 * c if layer.preact else 0)
    if k in ("gap", "flatten"):
        if len(in_shape) != 3:
            raise ShapeError(f"{k} needs a spatial input, got {in_shape}")
        c, h, w = in_shape
        out = (c,) if k == "gap" else (c * h * w,)
        return out, (2 * c if layer.preact else 0)
    if k in HEAD_KINDS:
        if len(in_shape) != 1:
            raise ShapeError(f"{k} needs a flat input, got {in_shape}")
        fin = in_shape[0]
        f = layer.features
        n = fin * f + (f if layer.bias else 0) + (2 * f if layer.bn else 0)
        n += 2 * fin if layer.preact else 0
        return (f,), n
    raise ShapeError(f"unknown layer kind {k!r}")


def infer_shapes(graph: ArchGraph, input_size: int | None = None) -> ShapeReport:
    """Per-node shapes, exact parameter count and trainable layer count.

    Counts weights, biases and batchnorm (gamma, beta) pairs; running
    statistics are not parameters.  Skip projections are counted as
    parameters but not as layers.
    """
    size = input_size or graph.patch_size
    shapes = [(graph.input_channels, size, size)]
    merged = []
    rep = ShapeReport(shapes=shapes)
    for node, layer in enumerate(graph.layers, start=1):
        in_shape, sp = _merged_input(graph, node, shapes, merged)
        merged.append(in_shape)
        out, n = layer_output(layer, in_shape)
        shapes.append(out)
        rep.layer_params.append(n)
        rep.skip_params.update(sp)
    rep.param_count = sum(rep.layer_params) + sum(rep.skip_params.values())
    rep.layer_count = sum(1 for l in graph.layers if l.trainable)
    return rep


def input_shapes(graph: ArchGraph, input_size: int | None = None):
    """Merged input shape of every layer, in layer order."""
    size = input_size or graph.patch_size
    shapes = [(graph.input_channels, size, size)]
    ins = []
    for node, layer in enumerate(graph.layers, start=1):
        in_shape, _ = _merged_input(graph, node, shapes, ins)
        ins.append(in_shape)
        shapes.append(layer_output(layer, in_shape)[0])
    return ins, shapes


def validate_graph(graph: ArchGraph, input_size: int | None = None) -> list[Violation]:
    """Return every structural violation found; an empty list means valid."""
    v: list[Violation] = []
    n = len(graph.layers)
    if n == 0:
        return [Violation("empty", "graph has no layers")]
    for node, layer in enumerate(graph.layers, start=1):
        if layer.kind not in LAYER_KINDS:
            v.append(Violation("kind", f"unknown layer kind {layer.kind!r}", node))
    last = graph.layers[-1]
    if last.kind != "classifier":
        v.append(Violation("classifier", "final layer must be the classifier", n))
    elif last.features != graph.num_classes:
        v.append(Violation("classifier", f"classifier has {last.features} outputs, expected {graph.num_classes}", n))
    if sum(1 for l in graph.layers if l.kind == "classifier") > 1:
        v.append(Violation("classifier", "more than one classifier"))
    transitions = [i for i, l in enumerate(graph.layers, 1) if l.kind in TRANSITION_KINDS]
    if len(transitions) != 1:
        v.append(Violation("transition", f"expected exactly one spp/gap/flatten stage, found {len(transitions)}"))
    else:
        t = transitions[0]
        for node, layer in enumerate(graph.layers, start=1):
            if node < t and layer.kind not in BODY_KINDS:
                v.append(Violation("order", f"{layer.kind} appears before the pooling stage", node))
            if node > t and layer.kind not in HEAD_KINDS:
                v.append(Violation("order", f"{layer.kind} appears after the pooling stage", node))
    for s in graph.skips:
        if s.merge not in MERGE_RULES:
            v.append(Violation("skip", f"unknown merge rule {s.merge!r}", s.dest))
        if s.source >= s.dest:
            v.append(Violation("cycle", f"skip {s.source}->{s.dest} does not point forward", s.dest))
        elif not (0 <= s.source and s.dest <= n):
            v.append(Violation("skip", f"skip {s.source}->{s.dest} references a missing node", s.dest))
        elif s.source == s.dest - 1:
            v.append(Violation("skip", f"skip {s.source}->{s.dest} duplicates the main path", s.dest))
    if graph.space == "metaqnn":
        v.extend(_metaqnn_rules(graph))
    elif graph.space == "enas":
        v.extend(_enas_rules(graph))
    if any(x.code in ("cycle", "skip", "kind") for x in v):
        return v
    try:
        infer_shapes(graph, input_size)
    except ShapeError as exc:
        v.append(Violation("shape", str(exc)))
    return v


def _metaqnn_rules(graph):
    v = []
    convs = graph.conv_count
    if not MIN_CONV <= convs <= MAX_CONV:
        v.append(Violation("depth", f"{convs} conv layers; MetaQNN space allows {MIN_CONV}-{MAX_CONV}"))
    dense = 0
    for node, l in enumerate(graph.layers, start=1):
        if l.kind == "conv":
            if l.kernel not in METAQNN_KERNELS:
                v.append(Violation("kernel", f"kernel {l.kernel} not in {METAQNN_KERNELS}", node))
            if l.features not in METAQNN_FEATURES:
                v.append(Violation("features", f"{l.features} features not in {METAQNN_FEATURES}", node))
            if l.stride == 2 and l.kernel <= 5:
                v.append(Violation("stride", "stride 2 is only allowed for kernels larger than 5", node))
            if l.stride not in (1, 2):
                v.append(Violation("stride", f"stride {l.stride} not allowed", node))
        elif l.kind == "spp" and l.spp_scales not in SPP_SCALES:
            v.append(Violation("spp", f"scales {l.spp_scales} not in {SPP_SCALES}", node))
        elif l.kind in ("sepconv", "maxpool", "avgpool", "gap", "flatten"):
            v.append(Violation("kind", f"{l.kind} is outside the MetaQNN space", node))
        elif l.kind == "dense":
            dense += 1
            if l.features not in METAQNN_DENSE:
                v.append(Violation("dense", f"hidden size {l.features} not in {METAQNN_DENSE}", node))
    if dense > 1:
        v.append(Violation("dense", "at most one hidden fully-connected layer"))
    for s in graph.skips:
        if s.merge != "add" or s.dest - s.source != 3:
            v.append(Violation("skip", f"skip {s.source}->{s.dest} must span exactly two layers", s.dest))
            continue
        spanned = graph.layers[s.source:s.dest - 1]
        if not all(l.is_padded_3x3() for l in spanned):
            v.append(Violation("skip", f"skip {s.source}->{s.dest} must span two padded 3x3 convolutions", s.dest))
    return v


def _enas_rules(graph):
    v = []
    body = [l for l in graph.layers if l.kind in BODY_KINDS]
    if len(body) != ENAS_NODES:
        v.append(Violation("depth", f"ENAS graphs have {ENAS_NODES} nodes, found {len(body)}"))
    for node, l in enumerate(graph.layers[:len(body)], start=1):
        if l.kind in BODY_KINDS and (l.kind in ("conv", "sepconv") and l.kernel not in (3, 5)):
            v.append(Violation("kernel", f"ENAS op kernel {l.kernel} not in (3, 5)", node))
    return v
