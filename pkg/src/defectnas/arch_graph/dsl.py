"""Plain-text architecture files, one layer per line.

Grammar (tokens are whitespace separated, ``#`` starts a comment)::

    graph [name=<text>] [space=metaqnn|enas] [input=3] [patch=224] [classes=6]
    conv <k>x<k>-<features> [s=<stride>] [p=<padding>] [flags]
    sepconv <k>x<k>-<features> [s=..] [p=..] [flags]
    maxpool|avgpool <k>x<k> [s=..] [p=..] [f=<features>] [flags]
    spp scales=<3|4|5> [preact]
    gap [preact]
    flatten
    fc <features> [flags]
    classifier <classes> [flags]
    skip <source>-><dest> [add|concat] [proj] [gap] [nobias]

``flags`` are any of ``bn``, ``relu``, ``preact`` and ``nobias``.  Node ids in
``skip`` lines follow the graph convention: 0 is the input image and ``i`` is
the output of the i-th layer line.  The ``graph`` header is optional.
"""
from __future__ import annotations

import re

from .graph import ArchGraph, LayerSpec, SkipEdge

_KERNEL_FEAT = re.compile(r"^(\d+)x(\d+)-(\d+)$")
_KERNEL = re.compile(r"^(\d+)x(\d+)$")
_SKIP = re.compile(r"^(\d+)->(\d+)$")
_FLAGS = ("bn", "relu", "preact")


class DSLError(ValueError):
    def __init__(self, message, line, column, token=None):
        self.line, self.column, self.token = line, column, token
        super().__init__(f"line {line}, column {column}: {message}")


def _tokens(text):
    for m in re.finditer(r"\S+", text):
        yield m.group(0), m.start() + 1


def _kv(tok, col, lineno, key, conv=int):
    name, _, val = tok.partition("=")
    if name != key or not val:
        return None
    try:
        return conv(val)
    except ValueError:
        raise DSLError(f"bad value in token {tok!r}", lineno, col, tok) from None


def _parse_layer(kind, toks, lineno):
    spec = {"kind": kind}
    if kind in ("conv", "sepconv"):
        if not toks:
            raise DSLError(f"{kind} needs '<k>x<k>-<features>'", lineno, 1)
        tok, col = toks.pop(0)
        m = _KERNEL_FEAT.match(tok)
        if not m or m.group(1) != m.group(2):
            raise DSLError(f"expected '<k>x<k>-<features>', got token {tok!r}", lineno, col, tok)
        spec["kernel"], spec["features"] = int(m.group(1)), int(m.group(3))
    elif kind in ("maxpool", "avgpool"):
        if not toks:
            raise DSLError(f"{kind} needs '<k>x<k>'", lineno, 1)
        tok, col = toks.pop(0)
        m = _KERNEL.match(tok)
        if not m or m.group(1) != m.group(2):
            raise DSLError(f"expected '<k>x<k>', got token {tok!r}", lineno, col, tok)
        spec["kernel"] = int(m.group(1))
        spec["bias"] = False
    elif kind in ("fc", "classifier"):
        if not toks:
            raise DSLError(f"{kind} needs a feature count", lineno, 1)
        tok, col = toks.pop(0)
        if not tok.isdigit():
            raise DSLError(f"expected a feature count, got token {tok!r}", lineno, col, tok)
        spec["kind"] = "dense" if kind == "fc" else "classifier"
        spec["features"] = int(tok)
    elif kind in ("spp", "gap", "flatten"):
        spec["bias"] = False
    for tok, col in toks:
        if tok in _FLAGS:
            spec[tok] = True
            continue
        if tok in ("bias", "nobias"):
            spec["bias"] = tok == "bias"
            continue
        for key, field in (("s", "stride"), ("p", "padding"), ("f", "features"), ("scales", "spp_scales")):
            val = _kv(tok, col, lineno, key)
            if val is not None:
                spec[field] = val
                break
        else:
            raise DSLError(f"unexpected token {tok!r}", lineno, col, tok)
    if kind == "spp" and "spp_scales" not in spec:
        raise DSLError("spp needs scales=<n>", lineno, 1)
    return LayerSpec(**spec)


def decode_text(text: str) -> ArchGraph:
    header = {}
    layers, skips = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = list(_tokens(line))
        if not toks:
            continue
        (head, col), rest = toks[0], toks[1:]
        if head == "graph":
            for tok, c in rest:
                key, eq, val = tok.partition("=")
                if not eq or key not in ("name", "space", "input", "patch", "classes"):
                    raise DSLError(f"unexpected token {tok!r}", lineno, c, tok)
                header[key] = val
        elif head == "skip":
            if not rest:
                raise DSLError("skip needs '<source>-><dest>'", lineno, col)
            tok, c = rest[0]
            m = _SKIP.match(tok)
            if not m:
                raise DSLError(f"expected '<source>-><dest>', got token {tok!r}", lineno, c, tok)
            edge = {"source": int(m.group(1)), "dest": int(m.group(2))}
            for tok, c in rest[1:]:
                if tok in ("add", "concat"):
                    edge["merge"] = tok
                elif tok == "proj":
                    edge["projection"] = True
                elif tok == "gap":
                    edge["pool"] = True
                elif tok == "nobias":
                    edge["proj_bias"] = False
                else:
                    raise DSLError(f"unexpected token {tok!r}", lineno, c, tok)
            skips.append(SkipEdge(**edge))
        elif head in ("conv", "sepconv", "maxpool", "avgpool", "spp", "gap", "flatten", "fc", "classifier"):
            layers.append(_parse_layer(head, list(rest), lineno))
        else:
            raise DSLError(f"unknown token {head!r}", lineno, col, head)
    try:
        return ArchGraph(
            layers=tuple(layers),
            skips=tuple(skips),
            input_channels=int(header.get("input", 3)),
            patch_size=int(header.get("patch", 224)),
            num_classes=int(header.get("classes", 6)),
            space=header.get("space") or None,
            name=header.get("name", ""),
        )
    except ValueError as exc:
        raise DSLError(f"bad graph header: {exc}", 1, 1) from None


def _flags(layer, default_bias=True):
    out = []
    if layer.bias != default_bias:
        out.append("nobias" if not layer.bias else "bias")
    for f in ("bn", "relu", "preact"):
        if getattr(layer, f):
            out.append(f)
    return out


def encode_layer(l: LayerSpec) -> str:
    if l.kind in ("conv", "sepconv"):
        parts = [l.kind, f"{l.kernel}x{l.kernel}-{l.features}"]
    elif l.kind in ("maxpool", "avgpool"):
        parts = [l.kind, f"{l.kernel}x{l.kernel}"]
    elif l.kind == "dense":
        parts = ["fc", str(l.features)]
    elif l.kind == "classifier":
        parts = ["classifier", str(l.features)]
    else:
        parts = [l.kind]
    if l.kind in ("conv", "sepconv", "maxpool", "avgpool"):
        if l.stride != 1:
            parts.append(f"s={l.stride}")
        if l.padding:
            parts.append(f"p={l.padding}")
    if l.kind in ("maxpool", "avgpool") and l.features:
        parts.append(f"f={l.features}")
    if l.kind == "spp":
        parts.append(f"scales={l.spp_scales}")
    if l.kind not in ("conv", "sepconv", "maxpool", "avgpool", "dense", "classifier"):
        if l.features:
            parts.append(f"f={l.features}")
    default_bias = l.kind in ("conv", "sepconv", "dense", "classifier")
    parts.extend(_flags(l, default_bias))
    return " ".join(parts)


def encode_text(graph: ArchGraph) -> str:
    head = ["graph"]
    if graph.name:
        head.append(f"name={graph.name}")
    if graph.space:
        head.append(f"space={graph.space}")
    head += [f"input={graph.input_channels}", f"patch={graph.patch_size}", f"classes={graph.num_classes}"]
    lines = [" ".join(head)]
    lines += [encode_layer(l) for l in graph.layers]
    for s in graph.skips:
        parts = ["skip", f"{s.source}->{s.dest}", s.merge]
        if s.projection:
            parts.append("proj")
        if s.pool:
            parts.append("gap")
        if not s.proj_bias:
            parts.append("nobias")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def one_line(graph: ArchGraph) -> str:
    """Single-line form for line-delimited logs (layers joined by ' | ')."""
    return " | ".join(encode_text(graph).strip().splitlines())


def from_one_line(text: str) -> ArchGraph:
    return decode_text("\n".join(part.strip() for part in text.split("|")))
