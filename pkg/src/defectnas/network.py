"""Executes an :class:`ArchGraph` with the tensor_core kernels.

Each layer expands into a fixed list of primitive steps (optional
pre-activation, the main op, optional batchnorm and ReLU) that run forward
in order and backward in reverse.  Parameters live in one
:class:`LayerParams` per layer and one per projected skip, so callers can
hand in shared containers (the ENAS weight bank does exactly that).
"""
from __future__ import annotations

import numpy as np

from .arch_graph import ArchGraph, input_shapes, projection_stride
from .tensor_core import LayerParams, init_kaiming
from .tensor_core import layers as L


def _steps(layer, in_shape):
    """Primitive step list for one layer, given its merged input shape."""
    steps = []
    if layer.preact:
        steps += [("bn", "pre_"), ("relu",)]
    k = layer.kind
    if k == "conv":
        steps.append(("conv", layer.stride, layer.padding))
    elif k == "sepconv":
        steps += [("depthwise", layer.stride, layer.padding), ("conv", 1, 0)]
    elif k in ("maxpool", "avgpool"):
        if layer.features and layer.features != in_shape[0]:
            steps.append(("conv", 1, 0))
        steps.append(("pool", k[:3], layer.kernel, layer.stride, layer.padding))
    elif k == "spp":
        steps.append(("spp", layer.spp_scales))
    elif k == "gap":
        steps.append(("gap",))
    elif k == "flatten":
        steps.append(("flatten",))
    elif k == "dense":
        steps.append(("dense",))
    elif k == "classifier":
        steps += [("dropout",), ("dense",)]
    else:
        raise ValueError(f"unknown layer kind {k!r}")
    if layer.bn:
        steps.append(("bn", ""))
    if layer.relu:
        steps.append(("relu",))
    return steps


def init_layer_params(layer, in_shape, rng, dtype=np.float32) -> LayerParams:
    """Kaiming-normal weights, zero biases, unit batchnorm scale."""
    lp = LayerParams()
    c = in_shape[0]

    def bn(prefix, ch):
        lp.arrays[prefix + "gamma"] = np.ones(ch, dtype)
        lp.arrays[prefix + "beta"] = np.zeros(ch, dtype)
        lp.buffers[prefix + "running_mean"] = np.zeros(ch, dtype)
        lp.buffers[prefix + "running_var"] = np.ones(ch, dtype)

    for step in _steps(layer, in_shape):
        op = step[0]
        if op == "bn":
            bn(step[1], c)
        elif op == "depthwise":
            k = layer.kernel
            lp.arrays["depthwise"] = init_kaiming((c, k, k), k * k, rng, dtype)
        elif op == "conv":
            k = layer.kernel if layer.kind == "conv" else 1
            f = layer.features
            lp.arrays["weight"] = init_kaiming((f, c, k, k), c * k * k, rng, dtype)
            if layer.bias:
                lp.arrays["bias"] = np.zeros(f, dtype)
            c = f
        elif op == "dense":
            f = layer.features
            lp.arrays["weight"] = init_kaiming((f, c), c, rng, dtype)
            if layer.bias:
                lp.arrays["bias"] = np.zeros(f, dtype)
            c = f
        elif op == "spp":
            c = L.spp_features(c, step[1])
        elif op == "flatten":
            c = int(np.prod(in_shape))
    return lp


def init_skip_params(src_channels, dst_channels, bias, rng, dtype=np.float32) -> LayerParams:
    lp = LayerParams()
    lp.arrays["weight"] = init_kaiming((dst_channels, src_channels, 1, 1), src_channels, rng, dtype)
    if bias:
        lp.arrays["bias"] = np.zeros(dst_channels, dtype)
    return lp


class Network:
    """Forward/backward executor for one architecture graph."""

    def __init__(self, graph: ArchGraph, rng=None, params=None, skip_params=None,
                 input_size=None, dtype=np.float32, bn_eps=1e-4, bn_momentum=0.1,
                 dropout=0.0):
        self.graph = graph
        self.dtype = dtype
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum
        self.dropout = dropout
        self.rng = rng if rng is not None else np.random.default_rng(0)
        ins, _ = input_shapes(graph, input_size)
        self.input_shapes = ins
        self.steps = [_steps(layer, s) for layer, s in zip(graph.layers, ins)]
        if params is None:
            params = [init_layer_params(l, s, self.rng, dtype) for l, s in zip(graph.layers, ins)]
        self.params = list(params)
        self.skip_strides = {}
        if skip_params is None:
            skip_params = {}
            for idx, s in enumerate(graph.skips):
                if s.merge == "add" and s.projection:
                    src = ins[s.source]
                    skip_params[idx] = init_skip_params(src[0], ins[s.dest - 1][0], s.proj_bias, self.rng, dtype)
        self.skip_params = dict(skip_params)
        for idx, s in enumerate(graph.skips):
            if s.merge == "add" and s.projection:
                src, dst = ins[s.source], ins[s.dest - 1]
                self.skip_strides[idx] = projection_stride(src[1], dst[1])
        self._tape = None

    # -- parameter plumbing -------------------------------------------------
    def parameters(self):
        return list(self.params) + [self.skip_params[k] for k in sorted(self.skip_params)]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grads()

    def state_dict(self):
        out = {}
        for i, p in enumerate(self.params):
            out.update(p.state_dict(f"layer{i}."))
        for k, p in self.skip_params.items():
            out.update(p.state_dict(f"skip{k}."))
        return out

    def load_state_dict(self, state):
        for i, p in enumerate(self.params):
            p.load_state_dict(state, f"layer{i}.")
        for k, p in self.skip_params.items():
            p.load_state_dict(state, f"skip{k}.")

    # -- steps --------------------------------------------------------------
    def _step_forward(self, step, lp, layer, x, train):
        op = step[0]
        if op == "bn":
            pre = step[1]
            return L.batchnorm_forward(
                x, lp.arrays[pre + "gamma"], lp.arrays[pre + "beta"],
                lp.buffers[pre + "running_mean"], lp.buffers[pre + "running_var"],
                self.bn_eps, train=train, momentum=self.bn_momentum,
            )
        if op == "relu":
            return L.relu_forward(x)
        if op == "conv":
            return L.conv2d_forward(x, lp.arrays["weight"], lp.arrays.get("bias"), step[1], step[2])
        if op == "depthwise":
            return L.depthwise_forward(x, lp.arrays["depthwise"], step[1], step[2])
        if op == "pool":
            return L.pool_forward(x, step[1], step[2], step[3], step[4])
        if op == "spp":
            return L.spp_forward(x, step[1])
        if op == "gap":
            return L.gap_forward(x)
        if op == "flatten":
            return x.reshape(x.shape[0], -1), x.shape
        if op == "dense":
            return L.dense_forward(x, lp.arrays["weight"], lp.arrays.get("bias"))
        if op == "dropout":
            return L.dropout_forward(x, self.dropout, train, self.rng)
        raise ValueError(op)

    def _step_backward(self, step, dy, cache):
        op = step[0]
        if op == "bn":
            dx, g = L.batchnorm_backward(dy, cache)
            return dx, {step[1] + k: v for k, v in g.items()}
        if op == "relu":
            return L.relu_backward(dy, cache), {}
        if op == "conv":
            return L.conv2d_backward(dy, cache)
        if op == "depthwise":
            return L.depthwise_backward(dy, cache)
        if op == "pool":
            return L.pool_backward(dy, cache), {}
        if op == "spp":
            return L.spp_backward(dy, cache), {}
        if op == "gap":
            return L.gap_backward(dy, cache), {}
        if op == "flatten":
            return dy.reshape(cache), {}
        if op == "dense":
            return L.dense_backward(dy, cache)
        if op == "dropout":
            return L.dropout_backward(dy, cache), {}
        raise ValueError(op)

    # -- graph --------------------------------------------------------------
    def _merge_forward(self, node, main, merged):
        skips = [(i, s) for i, s in enumerate(self.graph.skips) if s.dest == node]
        if not skips:
            return main, None
        caches = []
        out = main
        for idx, s in skips:
            src = merged[s.source]
            pcache = None
            if s.pool:
                src, pcache = L.gap_forward(src)
            proj = None
            if s.merge == "add":
                if s.projection:
                    stride = self.skip_strides[idx]
                    sub = src[:, :, ::stride, ::stride]
                    lp = self.skip_params[idx]
                    src_p, proj = L.conv2d_forward(np.ascontiguousarray(sub), lp.arrays["weight"],
                                                   lp.arrays.get("bias"))
                    proj = (proj, stride, src.shape)
                    src = src_p
                out = out + src
                caches.append((idx, s, pcache, proj, None))
            else:
                split = out.shape[1]
                out = np.concatenate([out, src], axis=1)
                caches.append((idx, s, pcache, proj, split))
        return out, caches

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        raw = [x]
        merged = [x]  # merged[i] = value node i forwards
        tape = []
        for node, (layer, steps, lp) in enumerate(zip(self.graph.layers, self.steps, self.params), start=1):
            inp, mcache = self._merge_forward(node, raw[node - 1], merged)
            merged[node - 1] = inp
            h = inp
            caches = []
            for step in steps:
                h, c = self._step_forward(step, lp, layer, h, train)
                caches.append(c)
            raw.append(h)
            merged.append(h)
            tape.append((mcache, caches))
        self._tape = tape
        return raw[-1]

    def backward(self, dlogits):
        """Backpropagate ``dlogits``; fills ``grads`` on every LayerParams and returns dL/dinput."""
        if self._tape is None:
            raise RuntimeError("backward called before forward")
        self.zero_grads()
        n = len(self.graph.layers)
        g_merged = [None] * (n + 1)
        g_raw = [None] * (n + 1)
        g_raw[n] = dlogits

        def add(store, i, g):
            store[i] = g if store[i] is None else store[i] + g

        for node in range(n, 0, -1):
            mcache, caches = self._tape[node - 1]
            steps, lp = self.steps[node - 1], self.params[node - 1]
            dy = g_raw[node]
            if dy is None:
                raise RuntimeError(f"node {node} has no gradient")
            for step, cache in zip(reversed(steps), reversed(caches)):
                dy, grads = self._step_backward(step, dy, cache)
                lp.accumulate(grads)
            add(g_merged, node - 1, dy)
            gm = g_merged[node - 1]
            if mcache is None:
                add(g_raw, node - 1, gm)
                continue
            main_g = gm
            for idx, s, pcache, proj, split in reversed(mcache):
                if split is not None:
                    g_src = main_g[:, split:]
                    main_g = main_g[:, :split]
                else:
                    g_src = gm
                    if proj is not None:
                        pc, stride, src_shape = proj
                        g_sub, pg = L.conv2d_backward(g_src, pc)
                        self.skip_params[idx].accumulate(pg)
                        g_full = np.zeros(src_shape, dtype=g_sub.dtype)
                        g_full[:, :, ::stride, ::stride] = g_sub
                        g_src = g_full
                if pcache is not None:
                    g_src = L.gap_backward(g_src, pcache)
                add(g_merged, s.source, g_src)
            add(g_raw, node - 1, np.ascontiguousarray(main_g))
        return g_raw[0]

    def predict(self, x, batch_size=64):
        """Sigmoid outputs in inference mode, batched."""
        from .tensor_core import sigmoid

        outs = [sigmoid(self.forward(x[i:i + batch_size], train=False)) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)
