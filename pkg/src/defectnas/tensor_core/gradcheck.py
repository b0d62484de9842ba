"""Central finite-difference checks for the hand-written backward passes.

Checks run in float64: float32 central differences cannot resolve the 1e-4
relative tolerance the dense and loss kernels are held to.
"""
from __future__ import annotations

import numpy as np

from . import layers as L
from .loss import sigmoid_bce


def numerical_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_arrays(f, backward, arrays, h=1e-5):
    """Max relative error between ``backward()`` and finite differences of ``f``.

    ``arrays`` maps names to the float64 arrays ``f`` reads; ``backward``
    returns a dict with an analytic gradient for every name.
    """
    analytic = backward()
    worst = 0.0
    for name, arr in arrays.items():
        numeric = numerical_gradient(f, arr, h)
        worst = max(worst, relative_error(analytic[name], numeric))
    return worst


def _projection(rng, shape):
    return rng.standard_normal(shape)


def grad_check(layer: str, rng, **sizes) -> float:
    """Build a random small instance of ``layer`` and return the max relative error.

    Supported layers: conv, sepconv, batchnorm, batchnorm_infer, maxpool, avgpool,
    spp, gap, dense, relu, bce.  ``sizes`` overrides the default dimensions
    (n, c, h, f, k, stride, padding, scales, fin, fout).
    """
    n = sizes.get("n", 2)
    c = sizes.get("c", 2)
    h = sizes.get("h", 5)
    f = sizes.get("f", 3)
    k = sizes.get("k", 3)
    stride = sizes.get("stride", 1)
    padding = sizes.get("padding", 1)
    x = rng.standard_normal((n, c, h, h))

    if layer == "conv":
        w = rng.standard_normal((f, c, k, k))
        b = rng.standard_normal(f)
        out, _ = L.conv2d_forward(x, w, b, stride, padding)
        r = _projection(rng, out.shape)

        def fwd():
            return float((L.conv2d_forward(x, w, b, stride, padding)[0] * r).sum())

        def bwd():
            _, cache = L.conv2d_forward(x, w, b, stride, padding)
            dx, g = L.conv2d_backward(r, cache)
            return {"x": dx, "w": g["weight"], "b": g["bias"]}

        return check_arrays(fwd, bwd, {"x": x, "w": w, "b": b})

    if layer == "sepconv":
        dw = rng.standard_normal((c, k, k))
        pw = rng.standard_normal((f, c, 1, 1))
        b = rng.standard_normal(f)

        def run(x, dw, pw, b):
            y, c1 = L.depthwise_forward(x, dw, stride, padding)
            z, c2 = L.conv2d_forward(y, pw, b)
            return z, c1, c2

        r = _projection(rng, run(x, dw, pw, b)[0].shape)

        def fwd():
            return float((run(x, dw, pw, b)[0] * r).sum())

        def bwd():
            _, c1, c2 = run(x, dw, pw, b)
            dy, g2 = L.conv2d_backward(r, c2)
            dx, g1 = L.depthwise_backward(dy, c1)
            return {"x": dx, "dw": g1["depthwise"], "pw": g2["weight"], "b": g2["bias"]}

        return check_arrays(fwd, bwd, {"x": x, "dw": dw, "pw": pw, "b": b})

    if layer in ("batchnorm", "batchnorm_infer", "batchnorm_dense"):
        if layer == "batchnorm_dense":
            x = rng.standard_normal((max(n, 4), c))
        train = layer != "batchnorm_infer"
        gamma = rng.standard_normal(c)
        beta = rng.standard_normal(c)
        rm = rng.standard_normal(c)
        rv = rng.random(c) + 0.5

        def run():
            return L.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), 1e-4, train=train)

        r = _projection(rng, x.shape)

        def fwd():
            return float((run()[0] * r).sum())

        def bwd():
            _, cache = run()
            dx, g = L.batchnorm_backward(r, cache)
            return {"x": dx, "gamma": g["gamma"], "beta": g["beta"]}

        return check_arrays(fwd, bwd, {"x": x, "gamma": gamma, "beta": beta})

    if layer in ("maxpool", "avgpool"):
        kind = layer[:3]
        out, _ = L.pool_forward(x, kind, k, stride, padding)
        r = _projection(rng, out.shape)

        def fwd():
            return float((L.pool_forward(x, kind, k, stride, padding)[0] * r).sum())

        def bwd():
            _, cache = L.pool_forward(x, kind, k, stride, padding)
            return {"x": L.pool_backward(r, cache)}

        return check_arrays(fwd, bwd, {"x": x})

    if layer == "spp":
        scales = sizes.get("scales", 3)
        x = rng.standard_normal((n, c, max(h, scales + 2), max(h, scales + 2)))
        out, _ = L.spp_forward(x, scales)
        r = _projection(rng, out.shape)

        def fwd():
            return float((L.spp_forward(x, scales)[0] * r).sum())

        def bwd():
            _, cache = L.spp_forward(x, scales)
            return {"x": L.spp_backward(r, cache)}

        return check_arrays(fwd, bwd, {"x": x})

    if layer == "gap":
        r = _projection(rng, (n, c))

        def fwd():
            return float((L.gap_forward(x)[0] * r).sum())

        def bwd():
            return {"x": L.gap_backward(r, x.shape)}

        return check_arrays(fwd, bwd, {"x": x})

    if layer == "relu":
        r = _projection(rng, x.shape)

        def fwd():
            return float((L.relu_forward(x)[0] * r).sum())

        def bwd():
            return {"x": L.relu_backward(r, L.relu_forward(x)[1])}

        return check_arrays(fwd, bwd, {"x": x})

    if layer == "dense":
        fin = sizes.get("fin", 8)
        fout = sizes.get("fout", 4)
        xd = rng.standard_normal((n, fin))
        w = rng.standard_normal((fout, fin))
        b = rng.standard_normal(fout)
        r = _projection(rng, (n, fout))

        def fwd():
            return float((L.dense_forward(xd, w, b)[0] * r).sum())

        def bwd():
            _, cache = L.dense_forward(xd, w, b)
            dx, g = L.dense_backward(r, cache)
            return {"x": dx, "w": g["weight"], "b": g["bias"]}

        return check_arrays(fwd, bwd, {"x": xd, "w": w, "b": b})

    if layer == "bce":
        classes = sizes.get("classes", 6)
        z = rng.standard_normal((n, classes)) * 3
        t = (rng.random((n, classes)) < 0.5).astype(np.float64)

        def fwd():
            return sigmoid_bce(z, t)[0]

        def bwd():
            return {"z": sigmoid_bce(z, t)[1]}

        return check_arrays(fwd, bwd, {"z": z}, h=1e-6)

    raise ValueError(f"no gradient check defined for layer {layer!r}")
