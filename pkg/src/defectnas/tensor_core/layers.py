"""Forward/backward kernels for every layer type used by the searched networks.

All kernels are plain functions over numpy arrays in NCHW (or N x F) layout.
Forward functions return ``(output, cache)``; the matching backward takes the
upstream gradient and the cache and returns the input gradient plus a dict of
parameter gradients.  Computation happens in the dtype of the input, so the
same code runs in float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

import numpy as np

ALLOWED_KERNELS = (1, 3, 5, 7, 9, 11)

# Upper bound (in elements) for one im2col buffer; larger batches are chunked.
_COL_BUDGET = 1 << 24


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with a layer."""


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"non-positive output size for input {size}, kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    return out


def _pad(x, padding, value=0.0):
    if padding == 0:
        return x
    return np.pad(
        x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        mode="constant", constant_values=value,
    )


def _check_conv(x, weight, stride):
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}")
    f, c, kh, kw = weight.shape
    if kh != kw or kh not in ALLOWED_KERNELS:
        raise ShapeError(f"kernel must be square with size in {ALLOWED_KERNELS}, got {kh}x{kw}")
    if c != x.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {c}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")


def _taps(kernel, stride, ho, wo):
    """(a, b, row slice, col slice) for every kernel tap over a padded input."""
    for a in range(kernel):
        for b in range(kernel):
            yield a, b, slice(a, a + stride * (ho - 1) + 1, stride), slice(b, b + stride * (wo - 1) + 1, stride)


def _im2col_nhwc(xp, kernel, stride, ho, wo):
    """Patch matrix (M*Ho*Wo, k*k*C) from a padded NHWC input."""
    m, c = xp.shape[0], xp.shape[3]
    cols = np.empty((m, ho, wo, kernel, kernel, c), dtype=xp.dtype)
    for a, b, rs, cs in _taps(kernel, stride, ho, wo):
        cols[:, :, :, a, b, :] = xp[:, rs, cs, :]
    return cols.reshape(m * ho * wo, kernel * kernel * c)


def _col2im_nhwc(dcols, xp_shape, kernel, stride, ho, wo):
    m, c = xp_shape[0], xp_shape[3]
    d = dcols.reshape(m, ho, wo, kernel, kernel, c)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for a, b, rs, cs in _taps(kernel, stride, ho, wo):
        dxp[:, rs, cs, :] += d[:, :, :, a, b, :]
    return dxp


def _im2col_nchw(xp, kernel, stride, ho, wo):
    """Per-sample patch matrices (M, C*k*k, Ho*Wo) from a padded NCHW input."""
    m, c = xp.shape[0], xp.shape[1]
    cols = np.empty((m, c, kernel, kernel, ho, wo), dtype=xp.dtype)
    for a, b, rs, cs in _taps(kernel, stride, ho, wo):
        cols[:, :, a, b] = xp[:, :, rs, cs]
    return cols.reshape(m, c * kernel * kernel, ho * wo)


def _col2im_nchw(dcols, xp_shape, kernel, stride, ho, wo):
    m, c = xp_shape[0], xp_shape[1]
    d = dcols.reshape(m, c, kernel, kernel, ho, wo)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for a, b, rs, cs in _taps(kernel, stride, ho, wo):
        dxp[:, :, rs, cs] += d[:, :, a, b]
    return dxp


def conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    """Dense 2-D convolution via patch-matrix expansion.

    Patches are gathered one kernel tap at a time.  When output rows are
    longer than the channel vector the gather runs channel-first and a
    batched matmul writes NCHW directly; otherwise it runs channel-last so
    each copy moves whole channel vectors.  The patch matrix is kept for the
    backward pass when it fits the buffer budget.
    """
    _check_conv(x, weight, stride)
    n, c, h, w = x.shape
    f, _, k, _ = weight.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    step = max(1, _COL_BUDGET // max(1, ho * wo * c * k * k))
    kept = None
    if wo >= c:
        xp = _pad(x, padding)
        wmat = weight.reshape(f, c * k * k)
        out = np.empty((n, f, ho, wo), dtype=x.dtype)
        for s in range(0, n, step):
            cols = _im2col_nchw(xp[s:s + step], k, stride, ho, wo)
            out[s:s + step] = np.matmul(wmat, cols).reshape(-1, f, ho, wo)
            if step >= n:
                kept = cols
        layout = "nchw"
    else:
        xp = x.transpose(0, 2, 3, 1)
        if padding:
            xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        wmat = weight.transpose(0, 2, 3, 1).reshape(f, k * k * c)
        out = np.empty((n, f, ho, wo), dtype=x.dtype)
        for s in range(0, n, step):
            cols = _im2col_nhwc(xp[s:s + step], k, stride, ho, wo)
            out[s:s + step] = (cols @ wmat.T).reshape(-1, ho, wo, f).transpose(0, 3, 1, 2)
            if step >= n:
                kept = cols
        layout = "nhwc"
    if bias is not None:
        out += bias.reshape(1, f, 1, 1)
    return out, (layout, x.shape, xp, weight, bias is not None, stride, padding, kept)


def conv2d_backward(dout, cache):
    layout, x_shape, xp, weight, has_bias, stride, padding, kept = cache
    n, c, h, w = x_shape
    f, _, k, _ = weight.shape
    ho, wo = dout.shape[2], dout.shape[3]
    step = max(1, _COL_BUDGET // max(1, ho * wo * c * k * k))
    dxp = np.empty(xp.shape, dtype=dout.dtype)
    if layout == "nchw":
        wmat = weight.reshape(f, c * k * k)
        dw = np.zeros_like(wmat)
        for s in range(0, n, step):
            cols = kept if kept is not None else _im2col_nchw(xp[s:s + step], k, stride, ho, wo)
            d = dout[s:s + step].reshape(-1, f, ho * wo)
            dw += np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0)
            dxp[s:s + step] = _col2im_nchw(np.matmul(wmat.T, d), xp[s:s + step].shape, k, stride, ho, wo)
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        dweight = dw.reshape(weight.shape)
    else:
        wmat = weight.transpose(0, 2, 3, 1).reshape(f, k * k * c)
        dw = np.zeros_like(wmat)
        for s in range(0, n, step):
            cols = kept if kept is not None else _im2col_nhwc(xp[s:s + step], k, stride, ho, wo)
            dmat = dout[s:s + step].transpose(0, 2, 3, 1).reshape(-1, f)
            dw += dmat.T @ cols
            dxp[s:s + step] = _col2im_nhwc(dmat @ wmat, xp[s:s + step].shape, k, stride, ho, wo)
        dx = dxp[:, padding:padding + h, padding:padding + w, :].transpose(0, 3, 1, 2)
        dweight = dw.reshape(f, k, k, c).transpose(0, 3, 1, 2)
    grads = {"weight": dweight.astype(weight.dtype, copy=False)}
    if has_bias:
        grads["bias"] = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), grads


def conv2d_reference(x, weight, bias=None, stride=1, padding=0):
    """Direct nested-loop convolution; slow, used only as a test oracle."""
    n, c, h, w = x.shape
    f, _, k, _ = weight.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = _pad(x, padding)
    out = np.zeros((n, f, ho, wo), dtype=np.float64)
    for i in range(n):
        for o in range(f):
            for r in range(ho):
                for q in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for a in range(k):
                            for b in range(k):
                                acc += float(xp[i, ch, r * stride + a, q * stride + b]) * float(weight[o, ch, a, b])
                    out[i, o, r, q] = acc + (float(bias[o]) if bias is not None else 0.0)
    return out


def depthwise_forward(x, weight, stride=1, padding=0):
    """Per-channel convolution; ``weight`` has shape (C, k, k)."""
    if x.ndim != 4 or weight.shape[0] != x.shape[1]:
        raise ShapeError(f"depthwise weight {weight.shape} does not match input {x.shape}")
    k = weight.shape[1]
    if k not in ALLOWED_KERNELS:
        raise ShapeError(f"kernel size {k} not allowed")
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    xp = _pad(x, padding)
    out = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=x.dtype)
    for a, b, rs, cs in _taps(k, stride, ho, wo):
        out += xp[:, :, rs, cs] * weight[:, a, b].reshape(1, -1, 1, 1)
    return out, (x.shape, xp, weight, stride, padding)


def depthwise_backward(dout, cache):
    x_shape, xp, weight, stride, padding = cache
    k = weight.shape[1]
    ho, wo = dout.shape[2], dout.shape[3]
    dw = np.empty_like(weight)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    for a, b, rs, cs in _taps(k, stride, ho, wo):
        dw[:, a, b] = np.einsum("ncij,ncij->c", dout, xp[:, :, rs, cs])
        dxp[:, :, rs, cs] += dout * weight[:, a, b].reshape(1, -1, 1, 1)
    dx = dxp[:, :, padding:padding + x_shape[2], padding:padding + x_shape[3]]
    return np.ascontiguousarray(dx), {"depthwise": dw}


def batchnorm_forward(x, gamma, beta, running_mean, running_var, eps=1e-4,
                      train=True, momentum=0.1):
    """Batch normalization over all axes but the channel axis (axis 1).

    In train mode the running statistics are updated in place with an
    exponential moving average of weight ``momentum``.
    """
    if eps <= 0:
        raise ValueError("batchnorm eps must be positive")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batchnorm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out.astype(x.dtype, copy=False), (xhat, inv_std, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    axes = (0,) if dout.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if dout.ndim == 2 else (1, -1, 1, 1)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if train:
        m = dout.size // dout.shape[1]
        dx = (inv_std.reshape(shape) / m) * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(shape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
        )
    else:
        dx = dxhat * inv_std.reshape(shape)
    return dx.astype(dout.dtype, copy=False), {"gamma": dgamma, "beta": dbeta}


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def pool_forward(x, kind="max", kernel=3, stride=1, padding=0):
    """Max or average pooling; average pooling counts padded zeros.

    Max pooling keeps the index of the first maximal tap so the backward
    pass routes each gradient to exactly one input.
    """
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pooling kind {kind!r}")
    n, c, h, w = x.shape
    ho = conv_output_size(h, kernel, stride, padding)
    wo = conv_output_size(w, kernel, stride, padding)
    xp = _pad(x, padding, -np.inf if kind == "max" else 0.0)
    if kind == "max":
        out = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
        arg = np.zeros((n, c, ho, wo), dtype=np.int16)
        for a, b, rs, cs in _taps(kernel, stride, ho, wo):
            v = xp[:, :, rs, cs]
            better = v > out
            np.copyto(out, v, where=better)
            arg[better] = a * kernel + b
        return out, (kind, xp.shape, x.shape, arg, kernel, stride, padding)
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for _, _, rs, cs in _taps(kernel, stride, ho, wo):
        out += xp[:, :, rs, cs]
    out *= 1.0 / (kernel * kernel)
    return out, (kind, xp.shape, x.shape, None, kernel, stride, padding)


def pool_backward(dout, cache):
    kind, xp_shape, x_shape, arg, kernel, stride, padding = cache
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    scaled = dout * (1.0 / (kernel * kernel)) if kind == "avg" else None
    for a, b, rs, cs in _taps(kernel, stride, ho, wo):
        if kind == "max":
            dxp[:, :, rs, cs] += np.where(arg == a * kernel + b, dout, 0)
        else:
            dxp[:, :, rs, cs] += scaled
    dx = dxp[:, :, padding:padding + x_shape[2], padding:padding + x_shape[3]]
    return np.ascontiguousarray(dx)


def _adaptive_bins(size, n):
    return [(i * size // n, -((-(i + 1) * size) // n)) for i in range(n)]


def spp_features(channels: int, scales: int) -> int:
    return channels * sum(i * i for i in range(1, scales + 1))


def spp_forward(x, scales):
    """Spatial pyramid max pooling at grids 1x1 .. scales x scales.

    Output is level-major: all 1x1 features, then the 2x2 grid (channel-major,
    bins row-major), and so on.
    """
    if scales not in (3, 4, 5):
        raise ShapeError(f"spp scales must be 3, 4 or 5, got {scales}")
    n, c, h, w = x.shape
    if h < scales or w < scales:
        raise ShapeError(f"input {h}x{w} is smaller than the finest {scales}x{scales} grid")
    pieces, argmaxes = [], []
    for level in range(1, scales + 1):
        out = np.empty((n, c, level, level), dtype=x.dtype)
        args = []
        for i, (r0, r1) in enumerate(_adaptive_bins(h, level)):
            for j, (c0, c1) in enumerate(_adaptive_bins(w, level)):
                block = x[:, :, r0:r1, c0:c1].reshape(n, c, -1)
                a = block.argmax(axis=-1)
                out[:, :, i, j] = np.take_along_axis(block, a[..., None], axis=-1)[..., 0]
                args.append((r0, r1, c0, c1, a))
        pieces.append(out.reshape(n, -1))
        argmaxes.append(args)
    return np.concatenate(pieces, axis=1), (x.shape, scales, argmaxes)


def spp_backward(dout, cache):
    x_shape, scales, argmaxes = cache
    n, c = x_shape[0], x_shape[1]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    offset = 0
    nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    for level, args in zip(range(1, scales + 1), argmaxes):
        d = dout[:, offset:offset + c * level * level].reshape(n, c, level, level)
        offset += c * level * level
        for idx, (r0, r1, c0, c1, a) in enumerate(args):
            i, j = divmod(idx, level)
            bw = c1 - c0
            rows = r0 + a // bw
            cols = c0 + a % bw
            np.add.at(dx, (nn, cc, rows, cols), d[:, :, i, j])
    return dx


def gap_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout, x_shape):
    h, w = x_shape[2], x_shape[3]
    return np.broadcast_to((dout / (h * w))[:, :, None, None], x_shape).copy()


def dense_forward(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` with weight of shape (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense input {x.shape} does not match weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out, (x, weight, bias is not None)


def dense_backward(dout, cache):
    x, weight, has_bias = cache
    grads = {"weight": dout.T @ x}
    if has_bias:
        grads["bias"] = dout.sum(axis=0)
    return dout @ weight, grads


def dropout_forward(x, rate, train, rng):
    """Inverted dropout; identity in inference mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask
