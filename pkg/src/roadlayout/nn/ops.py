"""Structured autodiff ops: convolution, pooling, sampling, recurrence, losses.

Convolutions run as im2col matrix products; the input gradient picks between
a correlation against the flipped kernel (stride 1) and the classic col2im
scatter (strided), whichever touches less memory. The bilinear sampler uses
zero padding outside the grid and routes gradients to the feature map only,
never to the sampling field.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accum, _make, add, matmul, mul, sigmoid, tanh


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n_, c_, ho, wo, _, _ = windows.shape
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int):
    """Scatter per-window gradients back onto the (padded) input grid."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    dxp = np.zeros((n, c, hp, wp))
    blocks = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += blocks[
                :, :, :, :, i, j
            ]
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])
    return dxp


def _conv2d_input_grad(g: np.ndarray, weight: np.ndarray, x_shape, stride: int, padding: int):
    """Input gradient of conv2d.

    For stride 1 this runs as one stride-1 correlation: the output gradient
    is padded so a valid correlation lands back on the input grid and matched
    against the kernel flipped in both spatial directions with its in and out
    channel axes swapped, turning nine overlapping scatter passes into a
    single matrix product. For larger strides the output gradient is sparse
    on the input grid, so gathering full correlation windows would touch
    stride*stride times more memory than the classic col2im scatter; there
    the scatter wins and is kept.
    """
    n, c, h, w = x_shape
    f, _, kh, kw = weight.shape
    ho, wo = g.shape[2], g.shape[3]
    if stride > 1:
        g2 = g.reshape(n, f, ho * wo).transpose(0, 2, 1)
        dcols = g2 @ weight.reshape(f, -1)
        return _col2im(dcols, x_shape, kh, kw, stride, padding)
    buf = np.zeros((n, f, h + kh - 1, w + kw - 1))
    top, left = kh - 1 - padding, kw - 1 - padding
    buf[:, :, top : top + ho, left : left + wo] = g
    cols, _, _ = _im2col(buf, kh, kw, 1, 0)
    wflip = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, f * kh * kw)
    dx = np.ascontiguousarray((cols @ wflip.T).transpose(0, 2, 1))
    dx.shape = (n, c, h, w)
    return dx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    """x (N,C,H,W) * weight (F,C,kh,kw) + bias (F,) -> (N,F,Ho,Wo)."""
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            "conv2d shape mismatch: input %s vs weight %s"
            % (x.data.shape, weight.data.shape)
        )
    n = x.data.shape[0]
    f, _, kh, kw = weight.data.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(f, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, f, ho, wo)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(n, f, ho * wo).transpose(0, 2, 1)
        if weight.requires_grad:
            dw = np.tensordot(g2, cols, axes=([0, 1], [0, 1]))
            dw.shape = weight.data.shape  # in-place reshape keeps ownership
            _accum(weight, dw, owned=True)
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=(0, 1)), owned=True)
        if x.requires_grad:
            _accum(x, _conv2d_input_grad(g, weight.data, x.data.shape, stride, padding),
                   owned=True)

    return _make(out, parents, backward)


def maxpool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k*k max pooling; spatial dims must divide k."""
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ValueError("maxpool2d: %dx%d not divisible by %d" % (h, w, k))
    ho, wo = h // k, w // k
    tiles = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    arg = tiles.argmax(axis=4)
    out = np.take_along_axis(tiles, arg[..., None], axis=4)[..., 0]

    def backward(g):
        dt = np.zeros_like(tiles)
        np.put_along_axis(dt, arg[..., None], g[..., None], axis=4)
        dx = dt.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, dx)

    return _make(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - inner), owned=True)

    return _make(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """x (N,D) @ weight (D,O) + bias (O,)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def bilinear_sample_nchw(feat: Tensor, field: np.ndarray) -> Tensor:
    """Warp (N,C,H,W) features by a (N,H,W,2) row/col offset field.

    Output cell (i, j) reads the input at (i + field[...,0], j + field[...,1])
    with bilinear weights; samples outside the grid contribute zero. The field
    is plain data: gradients flow to the features only.
    """
    field = np.asarray(field, dtype=np.float64)
    n, c, h, w = feat.data.shape
    if field.shape != (n, h, w, 2):
        raise ValueError(
            "field shape %s does not match features %s"
            % (field.shape, feat.data.shape)
        )
    yy = np.arange(h)[None, :, None] + field[:, :, :, 0]
    xx = np.arange(w)[None, None, :] + field[:, :, :, 1]
    y0 = np.floor(yy).astype(np.int64)
    x0 = np.floor(xx).astype(np.int64)
    wy = yy - y0
    wx = xx - x0
    base = np.arange(n)[:, None, None] * (h * w)

    # Corners with an identically zero weight (integer offsets in one or both
    # directions) are dropped entirely; that keeps pure shifts exact.
    corners = []
    for dy, cy in ((0, 1.0 - wy), (1, wy)):
        for dx, cx in ((0, 1.0 - wx), (1, wx)):
            yi = y0 + dy
            xi = x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            weight = cy * cx * valid
            if not weight.any():
                continue
            idx = base + np.clip(yi, 0, h - 1) * w + np.clip(xi, 0, w - 1)
            corners.append((idx, weight))

    src = np.ascontiguousarray(feat.data.transpose(0, 2, 3, 1)).reshape(n * h * w, c)
    acc = None
    for idx, weight in corners:
        part = src[idx] * weight[..., None]
        acc = part if acc is None else np.add(acc, part, out=acc)
    if acc is None:
        acc = np.zeros((n, h, w, c))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)  # (N, H, W, C)
        flat = np.zeros(n * h * w * c)
        ch = np.arange(c)
        for idx, weight in corners:
            contrib = gt * weight[..., None]
            flat += np.bincount(
                (idx[..., None] * c + ch).ravel(),
                weights=contrib.ravel(),
                minlength=n * h * w * c,
            )
        flat.shape = (n, h, w, c)
        _accum(feat, np.ascontiguousarray(flat.transpose(0, 3, 1, 2)), owned=True)

    return _make(out, (feat,), backward)


def bilinear_sample(feat: Tensor, field: np.ndarray) -> Tensor:
    """Single-map form: (H,W,C) features with an (H,W,2) field."""
    from .tensor import reshape, transpose

    h, w, c = feat.data.shape
    nchw = transpose(reshape(feat, (1, h, w, c)), (0, 3, 1, 2))
    warped = bilinear_sample_nchw(nchw, np.asarray(field)[None])
    return reshape(transpose(warped, (0, 2, 3, 1)), (h, w, c))


class LstmParams:
    """Per-gate weights of one LSTM cell; gate order i, f, g, o."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, tensors: dict):
        self.tensors = dict(tensors)
        for gate in self.GATES:
            for part in ("wx", "wh", "b"):
                if part + gate not in self.tensors:
                    raise ValueError("missing LSTM tensor %r" % (part + gate,))

    def __getitem__(self, key):
        return self.tensors[key]


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams):
    """One LSTM step on (B, D) input and (B, H) state; returns (h, c)."""
    gates = {}
    for gate in LstmParams.GATES:
        pre = add(
            add(matmul(x, params["wx" + gate]), matmul(h_prev, params["wh" + gate])),
            params["b" + gate],
        )
        gates[gate] = tanh(pre) if gate == "g" else sigmoid(pre)
    c = add(mul(gates["f"], c_prev), mul(gates["i"], gates["g"]))
    h = mul(gates["o"], tanh(c))
    return h, c


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy, stable for large logits."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ValueError(
            "bce target shape %s does not match logits %s" % (t.shape, logits.data.shape)
        )
    z = logits.data
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        sig[~pos] = ez / (1.0 + ez)
        _accum(logits, float(g) * (sig - t) / n, owned=True)

    return _make(per.mean(), (logits,), backward)


def ce_with_logits(logits: Tensor, index: np.ndarray) -> Tensor:
    """Mean cross-entropy over the last axis against integer class indices."""
    z = logits.data
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != z.shape[:-1]:
        raise ValueError(
            "ce index shape %s does not match logits %s" % (idx.shape, z.shape)
        )
    k = z.shape[-1]
    flat = z.reshape(-1, k)
    fidx = idx.reshape(-1)
    m = flat.shape[0]
    zmax = flat.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(flat - zmax).sum(axis=1))
    loss = (lse - flat[np.arange(m), fidx]).mean()

    def backward(g):
        soft = np.exp(flat - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(m), fidx] -= 1.0
        dz = (float(g) / m) * soft
        dz.shape = z.shape
        _accum(logits, dz, owned=True)

    return _make(loss, (logits,), backward)


def l1_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean absolute difference; subgradient 0 at exact ties."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError(
            "l1 target shape %s does not match predictions %s"
            % (t.shape, pred.data.shape)
        )
    diff = pred.data - t
    n = diff.size

    def backward(g):
        _accum(pred, float(g) * np.sign(diff) / n, owned=True)

    return _make(np.abs(diff).mean(), (pred,), backward)
