"""Differentiable operations on :class:`~echolatent.tensor.Tensor`.

Array layout for the volumetric ops is ``(batch, channels, t, y, x)``.
Convolution weights are ``(out_channels, in_channels, kt, ky, kx)``;
transposed-convolution weights are ``(in_channels, out_channels, kt, ky, kx)``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ValueError(f"expected an int or 3 ints, got {v}")
    return v


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    g = grad.sum(axis=tuple(range(extra))) if extra > 0 else grad
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return make_result(
        out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return make_result(
        out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return make_result(out, (a, b), bw, "div")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive")
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN visible instead of zeroing it
    return make_result(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), bw, "softmax")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an explicit generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- reductions / shape


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), bw, "reduce_sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(x.shape, ref)) if i != axis % len(ref)
        ):
            raise ValueError(f"concat: shapes {ref} and {x.shape} differ off axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return make_result(out, xs, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (n, in) and ``w`` of shape (in, out)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"dense: bias {b.shape} does not match {w.shape[1]} outputs")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        grads = [g @ w.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(out, parents, bw, "dense")


# ---------------------------------------------------------------- losses


def bce_with_logits(z: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(z)`` against targets in [0, 1]."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != z.shape:
        raise ValueError(f"bce_with_logits: logits {z.shape} vs target {t.shape}")
    zd = z.data
    loss = np.maximum(zd, 0) - zd * t + np.log1p(np.exp(-np.abs(zd)))
    n = zd.size
    return make_result(
        np.asarray(loss.mean()), (z,), lambda g: (g * (_sigmoid(zd) - t) / n,), "bce_with_logits"
    )


def softmax_cross_entropy(logits: Tensor, onehot, axis: int = 1) -> Tensor:
    """Mean over samples of -sum_k y_k log softmax(logits)_k."""
    y = np.asarray(onehot, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"softmax_cross_entropy: logits {logits.shape} vs targets {y.shape}")
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    n = logits.data.size // logits.shape[axis]
    loss = -(y * logp).sum() / n

    def bw(g):
        p = np.exp(logp)
        return (g * (p * y.sum(axis=axis, keepdims=True) - y) / n,)

    return make_result(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")


# ---------------------------------------------------------------- convolution kernels (numpy level)


def _conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad(x: np.ndarray, p: tuple[int, int, int]) -> np.ndarray:
    if p == (0, 0, 0):
        return x
    return np.pad(x, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2])))


def _correlate(xp: np.ndarray, w: np.ndarray, stride, out_shape) -> np.ndarray:
    """Valid cross-correlation of a padded input; im2col one output frame at a time."""
    B, Ci = xp.shape[:2]
    Co, _, kt, ky, kx = w.shape
    To, Ho, Wo = out_shape
    st, sy, sx = stride
    win = sliding_window_view(xp, (kt, ky, kx), axis=(2, 3, 4))
    win = win[:, :, :: st, :: sy, :: sx][:, :, :To, :Ho, :Wo]
    wm = w.reshape(Co, -1)
    out = np.empty((B, Co, To, Ho, Wo))
    for b in range(B):
        for t in range(To):
            cols = win[b, :, t].transpose(0, 3, 4, 5, 1, 2).reshape(Ci * kt * ky * kx, Ho * Wo)
            out[b, :, t] = (wm @ cols).reshape(Co, Ho, Wo)
    return out


def _weight_grad(xp: np.ndarray, gout: np.ndarray, kshape, stride) -> np.ndarray:
    B, Ci = xp.shape[:2]
    Co, To, Ho, Wo = gout.shape[1:]
    kt, ky, kx = kshape
    st, sy, sx = stride
    win = sliding_window_view(xp, (kt, ky, kx), axis=(2, 3, 4))
    win = win[:, :, :: st, :: sy, :: sx][:, :, :To, :Ho, :Wo]
    gw = np.zeros((Co, Ci * kt * ky * kx))
    for b in range(B):
        for t in range(To):
            cols = win[b, :, t].transpose(0, 3, 4, 5, 1, 2).reshape(Ci * kt * ky * kx, Ho * Wo)
            gw += gout[b, :, t].reshape(Co, Ho * Wo) @ cols.T
    return gw.reshape(Co, Ci, kt, ky, kx)


def _input_grad(gout: np.ndarray, w: np.ndarray, in_shape, stride, padding) -> np.ndarray:
    """Adjoint of the convolution with respect to its input (also the transposed conv)."""
    B, Ci, T, H, W = in_shape
    Co, _, kt, ky, kx = w.shape
    p = padding
    if stride == (1, 1, 1) and all(k - 1 - q >= 0 for k, q in zip((kt, ky, kx), p)):
        # stride-1 adjoint is a full correlation with the flipped, channel-swapped kernel
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        q = (kt - 1 - p[0], ky - 1 - p[1], kx - 1 - p[2])
        return _correlate(_pad(gout, q), wf, (1, 1, 1), (T, H, W))
    To, Ho, Wo = gout.shape[2:]
    st, sy, sx = stride
    gxp = np.zeros((B, Ci, T + 2 * p[0], H + 2 * p[1], W + 2 * p[2]))
    gflat = gout.transpose(1, 0, 2, 3, 4).reshape(Co, -1)
    for a in range(kt):
        for c in range(ky):
            for d in range(kx):
                contrib = (w[:, :, a, c, d].T @ gflat).reshape(Ci, B, To, Ho, Wo)
                gxp[
                    :, :, a : a + st * (To - 1) + 1 : st, c : c + sy * (Ho - 1) + 1 : sy, d : d + sx * (Wo - 1) + 1 : sx
                ] += contrib.transpose(1, 0, 2, 3, 4)
    return gxp[:, :, p[0] : p[0] + T, p[1] : p[1] + H, p[2] : p[2] + W]


def _check_volume(name: str, x: Tensor, w: Tensor, w_in_axis: int) -> None:
    if x.ndim != 5:
        raise ValueError(f"{name}: input must be (batch, channels, t, y, x), got {x.shape}")
    if w.ndim != 5:
        raise ValueError(f"{name}: weight must be 5-D, got {w.shape}")
    if x.shape[1] != w.shape[w_in_axis]:
        raise ValueError(
            f"{name}: input has {x.shape[1]} channels but weight expects {w.shape[w_in_axis]}"
        )


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    _check_volume("conv3d", x, w, 1)
    s, p = _triple(stride), _triple(padding)
    k = w.shape[2:]
    out_shape = tuple(_conv_out_size(n, kk, ss, pp) for n, kk, ss, pp in zip(x.shape[2:], k, s, p))
    if min(out_shape) < 1:
        raise ValueError(f"conv3d: kernel {k} with padding {p} does not fit input {x.shape[2:]}")
    xp = _pad(x.data, p)
    out = _correlate(xp, w.data, s, out_shape)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv3d: bias {b.shape} does not match {w.shape[0]} outputs")
        out += b.data.reshape(1, -1, 1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        grads = [
            _input_grad(g, w.data, x.shape, s, p) if x.requires_grad else None,
            _weight_grad(xp, g, k, s) if w.requires_grad else None,
        ]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return make_result(out, parents, bw, "conv3d")


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    _check_volume("conv_transpose3d", x, w, 0)
    s, p = _triple(stride), _triple(padding)
    k = w.shape[2:]
    B = x.shape[0]
    size = tuple((n - 1) * ss - 2 * pp + kk for n, ss, pp, kk in zip(x.shape[2:], s, p, k))
    if min(size) < 1:
        raise ValueError(f"conv_transpose3d: output size {size} is not positive")
    out_full = (B, w.shape[1]) + size
    out = _input_grad(x.data, w.data, out_full, s, p)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ValueError(f"conv_transpose3d: bias {b.shape} does not match {w.shape[1]} outputs")
        out = out + b.data.reshape(1, -1, 1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gp = _pad(g, p)
        grads = [
            _correlate(gp, w.data, s, x.shape[2:]) if x.requires_grad else None,
            _weight_grad(gp, x.data, k, s) if w.requires_grad else None,
        ]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return make_result(out, parents, bw, "conv_transpose3d")


def maxpool3d(x: Tensor, kernel=2, stride=None) -> Tensor:
    """Max pooling over non-overlapping windows (stride must equal kernel)."""
    k = _triple(kernel)
    s = k if stride is None else _triple(stride)
    if s != k:
        raise ValueError(f"maxpool3d: only non-overlapping windows are supported (kernel {k}, stride {s})")
    if x.ndim != 5:
        raise ValueError(f"maxpool3d: input must be 5-D, got {x.shape}")
    B, C, T, H, W = x.shape
    if T % k[0] or H % k[1] or W % k[2]:
        raise ValueError(f"maxpool3d: input dims {(T, H, W)} not divisible by window {k}")
    To, Ho, Wo = T // k[0], H // k[1], W // k[2]
    blocks = x.data.reshape(B, C, To, k[0], Ho, k[1], Wo, k[2]).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    blocks = blocks.reshape(B, C, To, Ho, Wo, -1)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, To, Ho, Wo, k[0], k[1], k[2]).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return (gb.reshape(x.shape),)

    return make_result(out, (x,), bw, "maxpool3d")


# ---------------------------------------------------------------- dispatch

OPS = {
    "conv3d": conv3d,
    "transposed_conv3d": conv_transpose3d,
    "maxpool3d": maxpool3d,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "dense": dense,
    "dropout": dropout,
    "concat": lambda *xs, axis=1: concat(xs, axis=axis),
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "log": log,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "bce_with_logits": bce_with_logits,
    "softmax_cross_entropy": softmax_cross_entropy,
}


def forward_op(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply the op named ``kind`` to ``inputs``; ``attrs`` are its keyword options."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **attrs)
