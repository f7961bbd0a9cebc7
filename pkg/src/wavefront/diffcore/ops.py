"""Differentiable operations over :class:`~wavefront.diffcore.tensor.Tensor`.

Every function accepts tensors or array-likes (wrapped as constants) and
returns a tensor. Backward closures return one cotangent per input.
"""

from __future__ import annotations

import builtins

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_node

__all__ = [
    "add", "sub", "mul", "div", "neg", "pow", "square", "exp", "log", "sin", "cos",
    "tanh", "relu", "leaky_relu", "matmul", "sum", "mean", "reshape", "transpose",
    "getitem", "concat", "conv1d", "conv2d", "max_pool1d", "ema_scan", "layer_norm",
    "softmax_cross_entropy", "sigmoid_binary_cross_entropy", "global_avg_pool2d",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op_name, a, b, forward):
    a, b = as_tensor(a), as_tensor(b)
    try:
        with np.errstate(all="ignore"):
            out = forward(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(op_name, f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b, out


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b, out = _binary("add", a, b, np.add)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b, out = _binary("sub", a, b, np.subtract)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b, out = _binary("mul", a, b, np.multiply)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b, out = _binary("div", a, b, np.divide)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node("neg", -a.data, (a,), lambda g: (-g,))


def pow(a, b) -> Tensor:
    """``a ** b`` with both operands differentiable.

    The exponent's gradient uses ``log(a)`` and is taken as zero where
    ``a <= 0``; the base's gradient is zero where it would be non-finite.
    """
    a, b, out = _binary("pow", a, b, np.power)

    def backward(g):
        ga = gb = None
        with np.errstate(all="ignore"):
            if a.requires_grad:
                da = b.data * np.power(a.data, b.data - 1.0)
                da = np.where(np.isfinite(da), da, 0.0)
                ga = _unbroadcast(g * da, a.shape)
            if b.requires_grad:
                loga = np.where(a.data > 0, np.log(np.where(a.data > 0, a.data, 1.0)), 0.0)
                gb = _unbroadcast(g * out * loga, b.shape)
        return ga, gb

    return make_node("pow", out, (a, b), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_node("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_node("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_node("log", out, (a,), lambda g: (g / a.data,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_node("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return make_node("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return make_node("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


# -- linear algebra and reductions -------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node("matmul", out, (a, b), backward)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node("sum", out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node("mean", out, (a,), backward)


def global_avg_pool2d(a) -> Tensor:
    """Mean over the two trailing (spatial) axes of ``(B, C, H, W)``."""
    a = as_tensor(a)
    if a.ndim != 4:
        raise ShapeError("global_avg_pool2d", f"expected (B, C, H, W), got {a.shape}")
    return mean(a, axis=(2, 3))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", f"cannot reshape {a.shape} to {shape}") from exc
    return make_node("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return make_node("transpose", out, (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node("getitem", np.array(out, copy=True), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_node("concat", out, tensors, backward)


# -- convolutions and pooling --------------------------------------------------

def _same_pads(length: int, kernel: int, stride: int):
    n_out = -(-length // stride)
    left = (kernel - 1) // 2
    right = builtins.max(0, (n_out - 1) * stride + kernel - length - left)
    return n_out, left, right


def conv1d(x, w, stride: int = 1, padding: str = "valid", groups: int = 1) -> Tensor:
    """Cross-correlate ``x (B, Cin, T)`` with ``w (Cout, Cin // groups, K)``.

    ``padding="same"`` zero-pads so that output frame ``m`` is centred on
    input sample ``m * stride`` and the output has ``ceil(T / stride)``
    frames. Dense kernels (``groups=1``) run through the FFT; depthwise
    kernels (``groups == Cin == Cout``) use strided windows.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError("conv1d", f"expected 3-d input and kernel, got {x.shape} and {w.shape}")
    batch, c_in, length = x.shape
    c_out, c_per_group, k = w.shape
    if stride < 1:
        raise ShapeError("conv1d", f"stride must be >= 1, got {stride}")
    if groups == 1:
        if c_per_group != c_in:
            raise ShapeError("conv1d", f"kernel expects {c_per_group} input channels, input has {c_in}")
    elif not (groups == c_in == c_out and c_per_group == 1):
        raise ShapeError("conv1d", "only dense (groups=1) or depthwise grouping is supported")

    if padding == "same":
        _, left, right = _same_pads(length, k, stride)
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if (left or right) else x.data
    padded_len = xp.shape[-1]
    if padded_len < k:
        raise ShapeError("conv1d", f"input length {length} shorter than kernel {k}")
    full_len = padded_len - k + 1
    n_out = (full_len - 1) // stride + 1

    if groups == 1:
        n_fft = sfft.next_fast_len(padded_len, real=True)
        spec_x = sfft.rfft(xp, n_fft)
        spec_w = sfft.rfft(w.data, n_fft)
        if c_in == 1:
            prod = spec_x * np.conj(spec_w[:, 0])[None]
        else:
            prod = np.einsum("bif,oif->bof", spec_x, np.conj(spec_w))
        out = sfft.irfft(prod, n_fft)[..., :full_len:stride][..., :n_out]

        def backward(g):
            full_g = g
            if stride > 1:
                full_g = np.zeros((batch, c_out, full_len))
                full_g[..., ::stride] = g
            spec_g = sfft.rfft(full_g, n_fft)
            gx = gw = None
            if w.requires_grad:
                if c_in == 1:
                    gw_spec = np.einsum("bf,bof->of", spec_x[:, 0], np.conj(spec_g))[:, None]
                else:
                    gw_spec = np.einsum("bif,bof->oif", spec_x, np.conj(spec_g))
                gw = sfft.irfft(gw_spec, n_fft)[..., :k]
            if x.requires_grad:
                gxp = sfft.irfft(np.einsum("bof,oif->bif", spec_g, spec_w), n_fft)[..., :padded_len]
                gx = gxp[..., left:left + length]
            return gx, gw
    else:
        # split taps into ceil(k / stride) phases so every product runs on
        # contiguous (stride)-sized blocks
        n_phase = -(-k // stride)
        n_blocks = n_out + n_phase - 1
        need = n_blocks * stride
        xb = np.pad(xp, ((0, 0), (0, 0), (0, builtins.max(0, need - padded_len))))[..., :need]
        blocks = xb.reshape(batch, c_in, n_blocks, stride)
        kern = w.data[:, 0]
        spans = [(q, builtins.min(stride, k - q * stride)) for q in range(n_phase)]
        out = np.zeros((batch, c_out, n_out))
        for q, r in spans:
            out += (blocks[:, :, q:q + n_out, :r] @ kern[:, q * stride:q * stride + r, None])[..., 0]

        def backward(g):
            gx = gw = None
            if w.requires_grad:
                gk = np.zeros_like(kern)
                for q, r in spans:
                    gk[:, q * stride:q * stride + r] = np.einsum("bcm,bcmr->cr", g, blocks[:, :, q:q + n_out, :r])
                gw = gk[:, None, :]
            if x.requires_grad:
                gblocks = np.zeros((batch, c_in, n_blocks, stride))
                for q, r in spans:
                    gblocks[:, :, q:q + n_out, :r] += g[..., None] * kern[None, :, None, q * stride:q * stride + r]
                gxp = gblocks.reshape(batch, c_in, need)
                if need < padded_len:
                    # trailing samples never reached by any window
                    gxp = np.pad(gxp, ((0, 0), (0, 0), (0, padded_len - need)))
                gx = gxp[..., left:left + length]
            return gx, gw

    return make_node("conv1d", out, (x, w), backward)


def conv2d(x, w, stride: int = 1, padding: int = 1) -> Tensor:
    """2-D cross-correlation of ``x (B, Cin, H, W)`` with ``w (Cout, Cin, kh, kw)``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", f"incompatible input {x.shape} and kernel {w.shape}")
    batch, c_in, height, width = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError("conv2d", f"input {x.shape} smaller than kernel {w.shape}")
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    # (B, H', W', Cin * kh * kw)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(batch, out_h, out_w, -1)
    w_flat = w.data.reshape(c_out, -1)
    out = np.ascontiguousarray((cols @ w_flat.T).transpose(0, 3, 1, 2))

    def backward(g):
        g_cols = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gx = gw = None
        if w.requires_grad:
            gw = (g_cols.T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
        if x.requires_grad:
            d_cols = (g_cols @ w_flat).reshape(batch, out_h, out_w, c_in, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += (
                        d_cols[..., i, j].transpose(0, 3, 1, 2))
            gx = gxp[:, :, padding:padding + height, padding:padding + width]
        return gx, gw

    return make_node("conv2d", out, (x, w), backward)


def max_pool1d(x, window: int, stride: int) -> Tensor:
    """Max over windows of the last axis, producing ``ceil(T / stride)`` frames.

    The tail is padded with ``-inf``; ties route the gradient to the first
    maximal element.
    """
    x = as_tensor(x)
    length = x.shape[-1]
    n_out = -(-length // stride)
    pad = builtins.max(0, (n_out - 1) * stride + window - length)
    widths = [(0, 0)] * (x.ndim - 1) + [(0, pad)]
    xp = np.pad(x.data, widths, constant_values=-np.inf) if pad else x.data
    windows = sliding_window_view(xp, window, axis=-1)[..., ::stride, :][..., :n_out, :]
    arg = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    src = arg + np.arange(n_out) * stride

    def backward(g):
        gxp = np.zeros(xp.shape)
        if window <= stride:
            np.put_along_axis(gxp, src, g, axis=-1)
        else:
            flat = gxp.reshape(-1, xp.shape[-1])
            rows = np.arange(flat.shape[0])[:, None]
            np.add.at(flat, (rows, src.reshape(flat.shape[0], -1)), g.reshape(flat.shape[0], -1))
        return (np.ascontiguousarray(gxp[..., :length]),)

    return make_node("max_pool1d", np.ascontiguousarray(out), (x,), backward)


# -- recurrent scan --------------------------------------------------------------

def ema_scan(x, s) -> Tensor:
    """Exponential moving average along axis 1 of ``x (B, T, C)``.

    ``M[0] = x[0]`` and ``M[t] = (1 - s) * M[t-1] + s * x[t]`` with a
    per-channel coefficient ``s (C,)``.
    """
    x, s = as_tensor(x), as_tensor(s)
    if x.ndim != 3 or s.shape != (x.shape[2],):
        raise ShapeError("ema_scan", f"expected x (B, T, C) and s (C,), got {x.shape}, {s.shape}")
    coef = s.data
    keep = 1.0 - coef
    out = np.empty_like(x.data)
    out[:, 0] = x.data[:, 0]
    for t in range(1, x.shape[1]):
        out[:, t] = keep * out[:, t - 1] + coef * x.data[:, t]

    def backward(g):
        acc = np.zeros_like(g[:, 0])
        gx = np.empty_like(g)
        gs = np.zeros_like(coef)
        for t in range(g.shape[1] - 1, 0, -1):
            acc = g[:, t] + keep * acc
            gx[:, t] = coef * acc
            gs += (acc * (x.data[:, t] - out[:, t - 1])).sum(axis=0)
        gx[:, 0] = g[:, 0] + keep * acc if g.shape[1] > 1 else g[:, 0]
        return gx, gs

    return make_node("ema_scan", out, (x, s), backward)


# -- normalisation and losses -------------------------------------------------

def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale/shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError("layer_norm", f"gain/bias must have shape ({x.shape[-1]},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gb = g.sum(axis=lead) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_node("layer_norm", out, (x, gain, bias), backward)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean categorical cross-entropy of ``logits (B, C)`` against integer ``targets (B,)``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", f"logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ShapeError("softmax_cross_entropy", "target index out of range")
    n = logits.shape[0]
    logp = _log_softmax(logits.data)
    rows = np.arange(n)
    out = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (g * grad / n,)

    return make_node("softmax_cross_entropy", out, (logits,), backward)


def sigmoid_binary_cross_entropy(logits, targets) -> Tensor:
    """Mean elementwise sigmoid cross-entropy against {0, 1} ``targets``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError("sigmoid_binary_cross_entropy", f"logits {logits.shape} vs targets {targets.shape}")
    z = logits.data
    out = (np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))).mean()

    def backward(g):
        prob = 0.5 * (1.0 + np.tanh(0.5 * z))
        return (g * (prob - targets) / z.size,)

    return make_node("sigmoid_binary_cross_entropy", out, (logits,), backward)
