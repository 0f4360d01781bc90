"""Neural-network operators on NCHW tensors.

Convolution is im2col + one BLAS matmul per batch; pooling and upsampling
use stride-trick window views. Each operator has a hand-written backward
that the test suite validates against central finite differences and,
for convolution, against a naive six-loop reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, astensor, make_node, stop_gradient, tensor_max


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 2-D convolution layer."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    dilation: int = 1
    padding: str = "same"

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "dilation"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError(f"kernel {self.kernel} and stride {self.stride} must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.padding == "same" and (self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0):
            raise ValueError("'same' padding requires odd kernel sizes")

    def pad_amount(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        return (
            self.dilation * (self.kernel[0] - 1) // 2,
            self.dilation * (self.kernel[1] - 1) // 2,
        )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation with dilation on an (N, C, H, W) input.

    'same' padding keeps the spatial size when stride is 1. Accumulation
    order is deterministic (single matmul per batch element).
    """
    x = astensor(x)
    weight = astensor(weight, x)
    bias = astensor(bias, x)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D NCHW, got shape {x.data.shape}")
    n, c_in, h, w = x.data.shape
    kh, kw = spec.kernel
    if weight.data.shape != (spec.out_channels, spec.in_channels, kh, kw):
        raise ShapeError(
            f"conv2d weight shape {weight.data.shape} does not match spec "
            f"({spec.out_channels}, {spec.in_channels}, {kh}, {kw})"
        )
    if c_in != spec.in_channels:
        raise ShapeError(
            f"conv2d input has {c_in} channels but spec expects {spec.in_channels}"
        )
    if bias.data.shape != (spec.out_channels,):
        raise ShapeError(
            f"conv2d bias shape {bias.data.shape} must be ({spec.out_channels},)"
        )

    sh, sw = spec.stride
    d = spec.dilation
    ph, pw = spec.pad_amount()
    eff_kh = d * (kh - 1) + 1
    eff_kw = d * (kw - 1) + 1
    if h + 2 * ph < eff_kh or w + 2 * pw < eff_kw:
        raise ShapeError(
            f"conv2d input {h}x{w} too small for effective kernel {eff_kh}x{eff_kw}"
        )

    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    ho = (h + 2 * ph - eff_kh) // sh + 1
    wo = (w + 2 * pw - eff_kw) // sw + 1

    w2 = weight.data.reshape(spec.out_channels, c_in * kh * kw)
    if kh == kw == 1 and sh == sw == 1:
        cols = xp.reshape(n, c_in, ho * wo)
    else:
        windows = sliding_window_view(xp, (eff_kh, eff_kw), axis=(2, 3))
        windows = windows[:, :, ::sh, ::sw, ::d, ::d]
        cols = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(
            n, c_in * kh * kw, ho * wo
        )
    out = np.matmul(w2, cols).reshape(n, spec.out_channels, ho, wo)
    out += bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        gm = g.reshape(n, spec.out_channels, ho * wo)
        grad_b = g.sum(axis=(0, 2, 3))
        grad_w = np.zeros_like(weight.data)
        for i in range(kh):
            rows = slice(i * d, i * d + sh * (ho - 1) + 1, sh)
            for j in range(kw):
                cols_sl = slice(j * d, j * d + sw * (wo - 1) + 1, sw)
                xs = xp[:, :, rows, cols_sl]
                grad_w[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.matmul(w2.T, gm).reshape(n, c_in, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            rows = slice(i * d, i * d + sh * (ho - 1) + 1, sh)
            for j in range(kw):
                cols_sl = slice(j * d, j * d + sw * (wo - 1) + 1, sw)
                gxp[:, :, rows, cols_sl] += gcols[:, :, i, j]
        grad_x = gxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else gxp
        return grad_x, grad_w, grad_b

    return make_node(out, (x, weight, bias), backward)


def _pool_prepare(x: Tensor, window, stride, padding: str, pad_mode: str):
    if x.data.ndim != 4:
        raise ShapeError(f"pooling input must be 4-D NCHW, got {x.data.shape}")
    kh, kw = (window, window) if isinstance(window, int) else window
    if stride is None:
        stride = (kh, kw)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    n, c, h, w = x.data.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' pooling requires odd windows")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
        if h < kh or w < kw:
            raise ShapeError(f"pool window {kh}x{kw} exceeds input {h}x{w}")
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if ph or pw:
        if pad_mode == "edge":
            xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge")
        else:
            xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    return xp, (kh, kw), (sh, sw), (ph, pw), (ho, wo)


def _collapse_edge_pad(gxp: np.ndarray, ph: int, pw: int, h: int, w: int) -> np.ndarray:
    """Fold gradients of replicated border pixels back onto their sources."""
    if pw:
        gxp[..., :, pw] += gxp[..., :, :pw].sum(axis=-1)
        gxp[..., :, pw + w - 1] += gxp[..., :, pw + w :].sum(axis=-1)
        gxp = gxp[..., :, pw : pw + w]
    if ph:
        gxp[..., ph, :] += gxp[..., :ph, :].sum(axis=-2)
        gxp[..., ph + h - 1, :] += gxp[..., ph + h :, :].sum(axis=-2)
        gxp = gxp[..., ph : ph + h, :]
    return gxp


def max_pool2d(
    x: Tensor,
    window,
    stride=None,
    padding: str = "valid",
    pad_mode: str = "edge",
) -> Tensor:
    """Max pooling; 'same' padding replicates edges by default so border
    windows never see synthetic sentinel values."""
    x = astensor(x)
    xp, (kh, kw), (sh, sw), (ph, pw), (ho, wo) = _pool_prepare(
        x, window, stride, padding, pad_mode
    )
    n, c, h, w = x.data.shape
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = windows.reshape(n, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros_like(xp)
        dh, dw = np.divmod(arg, kw)
        hh = np.arange(ho).reshape(1, 1, ho, 1) * sh + dh
        ww = np.arange(wo).reshape(1, 1, 1, wo) * sw + dw
        nn = np.arange(n).reshape(n, 1, 1, 1)
        cc = np.arange(c).reshape(1, c, 1, 1)
        np.add.at(gxp, (nn, cc, hh, ww), g)
        if ph or pw:
            if pad_mode == "edge":
                return (_collapse_edge_pad(gxp, ph, pw, h, w).copy(),)
            return (gxp[:, :, ph : ph + h, pw : pw + w],)
        return (gxp,)

    return make_node(np.ascontiguousarray(out), (x,), backward)


def avg_pool2d(x: Tensor, window, stride=None, padding: str = "valid") -> Tensor:
    """Average pooling with zero 'same' padding (padding counts in the mean)."""
    x = astensor(x)
    xp, (kh, kw), (sh, sw), (ph, pw), (ho, wo) = _pool_prepare(
        x, window, stride, padding, pad_mode="zero"
    )
    n, c, h, w = x.data.shape
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = windows.mean(axis=(-2, -1))
    scale = 1.0 / (kh * kw)

    def backward(g):
        gxp = np.zeros_like(xp)
        gs = g * scale
        for i in range(kh):
            rows = slice(i, i + sh * (ho - 1) + 1, sh)
            for j in range(kw):
                cols = slice(j, j + sw * (wo - 1) + 1, sw)
                gxp[:, :, rows, cols] += gs
        if ph or pw:
            return (gxp[:, :, ph : ph + h, pw : pw + w],)
        return (gxp,)

    return make_node(np.ascontiguousarray(out), (x,), backward)


def nearest_upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    x = astensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample input must be 4-D NCHW, got {x.data.shape}")
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    n, c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_node(out, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: active only in training, scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = astensor(x)
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(mask)


def softmax(x: Tensor, axis: int = -3) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (default: channel of NCHW)."""
    x = astensor(x)
    ax = axis % x.data.ndim
    shift = x - stop_gradient(tensor_max(x, axis=ax, keepdims=True))
    e = shift.exp()
    return e / e.sum(axis=ax, keepdims=True)


def log_softmax(x: Tensor, axis: int = -3) -> Tensor:
    x = astensor(x)
    ax = axis % x.data.ndim
    shift = x - stop_gradient(tensor_max(x, axis=ax, keepdims=True))
    return shift - shift.exp().sum(axis=ax, keepdims=True).log()


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization on NCHW.

    Training mode normalizes by batch statistics (biased variance) and
    updates the running buffers in place; eval mode uses the buffers.
    """
    x = astensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm input must be 4-D NCHW, got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batch_norm scale/shift must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    gview = gamma.reshape((1, c, 1, 1))
    bview = beta.reshape((1, c, 1, 1))
    if training:
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean.data.reshape(c)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.data.reshape(c)
        inv = (var + eps) ** -0.5
        return centered * inv * gview + bview
    rm = Tensor(running_mean.reshape(1, c, 1, 1).astype(x.data.dtype))
    rv = Tensor(running_var.reshape(1, c, 1, 1).astype(x.data.dtype))
    inv = (rv + eps) ** -0.5
    return (x - rm) * inv * gview + bview
