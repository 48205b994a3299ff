"""Differentiable layer ops: 2-D convolution, batch norm, pooling, fixed filters.

All spatial ops take NCHW tensors. Convolution is cross-correlation (no
kernel flip) with zero padding and stride 1, matching the usual framework
convention.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .tensor import Tensor, as_tensor, make_op, _sum64


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Same-size cross-correlation: [N,C,H,W] * [K,C,kh,kw] + [K] -> [N,K,H,W].

    Odd square kernels only; padding = kh//2, stride 1. Differentiable with
    respect to input, kernel, and bias.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 4:
        raise ValidationError(f"conv2d: input must be 4-D NCHW, got shape {x.shape}")
    if kernel.ndim != 4:
        raise ValidationError(f"conv2d: kernel must be 4-D, got shape {kernel.shape}")
    n, c, h, w = x.shape
    k, ck, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ValidationError(f"conv2d: kernel must be odd square, got {kh}x{kw}")
    if ck != c:
        raise ValidationError(
            f"conv2d: input has {c} channels but kernel expects {ck}"
        )
    if bias.shape != (k,):
        raise ValidationError(
            f"conv2d: bias shape {bias.shape} does not match {k} output channels"
        )
    cols = _im2col(x.data, kh)  # [N*H*W, kh*kw*C]
    wmat = np.ascontiguousarray(kernel.data.transpose(0, 2, 3, 1)).reshape(k, kh * kw * c)
    out2d = cols @ wmat.T
    out2d += bias.data
    out = np.ascontiguousarray(out2d.reshape(n, h, w, k).transpose(0, 3, 1, 2))

    def grad_fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h * w, k)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (gm.T @ cols).reshape(k, kh, kw, c).transpose(0, 3, 1, 2)
            gk = np.ascontiguousarray(gk)
        if bias.requires_grad:
            gb = _sum64(gm, axis=0)
        if x.requires_grad:
            # input grad is the same-padding correlation of g with the
            # spatially flipped, channel-transposed kernel
            wflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0)  # [C,kh,kw,K]
            gcols = _im2col(g, kh)  # [N*H*W, kh*kw*K]
            gx2d = gcols @ np.ascontiguousarray(wflip).reshape(c, kh * kw * k).T
            gx = np.ascontiguousarray(gx2d.reshape(n, h, w, c).transpose(0, 3, 1, 2))
        return gx, gk, gb

    return make_op("conv2d", out, (x, kernel, bias), grad_fn)


def _im2col(arr: np.ndarray, ksize: int) -> np.ndarray:
    """[N,C,H,W] -> [N*H*W, k*k*C] patch matrix for same-padding correlation.

    Channels-last staging keeps the per-offset copies contiguous, which is
    substantially faster than one strided gather on this layout.
    """
    n, c, h, w = arr.shape
    pad = ksize // 2
    ap = np.pad(arr, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    apl = np.ascontiguousarray(ap.transpose(0, 2, 3, 1))  # [N,H+2p,W+2p,C]
    cols = np.empty((n, h, w, ksize * ksize, c), dtype=arr.dtype)
    idx = 0
    for i in range(ksize):
        for j in range(ksize):
            cols[:, :, :, idx, :] = apl[:, i : i + h, j : j + w, :]
            idx += 1
    return cols.reshape(n * h * w, ksize * ksize * c)


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    gamma/beta are learnable tensors; running stats are plain arrays updated
    as a side effect of training-mode forward passes.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batch_norm(x: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Channel-wise batch normalization followed by gamma*xhat + beta.

    Training mode normalizes with batch statistics (biased variance) and
    updates running stats by exponential moving average; eval mode is a pure
    function of the input and running stats.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValidationError(f"batch_norm: input must be 4-D NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if state.gamma.shape != (c,):
        raise ValidationError(
            f"batch_norm: state has {state.gamma.shape[0]} channels, input has {c}"
        )
    m = n * h * w
    dt = x.data.dtype
    if training:
        if m < 2:
            raise ValidationError(
                "batch_norm: training mode needs N*H*W >= 2 per channel (variance undefined)"
            )
        mu = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.data.var(axis=(0, 2, 3), dtype=np.float64)
        mom = state.momentum
        state.running_mean = ((1.0 - mom) * state.running_mean + mom * mu).astype(dt)
        state.running_var = ((1.0 - mom) * state.running_var + mom * var).astype(dt)
        mu, var = mu.astype(dt), var.astype(dt)
    else:
        mu, var = state.running_mean.astype(dt), state.running_var.astype(dt)

    inv = 1.0 / np.sqrt(var + dt.type(state.eps))
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    gamma, beta = state.gamma, state.beta
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def grad_fn(g):
        gb = _sum64(g, axis=(0, 2, 3)) if beta.requires_grad else None
        gg = _sum64(g * xhat, axis=(0, 2, 3)) if gamma.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                mean_d = dxhat.mean(axis=(0, 2, 3), dtype=np.float64).astype(dt)
                mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), dtype=np.float64).astype(dt)
                gx = inv[None, :, None, None] * (
                    dxhat - mean_d[None, :, None, None] - xhat * mean_dx[None, :, None, None]
                )
            else:
                gx = dxhat * inv[None, :, None, None]
        return gx, gg, gb

    return make_op("batch_norm", out, (x, gamma, beta), grad_fn)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; trailing odd row/column is dropped."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    he, we = (h // 2) * 2, (w // 2) * 2
    if he < 2 or we < 2:
        raise ValidationError(f"avg_pool2: spatial dims too small {x.shape}")
    xc = x.data[:, :, :he, :we]
    out = xc.reshape(n, c, he // 2, 2, we // 2, 2).mean(axis=(3, 5))

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        dx[:, :, :he, :we] = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.data.dtype.type(0.25)
        return (dx,)

    return make_op("avg_pool2", out, (x,), grad_fn)


def filter2d_valid(x: Tensor, kernel2d: np.ndarray) -> Tensor:
    """Depthwise valid cross-correlation with one fixed (non-learnable) 2-D kernel.

    [N,C,H,W] -> [N,C,H-kh+1,W-kw+1]; every channel is filtered with the same
    kernel. Used for metric windows and residual filters.
    """
    x = as_tensor(x)
    kh, kw = kernel2d.shape
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ValidationError(f"filter2d_valid: image {h}x{w} smaller than kernel {kh}x{kw}")
    k = kernel2d.astype(x.data.dtype)
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out = np.tensordot(win, k, axes=([4, 5], [0, 1]))
    ho, wo = out.shape[2], out.shape[3]

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + ho, j : j + wo] += k[i, j] * g
        return (dx,)

    return make_op("filter2d", out, (x,), grad_fn)


def filter1d_valid(x: Tensor, kernel1d: np.ndarray, axis: int) -> Tensor:
    """Valid cross-correlation with a 1-D kernel along one spatial axis (2 or 3).

    Two passes of this realize any separable 2-D window at a fraction of the
    full 2-D cost.
    """
    x = as_tensor(x)
    if axis not in (2, 3):
        raise ValidationError(f"filter1d_valid: axis must be 2 or 3, got {axis}")
    taps = len(kernel1d)
    if x.shape[axis] < taps:
        raise ValidationError(
            f"filter1d_valid: size {x.shape[axis]} along axis {axis} smaller than "
            f"kernel {taps}"
        )
    k = np.asarray(kernel1d, dtype=x.data.dtype)
    win = sliding_window_view(x.data, taps, axis=axis)
    out = np.tensordot(win, k, axes=([4], [0]))
    span = out.shape[axis]

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        sl = [slice(None)] * 4
        for i in range(taps):
            sl[axis] = slice(i, i + span)
            dx[tuple(sl)] += k[i] * g
        return (dx,)

    return make_op("filter1d", out, (x,), grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: [N,C,H,W] -> [N,C]."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), dtype=np.float64).astype(x.data.dtype)

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.data.dtype),)

    return make_op("global_avg_pool", out, (x,), grad_fn)


def kaiming_uniform(rng: np.random.Generator, out_ch: int, in_ch: int, ksize: int,
                    slope: float = 0.01, dtype=np.float32) -> np.ndarray:
    """Fan-in Kaiming-uniform init for conv kernels (leaky-relu gain)."""
    fan_in = in_ch * ksize * ksize
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(out_ch, in_ch, ksize, ksize)).astype(dtype)
