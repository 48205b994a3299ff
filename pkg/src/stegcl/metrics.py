"""Image quality metrics: SSIM, MS-SSIM, PSNR, RMSE, BCE, bit accuracy.

SSIM, MS-SSIM, RMSE, and BCE are built from autodiff ops so the very same
code path serves both as loss terms and as reported evaluation numbers; the
batched per-sample evaluation below reuses the identical map computations and
only changes the final averaging axis. PSNR and bit accuracy are plain floats
(never differentiated).

Conventions (pixels in [0,1]): SSIM constants K1=0.01, K2=0.03 with L=1,
Gaussian window 11x11 sigma 1.5 (applied separably), valid-window sliding,
RGB averaged over channels. PSNR is capped at 100 dB so identical images
never yield infinity.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List

import numpy as np

from .errors import ValidationError
from .layers import avg_pool2, filter1d_valid
from .tensor import Tensor, as_tensor, make_op

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2
PSNR_CAP = 100.0
BCE_CLAMP = 1e-7

# Standard five-scale weights, renormalized over however many scales run.
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@lru_cache(maxsize=None)
def _gauss1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window (sums to 1)."""
    g = _gauss1d(size, sigma)
    return np.outer(g, g)


def _window_filter(x: Tensor, window: int) -> Tensor:
    g = _gauss1d(window, SSIM_SIGMA)
    return filter1d_valid(filter1d_valid(x, g, axis=2), g, axis=3)


def _as_nchw(x) -> Tensor:
    t = as_tensor(x)
    if t.ndim == 3:
        t = make_op("unsqueeze", t.data[None], (t,), lambda g: (g[0],))
    if t.ndim != 4:
        raise ValidationError(f"expected [C,H,W] or [N,C,H,W] image, got shape {t.shape}")
    return t


def _ssim_maps(x: Tensor, y: Tensor, window: int):
    """Per-window luminance and contrast-structure maps for [N,C,H,W] pairs."""
    mu_x = _window_filter(x, window)
    mu_y = _window_filter(y, window)
    xx = _window_filter(x * x, window)
    yy = _window_filter(y * y, window)
    xy = _window_filter(x * y, window)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    lum = (2.0 * (mu_x * mu_y) + SSIM_C1) / (mu_x * mu_x + mu_y * mu_y + SSIM_C1)
    cs = (2.0 * cov + SSIM_C2) / (var_x + var_y + SSIM_C2)
    return lum, cs


def _check_pair(name: str, x: Tensor, y: Tensor):
    if x.shape != y.shape:
        raise ValidationError(f"{name}: shape mismatch {x.shape} vs {y.shape}")


def ssim(x, y, window: int = SSIM_WINDOW) -> Tensor:
    """Mean local SSIM over sliding Gaussian windows, averaged over channels.

    Returns a scalar Tensor (differentiable when inputs carry gradients).
    """
    x, y = _as_nchw(x), _as_nchw(y)
    _check_pair("ssim", x, y)
    if x.shape[2] < window or x.shape[3] < window:
        raise ValidationError(
            f"ssim: image {x.shape[2]}x{x.shape[3]} smaller than window {window}"
        )
    lum, cs = _ssim_maps(x, y, window)
    return (lum * cs).mean()


def _fit_window(h: int, w: int, window: int) -> int:
    """Largest odd window that fits the current scale."""
    k = min(window, h, w)
    return k if k % 2 == 1 else k - 1


def max_scales(h: int, w: int, window: int = SSIM_WINDOW) -> int:
    """How many dyadic scales a HxW image supports.

    The next scale exists only while the current image still fits the full
    window (it must be low-pass filtered before decimation), capped at the
    five standard weights.
    """
    m, s = 1, min(h, w)
    while s >= window and m < len(MSSSIM_WEIGHTS):
        m += 1
        s //= 2
    return m


def _ms_levels(x: Tensor, y: Tensor, scales: int):
    """Yield (weight, lum_map, cs_map, is_last) per scale, downsampling between.

    Shared by the scalar and per-sample MS-SSIM paths so they can never
    disagree on the maps.
    """
    weights = np.array(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    weights /= weights.sum()
    for level in range(scales):
        win = _fit_window(x.shape[2], x.shape[3], SSIM_WINDOW)
        lum, cs = _ssim_maps(x, y, win)
        last = level == scales - 1
        yield weights[level], lum, cs, last
        if not last:
            x, y = avg_pool2(x), avg_pool2(y)


def _resolve_scales(x: Tensor, scales) -> int:
    h, w = x.shape[2], x.shape[3]
    allowed = max_scales(h, w)
    if scales is None:
        return allowed
    if scales < 1 or scales > allowed:
        raise ValidationError(
            f"ms_ssim: {scales} scales requested but {h}x{w} image supports {allowed}"
        )
    return scales


def ms_ssim(x, y, scales: int | None = None) -> Tensor:
    """Multi-scale SSIM: contrast-structure at every scale, luminance folded
    into the coarsest scale, exponents renormalized over the active scales.

    scales=None picks the largest count the image supports; a fixed count
    that does not fit raises instead.
    """
    x, y = _as_nchw(x), _as_nchw(y)
    _check_pair("ms_ssim", x, y)
    result = None
    for weight, lum, cs, last in _ms_levels(x, y, _resolve_scales(x, scales)):
        mean_map = (lum * cs).mean() if last else cs.mean()
        term = mean_map.clip(lo=1e-8) ** weight
        result = term if result is None else result * term
    return result


def psnr(x, y, cap: float = PSNR_CAP) -> float:
    """10*log10(1/MSE) in dB for [0,1] images, capped (identical -> cap)."""
    xd = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    yd = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if xd.shape != yd.shape:
        raise ValidationError(f"psnr: shape mismatch {xd.shape} vs {yd.shape}")
    mse = np.mean((xd - yd) ** 2)
    if mse <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def rmse(x, y) -> Tensor:
    """sqrt(mean squared error) over all pixels and channels."""
    x, y = as_tensor(x), as_tensor(y)
    _check_pair("rmse", x, y)
    d = x - y
    return (d * d).mean().sqrt()


def bce(probs, targets) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to [1e-7, 1-1e-7]."""
    p = as_tensor(probs).clip(lo=BCE_CLAMP, hi=1.0 - BCE_CLAMP)
    t = as_tensor(targets)
    if p.shape != t.shape:
        raise ValidationError(f"bce: shape mismatch {p.shape} vs {t.shape}")
    y = t.detach()
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()


def bit_accuracy(probs, targets) -> float:
    """Fraction of positions where (p >= 0.5) equals the target bit."""
    pd = np.asarray(probs.data if isinstance(probs, Tensor) else probs)
    td = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if pd.shape != td.shape:
        raise ValidationError(f"bit_accuracy: shape mismatch {pd.shape} vs {td.shape}")
    return float(np.mean((pd >= 0.5) == (td >= 0.5)))


@dataclass
class MetricReport:
    """The evaluation columns reported for a cover/stego/bits triple."""

    ssim: float
    msssim: float
    psnr: float
    rmse: float
    accuracy: float

    def validate(self):
        vals = [self.ssim, self.msssim, self.psnr, self.rmse, self.accuracy]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"MetricReport has non-finite fields: {vals}")
        if not 0.0 <= self.accuracy <= 1.0 or self.rmse < 0.0:
            raise ValidationError(f"MetricReport out of range: {self}")
        return self


def metric_report(cover, stego, probs, bits) -> MetricReport:
    """Evaluate one cover/stego pair plus decoded bit probabilities."""
    return MetricReport(
        ssim=float(ssim(cover, stego).item()),
        msssim=float(ms_ssim(cover, stego).item()),
        psnr=psnr(cover, stego),
        rmse=float(rmse(cover, stego).item()),
        accuracy=bit_accuracy(probs, bits),
    ).validate()


def per_sample_reports(covers, stegos, probs, bits) -> List[MetricReport]:
    """Batched evaluation: one MetricReport per sample.

    Runs the identical map computations as ssim()/ms_ssim() on the whole
    batch at once, averaging per sample instead of globally.
    """
    x = Tensor(np.asarray(covers.data if isinstance(covers, Tensor) else covers))
    y = Tensor(np.asarray(stegos.data if isinstance(stegos, Tensor) else stegos))
    _check_pair("per_sample_reports", x, y)
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs)
    b = np.asarray(bits.data if isinstance(bits, Tensor) else bits)
    n = x.shape[0]

    lum, cs = _ssim_maps(x, y, _fit_window(x.shape[2], x.shape[3], SSIM_WINDOW))
    ssim_vals = (lum.data * cs.data).mean(axis=(1, 2, 3), dtype=np.float64)

    ms_vals = np.ones(n, dtype=np.float64)
    for weight, lum, cs, last in _ms_levels(x, y, _resolve_scales(x, None)):
        maps = (lum.data * cs.data) if last else cs.data
        means = maps.mean(axis=(1, 2, 3), dtype=np.float64)
        ms_vals *= np.clip(means, 1e-8, None) ** weight

    diff = (x.data - y.data).astype(np.float64)
    mse = (diff * diff).mean(axis=(1, 2, 3))
    rmse_vals = np.sqrt(mse)
    psnr_vals = np.where(mse <= 0.0, PSNR_CAP,
                         np.minimum(PSNR_CAP, 10.0 * np.log10(1.0 / np.maximum(mse, 1e-300))))
    acc_vals = ((p >= 0.5) == (b >= 0.5)).mean(axis=(1, 2, 3))

    return [
        MetricReport(float(ssim_vals[i]), float(ms_vals[i]), float(psnr_vals[i]),
                     float(rmse_vals[i]), float(acc_vals[i])).validate()
        for i in range(n)
    ]
