"""Knee-point detection on decreasing loss curves.

The detector smooths the series with a centered moving average, min-max
normalizes both axes to the unit square, flips the decreasing curve upward
(y' = 1 - y_norm), and forms the difference d_i = y'_i - x_i. Local maxima of
d are knee candidates; the first candidate whose difference curve later drops
below d_i - sensitivity * mean(dx_norm) fires. Linear curves have d == 0 and
never fire.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

TRIGGER_KNEE = "Knee"
TRIGGER_CAP = "Cap"
TRIGGER_CONVERGE = "Converge"


@dataclass
class KneeReport:
    """Why a stage stopped, plus the difference curve behind the decision."""

    knee_epoch: Optional[int]
    difference_curve: List[float] = field(default_factory=list)
    triggered_by: str = TRIGGER_CAP


def smooth_centered(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the half-window shrinks at the edges so the
    output keeps the input length and index alignment."""
    series = np.asarray(series, dtype=np.float64)
    if window <= 1:
        return series.copy()
    half = window // 2
    n = len(series)
    out = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = series[lo:hi].mean()
    return out


def difference_curve(series, smoothing_window: int) -> Optional[np.ndarray]:
    """Normalized Kneedle difference d = (1 - y_norm) - x_norm, or None when
    the series is too short or flat to normalize."""
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if n < 3 or n < smoothing_window:
        return None
    y = smooth_centered(series, smoothing_window)
    span = y.max() - y.min()
    if span <= 0.0:
        return None
    y_norm = (y - y.min()) / span
    x_norm = np.arange(n, dtype=np.float64) / (n - 1)
    return (1.0 - y_norm) - x_norm


def detect_knee(series, smoothing_window: int = 5, sensitivity: float = 1.0,
                min_epochs: int = 10) -> Optional[int]:
    """Index of the knee in a decreasing series, or None.

    Candidates before min_epochs are ignored so early noise cannot stop a
    stage; too-short series return None rather than raising, which lets the
    caller poll after every epoch.
    """
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if n < max(3, min_epochs):
        return None
    d = difference_curve(series, smoothing_window)
    if d is None:
        return None
    threshold_step = sensitivity * np.diff(np.arange(n) / (n - 1)).mean()
    for i in range(1, n - 1):
        if not (d[i] > d[i - 1] and d[i] >= d[i + 1]):
            continue
        if i < min_epochs:
            continue
        if np.min(d[i + 1 :]) < d[i] - threshold_step:
            return i
    return None
