"""Closed-form global background light estimation.

Works on the 0-255 intensity scale with rank-trimmed channel statistics:
the lowest and highest 10% of pixels (by intensity, floor counts) are
dropped before computing mean, population standard deviation, and median.
The green/blue estimate is a fitted linear model of mean and spread; the
red estimate is a fitted logistic curve of the median. Estimates are
clamped to [5, 250] and returned on the unit scale. No learned parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Fitted regression coefficients for the channel estimators.
GB_AVG_COEF = 1.13
GB_STD_COEF = 1.11
GB_OFFSET = -25.6
R_SCALE = 140.0
R_GAIN = 14.4
R_RATE = 0.034
CLAMP_LO = 5.0
CLAMP_HI = 250.0
TRIM_FRACTION = 0.10


@dataclass
class ChannelStats:
    """Trimmed channel statistics on the 0-255 scale."""

    avg: float
    std: float
    median: float


def trimmed_stats(channel: np.ndarray) -> ChannelStats:
    """Statistics over the middle 80% of a channel's intensities.

    Sorts the pixels, drops floor(0.1 n) from each end, and computes the
    mean, population standard deviation, and median of the remainder.
    """
    values = np.asarray(channel, dtype=np.float64).reshape(-1)
    n = values.size
    if n < 10:
        raise ValueError(f"channel too small for trimmed statistics: {n} pixels")
    cut = int(math.floor(TRIM_FRACTION * n))
    kept = np.sort(values)[cut:n - cut]
    return ChannelStats(
        avg=float(np.mean(kept)),
        std=float(np.std(kept)),
        median=float(np.median(kept)),
    )


def estimate_gb(stats: ChannelStats) -> float:
    """Linear green/blue-channel estimate (0-255 scale, unclamped)."""
    return GB_AVG_COEF * stats.avg + GB_STD_COEF * stats.std + GB_OFFSET


def estimate_r(stats: ChannelStats) -> float:
    """Logistic red-channel estimate from the trimmed median (0-255 scale)."""
    return R_SCALE / (1.0 + R_GAIN * math.exp(-R_RATE * stats.median))


def estimate_background_light(image: np.ndarray) -> np.ndarray:
    """Per-channel background light of an (H,W,3) unit-interval image.

    Returns a 3-vector on [CLAMP_LO/255, CLAMP_HI/255].
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H,W,3) image, got shape {image.shape}")
    scaled = image * 255.0
    r = estimate_r(trimmed_stats(scaled[:, :, 0]))
    g = estimate_gb(trimmed_stats(scaled[:, :, 1]))
    b = estimate_gb(trimmed_stats(scaled[:, :, 2]))
    raw = np.array([r, g, b])
    return np.clip(raw, CLAMP_LO, CLAMP_HI) / 255.0
