"""Median-filter harmonic/percussive separation and the harmonic-enhanced spectrogram.

The harmonic estimate is a median along time (length ``l_h`` frames), the
percussive estimate a median along frequency whose length may differ per bin.
Both medians truncate their window at the matrix edges, so border cells use
fewer entries; even-sized windows average the two middle order statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioClip, resample
from .tfr import Spectrogram, TfrConfig, cqt_magnitude


@dataclass(frozen=True)
class HpssConfig:
    l_h: int = 33
    p: float = 2.0
    sixteenth_rule: bool = True
    l_p_fixed: Optional[int] = None
    l_p_min: int = 3

    def __post_init__(self):
        if self.l_h < 1 or self.l_h % 2 == 0:
            raise ValueError("l_h must be a positive odd integer")
        if self.l_p_fixed is not None and (self.l_p_fixed < 1 or self.l_p_fixed % 2 == 0):
            raise ValueError("l_p_fixed must be a positive odd integer")
        if self.l_p_min < 1 or self.l_p_min % 2 == 0:
            raise ValueError("l_p_min must be a positive odd integer")
        if not self.p > 0:
            raise ValueError("p must be positive")


@dataclass(frozen=True)
class HpssResult:
    harmonic: Spectrogram        # time-median filtered
    percussive: Spectrogram      # frequency-median filtered
    mask: np.ndarray             # harmonic soft mask in [0, 1]
    enhanced: Spectrogram        # mask * input, kind "harmonic"
    percussive_lengths: np.ndarray


def percussive_kernel_lengths(bin_freqs_hz, cfg: HpssConfig = HpssConfig(),
                              fraction: float = 1.0 / 16.0) -> np.ndarray:
    """Odd frequency-median length per bin covering at least ``fraction * f_k``.

    The span of n bins centred on bin k is taken as ``f_k * (r**(n/2) - r**(-n/2))``
    with r the local frequency ratio to the next bin (the last bin reuses the
    penultimate ratio). Bins at or below 0 Hz get ``l_p_min``.
    """
    f = np.asarray(bin_freqs_hz, dtype=np.float64)
    if f.ndim != 1 or f.size < 2:
        raise ValueError("need at least two bin frequencies")
    if np.any(np.diff(f) <= 0):
        raise ValueError("bin frequencies must be strictly increasing")
    if cfg.l_p_fixed is not None:
        return np.full(f.size, cfg.l_p_fixed, dtype=int)
    if not cfg.sixteenth_rule:
        return np.full(f.size, cfg.l_p_min, dtype=int)

    upper_cap = 2 * f.size + 1
    lengths = np.full(f.size, cfg.l_p_min, dtype=int)
    for k, fk in enumerate(f):
        if fk <= 0:
            continue
        ratio = f[k + 1] / fk if k + 1 < f.size else f[-1] / f[-2]
        n = cfg.l_p_min
        while fk * (ratio ** (n / 2) - ratio ** (-n / 2)) < fraction * fk and n < upper_cap:
            n += 2
        lengths[k] = n
    return lengths


def _truncated_median(windows: np.ndarray, counts: np.ndarray) -> np.ndarray:
    # windows: (..., L) with NaN for out-of-range entries; NaN sorts last.
    ordered = np.sort(windows, axis=-1)
    lo = ((counts - 1) // 2)[..., None]
    hi = (counts // 2)[..., None]
    a = np.take_along_axis(ordered, lo, axis=-1)[..., 0]
    b = np.take_along_axis(ordered, hi, axis=-1)[..., 0]
    return (a + b) / 2.0


def _window_counts(n: int, length: int) -> np.ndarray:
    half = length // 2
    idx = np.arange(n)
    return np.minimum(idx + half, n - 1) - np.maximum(idx - half, 0) + 1


def median_filter_time_values(X: np.ndarray, l_h: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if l_h < 1 or l_h % 2 == 0:
        raise ValueError("l_h must be a positive odd integer")
    half = l_h // 2
    padded = np.pad(X, ((0, 0), (half, half)), constant_values=np.nan)
    windows = sliding_window_view(padded, l_h, axis=1)
    counts = np.broadcast_to(_window_counts(X.shape[1], l_h), X.shape)
    return _truncated_median(windows, counts)


def median_filter_freq_values(X: np.ndarray, lengths) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=int)
    if lengths.shape != (X.shape[0],):
        raise ValueError("need one kernel length per frequency bin")
    if np.any(lengths < 1) or np.any(lengths % 2 == 0):
        raise ValueError("kernel lengths must be positive odd integers")
    out = np.empty_like(X)
    for length in np.unique(lengths):
        rows = np.flatnonzero(lengths == length)
        half = length // 2
        padded = np.pad(X, ((half, half), (0, 0)), constant_values=np.nan)
        # windows[k, m, :] spans bins k-half .. k+half of the original matrix
        windows = sliding_window_view(padded, length, axis=0)[rows]
        counts = _window_counts(X.shape[0], length)[rows][:, None]
        out[rows] = _truncated_median(windows, np.broadcast_to(counts, (rows.size, X.shape[1])))
    return out


def median_filter_time(X: Spectrogram, l_h: int) -> Spectrogram:
    return X.with_values(median_filter_time_values(X.values, l_h))


def median_filter_freq(X: Spectrogram, lengths) -> Spectrogram:
    return X.with_values(median_filter_freq_values(X.values, lengths))


def _soft_mask(num: np.ndarray, other: np.ndarray, p: float) -> np.ndarray:
    # num^p / (num^p + other^p) written as 1 / (1 + (other/num)^p) to avoid underflow
    num = np.asarray(num, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if num.shape != other.shape:
        raise ValueError("mask inputs must share a shape")
    mask = np.zeros(num.shape)
    live = num > 0
    with np.errstate(over="ignore"):
        mask[live] = 1.0 / (1.0 + (other[live] / num[live]) ** p)
    return mask


def _values(x):
    return x.values if isinstance(x, Spectrogram) else np.asarray(x, dtype=np.float64)


def wiener_mask(H, P, p: float = 2.0) -> np.ndarray:
    """Harmonic soft mask H^p / (H^p + P^p); cells where both are zero get 0."""
    return _soft_mask(_values(H), _values(P), p)


def percussive_mask(H, P, p: float = 2.0) -> np.ndarray:
    return _soft_mask(_values(P), _values(H), p)


def harmonic_enhance(X: Spectrogram, mask: np.ndarray) -> Spectrogram:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != X.shape:
        raise ValueError("mask and spectrogram shapes differ")
    return X.with_values(mask * X.values, kind="harmonic")


def separate(X: Spectrogram, cfg: HpssConfig = HpssConfig()) -> HpssResult:
    lengths = percussive_kernel_lengths(X.bin_freqs_hz, cfg)
    H = median_filter_time(X, cfg.l_h)
    P = median_filter_freq(X, lengths)
    mask = wiener_mask(H, P, cfg.p)
    return HpssResult(H, P, mask, harmonic_enhance(X, mask), lengths)


def hpss_pipeline(clip: AudioClip, tfr_cfg: TfrConfig = TfrConfig(),
                  hpss_cfg: HpssConfig = HpssConfig()) -> HpssResult:
    clip = resample(clip, tfr_cfg.cqt_rate)
    return separate(cqt_magnitude(clip, tfr_cfg), hpss_cfg)
