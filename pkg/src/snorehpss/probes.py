"""Synthetic probe signals for checking the separation stage.

The sine-plus-click pair is the fixed fixture behind the separation-gain
regression test and ``scripts/calibrate_separation.py``.
"""

from __future__ import annotations

import numpy as np

from .audio_io import AudioClip
from .hpss import HpssConfig, HpssResult, separate
from .tfr import TfrConfig, cqt_frequencies, cqt_magnitude

SINE_BIN = 36
SINE_AMPLITUDE = 0.3
CLICK_PERIOD_S = 0.25
CLICK_MS = 1.0
GUARD_BINS = 2


def steady_sine(bin_index: int = SINE_BIN, amplitude: float = 1.0, seconds: float = 3.5,
                cfg: TfrConfig = TfrConfig()) -> AudioClip:
    rate = cfg.cqt_rate
    t = np.arange(int(round(seconds * rate))) / rate
    f = cqt_frequencies(cfg)[bin_index]
    return AudioClip(amplitude * np.sin(2 * np.pi * f * t), rate)


def click_positions(n_samples: int, rate: int, period_s: float = CLICK_PERIOD_S) -> np.ndarray:
    period = int(round(period_s * rate))
    return np.arange(period // 2, n_samples, period)


def click_train(seconds: float = 3.5, rate: int = 48000, period_s: float = CLICK_PERIOD_S,
                click_ms: float = CLICK_MS, amplitude: float = 1.0) -> AudioClip:
    n = int(round(seconds * rate))
    width = max(1, int(round(click_ms * rate / 1000)))
    x = np.zeros(n)
    for start in click_positions(n, rate, period_s):
        x[start:start + width] = amplitude
    return AudioClip(x, rate)


def single_click(seconds: float = 3.5, rate: int = 48000, click_ms: float = CLICK_MS) -> AudioClip:
    n = int(round(seconds * rate))
    width = max(1, int(round(click_ms * rate / 1000)))
    x = np.zeros(n)
    x[n // 2:n // 2 + width] = 1.0
    return AudioClip(x, rate)


def sine_click_mixture(cfg: TfrConfig = TfrConfig()) -> AudioClip:
    sine = steady_sine(SINE_BIN, SINE_AMPLITUDE, cfg=cfg)
    clicks = click_train(rate=cfg.cqt_rate)
    return AudioClip(sine.samples + clicks.samples, cfg.cqt_rate)


def sine_to_click_db(values: np.ndarray, n_samples: int, rate: int, hop: int,
                     sine_bin: int = SINE_BIN, guard: int = GUARD_BINS) -> float:
    """Sine-row energy off the clicks over off-sine energy on the click frames, in dB."""
    click_frames = np.unique(np.round(click_positions(n_samples, rate) / hop).astype(int))
    click_frames = click_frames[click_frames < values.shape[1]]
    quiet = np.setdiff1d(np.arange(values.shape[1]), click_frames)
    far = np.ones(values.shape[0], dtype=bool)
    far[max(0, sine_bin - guard):sine_bin + guard + 1] = False
    sine_energy = np.mean(values[sine_bin, quiet] ** 2)
    click_energy = np.mean(values[np.ix_(far, click_frames)] ** 2)
    return float(10 * np.log10(sine_energy / click_energy))


def separation_gain_db(tfr_cfg: TfrConfig = TfrConfig(),
                       hpss_cfg: HpssConfig = HpssConfig()) -> tuple[float, HpssResult]:
    """Improvement of the sine-to-click ratio from X to the harmonic-enhanced X_H."""
    clip = sine_click_mixture(tfr_cfg)
    spec = cqt_magnitude(clip, tfr_cfg)
    result = separate(spec, hpss_cfg)
    n, rate, hop = clip.samples.size, clip.sample_rate, tfr_cfg.cqt_hop
    before = sine_to_click_db(spec.values, n, rate, hop)
    after = sine_to_click_db(result.enhanced.values, n, rate, hop)
    return after - before, result


def retained_fraction(clip: AudioClip, tfr_cfg: TfrConfig = TfrConfig(),
                      hpss_cfg: HpssConfig = HpssConfig()) -> float:
    """Sum of X_H over sum of X."""
    spec = cqt_magnitude(clip, tfr_cfg)
    enhanced = separate(spec, hpss_cfg).enhanced.values
    return float(enhanced.sum() / spec.values.sum())
