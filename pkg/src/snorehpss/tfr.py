"""Magnitude time-frequency representations: STFT, Mel and constant-Q."""

from __future__ import annotations

from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .audio_io import AudioClip

KINDS = ("stft", "mel", "cqt", "harmonic")


class TooShortError(ValueError):
    pass


class KindError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # (bins, frames), nonnegative
    bin_freqs_hz: np.ndarray
    hop_samples: int
    sample_rate: int
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        freqs = np.asarray(self.bin_freqs_hz, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != freqs.size:
            raise ValueError("values must be (len(bin_freqs_hz), frames)")
        if self.kind not in KINDS:
            raise KindError(f"unknown spectrogram kind {self.kind!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bin_freqs_hz", freqs)

    @property
    def shape(self):
        return self.values.shape

    @property
    def frame_times(self) -> np.ndarray:
        return np.arange(self.values.shape[1]) * self.hop_samples / self.sample_rate

    def with_values(self, values, **changes) -> "Spectrogram":
        return replace(self, values=values, **changes)


@dataclass(frozen=True)
class TfrConfig:
    stft_window: int = 256
    stft_hop: int = 64
    stft_rate: int = 8000
    mel_filters: int = 32
    cqt_bins: int = 84
    cqt_bins_per_octave: int = 12
    cqt_hop: int = 512
    cqt_rate: int = 48000
    cqt_fmin_hz: float = 32.70

    def __post_init__(self):
        counts = (self.stft_window, self.stft_hop, self.stft_rate, self.mel_filters,
                  self.cqt_bins, self.cqt_bins_per_octave, self.cqt_hop, self.cqt_rate)
        if min(counts) <= 0 or self.cqt_fmin_hz <= 0:
            raise ValueError("TfrConfig counts and fmin must be positive")
        top = self.cqt_fmin_hz * 2.0 ** ((self.cqt_bins - 1) / self.cqt_bins_per_octave)
        if top >= self.cqt_rate / 2:
            raise ValueError("top CQT bin is above Nyquist")


# --------------------------------------------------------------------------- STFT

def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_frames(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Windowed frames (frames, window); frame t starts at t*hop, no padding."""
    if x.size < window:
        raise TooShortError(f"need at least {window} samples, got {x.size}")
    frames = sliding_window_view(x, window)[::hop]
    return frames * periodic_hann(window)


def stft_magnitude(clip: AudioClip, cfg: TfrConfig = TfrConfig()) -> Spectrogram:
    if clip.sample_rate != cfg.stft_rate:
        raise ValueError(f"STFT expects {cfg.stft_rate} Hz input, got {clip.sample_rate}")
    frames = stft_frames(clip.samples, cfg.stft_window, cfg.stft_hop)
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    freqs = np.arange(cfg.stft_window // 2 + 1) * cfg.stft_rate / cfg.stft_window
    return Spectrogram(mag, freqs, cfg.stft_hop, cfg.stft_rate, "stft")


# --------------------------------------------------------------------------- Mel

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(bin_freqs: np.ndarray, n_filters: int, fmin: float, fmax: float):
    """Triangular HTK-mel filters sampled on ``bin_freqs``.

    Each row is rescaled so its largest sampled weight is exactly 1 (a bin on
    the apex already has weight 1). Returns ``(weights, center_freqs)``.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    f = np.asarray(bin_freqs, dtype=np.float64)[None, :]
    rising = (f - lower[:, None]) / (center - lower)[:, None]
    falling = (upper[:, None] - f) / (upper - center)[:, None]
    weights = np.maximum(0.0, np.minimum(rising, falling))
    peak = weights.max(axis=1)
    if np.any(peak <= 0):
        raise ValueError("a mel filter falls between analysis bins; use fewer filters")
    return weights / peak[:, None], center


def mel_spectrogram(stft: Spectrogram, cfg: TfrConfig = TfrConfig()) -> Spectrogram:
    if stft.kind != "stft":
        raise KindError(f"mel_spectrogram needs an stft input, got {stft.kind!r}")
    weights, centers = mel_filterbank(stft.bin_freqs_hz, cfg.mel_filters, 0.0,
                                      stft.sample_rate / 2.0)
    return Spectrogram(weights @ stft.values, centers, stft.hop_samples,
                       stft.sample_rate, "mel")


# --------------------------------------------------------------------------- CQT

def cqt_frequencies(cfg: TfrConfig = TfrConfig()) -> np.ndarray:
    k = np.arange(cfg.cqt_bins)
    return cfg.cqt_fmin_hz * 2.0 ** (k / cfg.cqt_bins_per_octave)


def cqt_q(bins_per_octave: int = 12) -> float:
    return 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)


def cqt_kernel_lengths(cfg: TfrConfig = TfrConfig()) -> np.ndarray:
    q = cqt_q(cfg.cqt_bins_per_octave)
    return np.ceil(q * cfg.cqt_rate / cqt_frequencies(cfg)).astype(int)


@dataclass(frozen=True)
class CqtKernel:
    """Hann-windowed complex exponential for one bin, normalized by the window sum
    so a unit-amplitude tone at the bin frequency yields magnitude 0.5."""

    freq: float
    length: int
    sample_rate: int
    taps: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, freq: float, length: int, sample_rate: int) -> "CqtKernel":
        n = np.arange(length) - (length - 1) / 2.0
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)
        taps = w * np.exp(-2j * np.pi * freq * n / sample_rate) / w.sum()
        return cls(freq, length, sample_rate, taps)


@lru_cache(maxsize=8)
def cqt_kernels(cfg: TfrConfig = TfrConfig()) -> tuple[CqtKernel, ...]:
    return tuple(CqtKernel.build(f, int(n), cfg.cqt_rate)
                 for f, n in zip(cqt_frequencies(cfg), cqt_kernel_lengths(cfg)))


@dataclass(frozen=True)
class _BlockBank:
    """All kernels cut into hop-sized blocks, aligned on the longest kernel's frame.

    Row block ``cols[k]:cols[k] + 2 * n_blocks[k]`` of ``weights`` holds the real
    then imaginary taps of bin k; its first block sits ``first[k]`` hops into the
    longest frame.
    """

    weights: np.ndarray
    first: tuple
    cols: tuple
    n_blocks: tuple
    longest: int


@lru_cache(maxsize=8)
def _block_bank(cfg: TfrConfig) -> _BlockBank:
    kernels = cqt_kernels(cfg)
    hop = cfg.cqt_hop
    longest = max(k.length for k in kernels)
    rows, first, cols, n_blocks = [], [], [], []
    col = 0
    for kern in kernels:
        shift = (longest - 1) // 2 - (kern.length - 1) // 2
        lead = shift % hop
        n = -(-(lead + kern.length) // hop)
        taps = np.zeros(n * hop, dtype=complex)
        taps[lead:lead + kern.length] = kern.taps
        blocks = taps.reshape(n, hop)
        rows += [blocks.real, blocks.imag]
        first.append(shift // hop)
        cols.append(col)
        n_blocks.append(n)
        col += 2 * n
    return _BlockBank(np.vstack(rows), tuple(first), tuple(cols), tuple(n_blocks), longest)


def cqt_magnitude(clip: AudioClip, cfg: TfrConfig = TfrConfig()) -> Spectrogram:
    """Per-bin kernel inner products on frames centred every ``cqt_hop`` samples.

    The clip is zero-padded by half the longest kernel on both sides; frame t is
    centred on sample t*hop, t = 0 .. floor(len/hop). The signal is cut into
    hop-sized rows so every (row, kernel block) product comes out of one matrix
    multiply; frame t of bin k then sums the diagonal ``(t + first + j, j)``.
    """
    if clip.sample_rate != cfg.cqt_rate:
        raise ValueError(f"CQT expects {cfg.cqt_rate} Hz input, got {clip.sample_rate}")
    bank = _block_bank(cfg)
    hop = cfg.cqt_hop
    pad = bank.longest // 2 + 1
    n_frames = clip.samples.size // hop + 1
    base = pad - (bank.longest - 1) // 2        # start of frame 0 of the longest kernel
    n_rows = n_frames + max(f + n for f, n in zip(bank.first, bank.n_blocks))
    x = np.zeros(base + n_rows * hop)
    x[pad:pad + clip.samples.size] = clip.samples

    products = x[base:].reshape(n_rows, hop) @ bank.weights.T
    s0, s1 = products.strides
    out = np.empty((len(bank.first), n_frames))
    for k, (f, c, n) in enumerate(zip(bank.first, bank.cols, bank.n_blocks)):
        re = as_strided(products[f:, c:], shape=(n_frames, n), strides=(s0, s0 + s1))
        im = as_strided(products[f:, c + n:], shape=(n_frames, n), strides=(s0, s0 + s1))
        out[k] = np.hypot(re.sum(axis=1), im.sum(axis=1))
    return Spectrogram(out, cqt_frequencies(cfg), hop, cfg.cqt_rate, "cqt")
