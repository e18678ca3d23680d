"""Monaural clip handling: WAV I/O, band-limited resampling, duration fixing, SNR mixing."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

CLIP_SECONDS = 3.5

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE

# Kaiser beta for the anti-aliasing FIR; ~86 dB stop-band.
KAISER_BETA = 8.6


class AudioError(Exception):
    pass


class WavParseError(AudioError):
    pass


class UnsupportedFormatError(AudioError):
    pass


class DegenerateNoiseError(AudioError):
    pass


class MismatchError(AudioError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    subject_id: str = ""
    label: str = "snore"  # snore | interferer | mixture
    source_tag: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a non-empty 1-D array")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples, **changes) -> "AudioClip":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class MixSpec:
    snr_db: float

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 RIFF/WAVE file, averaging stereo to mono."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavParseError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavParseError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE and len(body) >= 26:
                (sub_tag,) = struct.unpack("<H", body[24:26])
                fmt = (sub_tag,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None or payload is None:
        raise WavParseError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels")
    if rate <= 0 or block_align <= 0:
        raise WavParseError(f"{path}: invalid header fields")

    if tag == _PCM and bits == 16:
        samples = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2") / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag} with {bits} bits")

    frames = samples.size // channels
    if frames < 1:
        raise WavParseError(f"{path}: no sample frames")
    samples = samples[: frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioClip(samples, rate, source_tag=str(path))


def save_wav(path, clip: AudioClip, fmt: str = "pcm16") -> None:
    """Write a mono WAV file.

    ``pcm16`` clips samples to [-1, 1 - 2^-15]; ``float32`` stores them as
    IEEE floats without clipping.
    """
    if fmt == "pcm16":
        payload = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, width = _PCM, 2
    elif fmt == "float32":
        payload = clip.samples.astype("<f4").tobytes()
        tag, width = _IEEE_FLOAT, 4
    else:
        raise ValueError(f"unknown WAV sample format {fmt!r}")
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, tag, 1, clip.sample_rate,
                                    clip.sample_rate * width, width, 8 * width)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc rate conversion."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(target_rate, clip.sample_rate)
    y = signal.resample_poly(clip.samples, ratio.numerator, ratio.denominator,
                             window=("kaiser", KAISER_BETA))
    n_out = int(round(clip.samples.size * target_rate / clip.sample_rate))
    if y.size < n_out:
        y = np.pad(y, (0, n_out - y.size))
    return clip.with_samples(y[:n_out], sample_rate=target_rate)


def fix_duration(clip: AudioClip, seconds: float = CLIP_SECONDS) -> AudioClip:
    """Zero-pad on the right or truncate (keeping the head) to an exact length."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * clip.sample_rate))
    x = clip.samples
    if x.size == n:
        return clip
    if x.size > n:
        return clip.with_samples(x[:n].copy())
    return clip.with_samples(np.concatenate([x, np.zeros(n - x.size)]))


def noise_gain(signal_rms: float, noise_rms: float, snr_db: float) -> float:
    return signal_rms / noise_rms * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(sig: AudioClip, noise: AudioClip, spec: MixSpec) -> AudioClip:
    """Return ``sig + g * noise`` with g chosen so the RMS ratio equals ``spec.snr_db``.

    If the mixture exceeds unit magnitude it is divided by its peak and the
    factor is appended to ``source_tag`` as ``peak_scale=<value>``.
    """
    if sig.sample_rate != noise.sample_rate:
        raise MismatchError("sample rates differ")
    if sig.samples.size != noise.samples.size:
        raise MismatchError("clip lengths differ")
    noise_rms = rms(noise.samples)
    if noise_rms == 0.0:
        raise DegenerateNoiseError("noise clip has zero RMS")

    g = noise_gain(rms(sig.samples), noise_rms, spec.snr_db)
    y = sig.samples + g * noise.samples
    tag = f"{sig.source_tag}+{noise.source_tag}@{spec.snr_db:g}dB"
    peak = float(np.max(np.abs(y)))
    if peak > 1.0:
        y = y / peak
        tag += f";peak_scale={1.0 / peak!r}"
    return AudioClip(y, sig.sample_rate, subject_id=sig.subject_id, label="mixture",
                     source_tag=tag)
