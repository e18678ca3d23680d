"""Deterministic file exports: spectrogram CSV matrices, grayscale PNG, HPSS bundles."""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .hpss import HpssConfig, HpssResult
from .tfr import Spectrogram

PNG_LOG_RANGE = 1000.0  # dynamic range of the log compression, max / floor


def matrix_csv(values, row_labels, col_labels, corner: str = "freq_hz\\time_s",
               fmt: str = "%.8g") -> str:
    values = np.asarray(values, dtype=np.float64)
    lines = [",".join([corner] + [fmt % c for c in col_labels])]
    for label, row in zip(row_labels, values):
        lines.append(",".join([fmt % label] + [fmt % v for v in row]))
    return "\n".join(lines) + "\n"


def spectrogram_csv(spec: Spectrogram) -> str:
    """Rows are bins (first column: bin frequency), columns are frames
    (header row: frame time in seconds)."""
    return matrix_csv(spec.values, spec.bin_freqs_hz, spec.frame_times)


def read_matrix_csv(path):
    """Inverse of :func:`matrix_csv`: ``(values, row_labels, col_labels)``."""
    rows = Path(path).read_text().strip().split("\n")
    cols = np.array([float(c) for c in rows[0].split(",")[1:]])
    body = np.array([[float(v) for v in r.split(",")] for r in rows[1:]]).reshape(len(rows) - 1, -1)
    return body[:, 1:], body[:, 0], cols


def to_gray8(values) -> np.ndarray:
    """Log-compress to [0, 255] with per-image max normalization, low bins at the bottom.

    An all-zero matrix maps to black.
    """
    values = np.asarray(values, dtype=np.float64)
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0:
        img = np.zeros(values.shape)
    else:
        img = np.log1p(PNG_LOG_RANGE * np.clip(values, 0.0, None) / peak) / np.log1p(PNG_LOG_RANGE)
    return np.round(255.0 * img[::-1]).astype(np.uint8)


def _chunk(kind: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body))


def png_bytes(gray: np.ndarray) -> bytes:
    """Encode an 8-bit grayscale image (height, width) as PNG."""
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2 or 0 in gray.shape:
        raise ValueError("need a nonempty 2-D image")
    h, w = gray.shape
    raw = np.hstack([np.zeros((h, 1), dtype=np.uint8), gray]).tobytes()  # filter type 0
    return (b"\x89PNG\r\n\x1a\n"
            + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
            + _chunk(b"IDAT", zlib.compress(raw, 9))
            + _chunk(b"IEND", b""))


def write_png(path, values) -> None:
    Path(path).write_bytes(png_bytes(to_gray8(values)))


def side_by_side(*matrices, gap: int = 4) -> np.ndarray:
    """Gray images of equal height next to each other, each normalized on its own."""
    images = [to_gray8(m) for m in matrices]
    if len({im.shape[0] for im in images}) != 1:
        raise ValueError("images must share a height")
    spacer = np.full((images[0].shape[0], gap), 255, dtype=np.uint8)
    parts = []
    for i, im in enumerate(images):
        parts += [spacer, im] if i else [im]
    return np.hstack(parts)


def write_spectrogram(directory, stem: str, spec: Spectrogram, png: bool = False) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / f"{stem}.csv"]
    paths[0].write_text(spectrogram_csv(spec))
    if png:
        paths.append(directory / f"{stem}.png")
        write_png(paths[1], spec.values)
    return paths


def hpss_sidecar(result: HpssResult, cfg: HpssConfig) -> str:
    return json.dumps({"l_h": cfg.l_h, "p": cfg.p,
                       "l_p_per_bin": [int(v) for v in result.percussive_lengths]},
                      sort_keys=True)


def write_hpss(directory, stem: str, result: HpssResult, cfg: HpssConfig,
               png: bool = True) -> list:
    """Harmonic, percussive, mask and enhanced matrices as CSV (+ PNG), plus a JSON sidecar."""
    directory = Path(directory)
    parts = {"harmonic": result.harmonic, "percussive": result.percussive,
             "mask": result.enhanced.with_values(result.mask), "enhanced": result.enhanced}
    paths = []
    for name, spec in parts.items():
        paths += write_spectrogram(directory, f"{stem}.{name}", spec, png)
    sidecar = directory / f"{stem}.hpss.json"
    sidecar.write_text(hpss_sidecar(result, cfg) + "\n")
    return paths + [sidecar]
