"""STFT magnitude spectrograms of 2.44 s windows, cropped to 32 x 92 pixels.

Also defines a flat binary container for batches of spectrogram windows::

    magic   8 bytes   b"PWSPEC01"
    hlen    uint32 LE length of the JSON header
    header  JSON      {"count", "shape", "labels", "start_indices",
                       "record_ids", "axes"}
    data    float32 LE, count * 32 * 92 values in C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import get_window

from .signal_model import WINDOW_LENGTH, SignalWindow

N_FFT = 64
WIN = 62
HOP = 2
TAIL_PAD = 2
N_FREQ = N_FFT // 2 + 1  # 33
N_FRAMES = (WINDOW_LENGTH + TAIL_PAD - WIN) // HOP + 1  # 93
OUT_SHAPE = (N_FREQ - 1, N_FRAMES - 1)  # (32, 92)

_HAMMING = get_window("hamming", WIN)  # periodic form
_MAGIC = b"PWSPEC01"


@dataclass(frozen=True)
class SpectrogramWindow:
    pixels: np.ndarray  # (32, 92) float32 in [0, 1]
    label: bool
    start_index: int
    record_id: str = ""
    axis: int = 0

    def __post_init__(self):
        if self.pixels.shape != OUT_SHAPE:
            raise ValueError(f"pixels must have shape {OUT_SHAPE}, got {self.pixels.shape}")


def frames(x: np.ndarray) -> np.ndarray:
    """Hamming-weighted frames, shape (N_FRAMES, WIN)."""
    padded = np.pad(x, (0, TAIL_PAD), mode="reflect")
    view = np.lib.stride_tricks.sliding_window_view(padded, WIN)[::HOP]
    return view * _HAMMING


def stft_magnitude(window) -> np.ndarray:
    """|STFT| of a 244-sample window as a (33, 93) frequency x time matrix.

    62-sample periodic Hamming, hop 2, zero-padded to a 64-point FFT. The tail
    is reflect-padded by two samples so there are 93 frames; the last one is
    dropped again by :func:`crop_and_normalize`.
    """
    x = np.asarray(getattr(window, "values", window), dtype=np.float64)
    if x.shape != (WINDOW_LENGTH,):
        raise ValueError(f"expected {WINDOW_LENGTH} samples, got shape {x.shape}")
    spec = np.fft.rfft(frames(x), n=N_FFT, axis=1)
    return np.abs(spec).T


def crop_and_normalize(spec: np.ndarray) -> np.ndarray:
    """Drop the Nyquist row and last frame, then log1p and min-max to [0, 1]."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.shape != (N_FREQ, N_FRAMES):
        raise ValueError(f"expected shape {(N_FREQ, N_FRAMES)}, got {spec.shape}")
    if not np.all(np.isfinite(spec)):
        raise ValueError("spectrogram contains non-finite values")
    img = np.log1p(spec[:-1, :-1])
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros(OUT_SHAPE, dtype=np.float32)
    return ((img - lo) / (hi - lo)).astype(np.float32)


def to_spectrogram(window: SignalWindow) -> SpectrogramWindow:
    return SpectrogramWindow(
        pixels=crop_and_normalize(stft_magnitude(window)),
        label=window.label,
        start_index=window.start_index,
        record_id=window.record_id,
        axis=getattr(window, "axis", 0),
    )


def to_spectrograms(windows: Sequence[SignalWindow]) -> list[SpectrogramWindow]:
    return [to_spectrogram(w) for w in windows]


def stack(specs: Sequence[SpectrogramWindow]) -> np.ndarray:
    """(n, 1, 32, 92) float32 batch."""
    if not specs:
        return np.zeros((0, 1) + OUT_SHAPE, dtype=np.float32)
    return np.stack([s.pixels for s in specs])[:, None].astype(np.float32)


# --- binary container ------------------------------------------------------


def write_tensor_file(specs: Sequence[SpectrogramWindow], path) -> None:
    header = {
        "count": len(specs),
        "shape": list(OUT_SHAPE),
        "labels": [bool(s.label) for s in specs],
        "start_indices": [int(s.start_index) for s in specs],
        "record_ids": [s.record_id for s in specs],
        "axes": [int(s.axis) for s in specs],
    }
    blob = json.dumps(header).encode()
    data = stack(specs).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(data)


def read_tensor_file(path) -> list[SpectrogramWindow]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a spectrogram tensor file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    shape = tuple(header["shape"])
    n = header["count"]
    data = np.frombuffer(raw[12 + hlen :], dtype="<f4").reshape((n,) + shape)
    return [
        SpectrogramWindow(
            pixels=data[i].astype(np.float32),
            label=header["labels"][i],
            start_index=header["start_indices"][i],
            record_id=header["record_ids"][i],
            axis=header.get("axes", [0] * n)[i],
        )
        for i in range(n)
    ]


def write_csv(spec: SpectrogramWindow, path) -> None:
    np.savetxt(path, spec.pixels, delimiter=",", fmt="%.8g")
