"""Flatline artifact removal and characteristic-noise augmentation.

Triggered accelerographs sometimes pad an incompletely filled pre-event buffer
with a constant value. :func:`detect_artifacts` finds those segments with an
amplitude threshold that adapts to the record's own noise level, and
:func:`augment_record` overwrites them (and front-pads the record to a fixed
duration) with fractional Gaussian noise fitted to the genuine pre-event noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import signal as sps
from scipy.special import gammaln

from .signal_model import SAMPLING_RATE, Record, RecordError

MIN_NOISE_LENGTH = 128
CHOLESKY_MAX = 4096


@dataclass(frozen=True)
class NoiseProfile:
    hurst: float
    dominant_period: float  # seconds
    amplitude_scale: float

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ValueError(f"hurst must lie in (0, 1), got {self.hurst}")
        if not self.dominant_period > 0:
            raise ValueError(f"dominant_period must be positive, got {self.dominant_period}")
        if not self.amplitude_scale >= 0:
            raise ValueError(f"amplitude_scale must be >= 0, got {self.amplitude_scale}")

    def to_dict(self) -> dict:
        return {
            "hurst": self.hurst,
            "dominant_period": self.dominant_period,
            "amplitude_scale": self.amplitude_scale,
        }


@dataclass(frozen=True)
class ArtifactReport:
    flat_segments: list = field(default_factory=list)  # half-open (start, end)
    clean_pre_event: tuple = (0, 0)

    def __post_init__(self):
        prev_end = -1
        for start, end in self.flat_segments:
            if not (0 <= start < end) or start < prev_end:
                raise ValueError(f"segments must be sorted and disjoint: {self.flat_segments}")
            prev_end = end

    def to_dict(self) -> dict:
        return {
            "flat_segments": [list(s) for s in self.flat_segments],
            "clean_pre_event": list(self.clean_pre_event),
        }


# --- adaptive sliding window -------------------------------------------------


def detect_artifacts(
    record: Record,
    axis: int = 0,
    win_len: int = 50,
    rel_threshold: float = 0.05,
) -> ArtifactReport:
    """Flag flatline runs in the pre-P part of one axis.

    The pre-P region is cut into consecutive ``win_len`` blocks (a short tail
    becomes its own block). A block is flat when its peak-to-peak amplitude is
    zero or below ``rel_threshold`` times the median peak-to-peak of the
    non-zero blocks. Adjacent flat blocks merge into one segment, whose edges
    are then extended sample by sample while the value stays exactly constant.
    """
    if win_len < 2:
        raise ValueError("win_len must be >= 2")
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in (0, 1)")
    end = record.p_arrival if record.p_arrival is not None else record.length
    if end < win_len:
        raise RecordError(f"pre-P region ({end} samples) shorter than win_len {win_len}")
    x = record.samples[axis, :end]

    edges = list(range(0, end - win_len + 1, win_len))
    bounds = [(s, s + win_len) for s in edges]
    tail = bounds[-1][1]
    if end - tail >= 2:
        bounds.append((tail, end))
    elif end > tail:
        bounds[-1] = (bounds[-1][0], end)
    ptp = np.array([np.ptp(x[a:b]) for a, b in bounds])

    live = ptp[ptp > 0]
    threshold = rel_threshold * float(np.median(live)) if live.size else 0.0
    flat = (ptp == 0) | (ptp < threshold)

    segments = []
    i = 0
    while i < len(bounds):
        if not flat[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(bounds) and flat[j + 1]:
            j += 1
        a, b = bounds[i][0], bounds[j][1]
        # exact-constant runs get sample-accurate edges
        if x[b - 1] == x[a]:
            while b < end and x[b] == x[b - 1]:
                b += 1
            while a > 0 and x[a - 1] == x[a]:
                a -= 1
        if segments and a <= segments[-1][1]:
            segments[-1] = (segments[-1][0], max(b, segments[-1][1]))
        else:
            segments.append((a, b))
        i = j + 1

    return ArtifactReport(flat_segments=segments, clean_pre_event=_longest_gap(segments, end))


def _longest_gap(segments, end) -> tuple[int, int]:
    best = (0, 0)
    cursor = 0
    for a, b in segments + [(end, end)]:
        if a - cursor > best[1] - best[0]:
            best = (cursor, a)
        cursor = max(cursor, b)
    return best


# --- noise statistics ------------------------------------------------------


def _expected_rs(n: int) -> float:
    """Anis-Lloyd/Peters expected R/S of n i.i.d. Gaussian samples."""
    i = np.arange(1, n)
    tail = np.sum(np.sqrt((n - i) / i))
    if n <= 340:
        ratio = math.exp(gammaln((n - 1) / 2) - gammaln(n / 2)) / math.sqrt(math.pi)
    else:
        ratio = 1.0 / math.sqrt(n * math.pi / 2)
    return (n - 0.5) / n * ratio * tail


def rescaled_range(x: np.ndarray, n: int) -> float:
    """Mean R/S statistic over non-overlapping blocks of length n."""
    blocks = x[: (len(x) // n) * n].reshape(-1, n)
    dev = blocks - blocks.mean(axis=1, keepdims=True)
    z = np.cumsum(dev, axis=1)
    r = z.max(axis=1) - z.min(axis=1)
    s = blocks.std(axis=1)
    ok = s > 0
    return float(np.mean(r[ok] / s[ok]))


def hurst_rs(x, min_block: int = 16) -> float:
    """Hurst exponent of an increment series by corrected rescaled-range analysis.

    Fits ``log(R/S_n) - log(E[R/S_n])`` against ``log n`` over dyadic block
    sizes; H = 0.5 + slope.
    """
    x = np.asarray(x, dtype=np.float64)
    sizes = []
    n = min_block
    while n <= len(x) // 2:
        sizes.append(n)
        n *= 2
    if len(sizes) < 2:
        raise ValueError(f"series of length {len(x)} too short for R/S analysis")
    y = [math.log(rescaled_range(x, n)) - math.log(_expected_rs(n)) for n in sizes]
    slope = np.polyfit(np.log(sizes), y, 1)[0]
    return float(np.clip(0.5 + slope, 0.01, 0.99))


def dominant_period(x, rate: float = SAMPLING_RATE) -> float:
    """Period (s) of the largest non-DC peak in the magnitude spectrum."""
    x = np.asarray(x, dtype=np.float64)
    mag = np.abs(np.fft.rfft(x - x.mean()))
    freqs = np.fft.rfftfreq(len(x), d=1.0 / rate)
    k = int(np.argmax(mag[1:])) + 1
    return float(1.0 / freqs[k])


def fit_noise_profile(noise, rate: float = SAMPLING_RATE) -> NoiseProfile:
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) < MIN_NOISE_LENGTH:
        raise ValueError(f"need at least {MIN_NOISE_LENGTH} samples, got {len(noise)}")
    std = float(noise.std(ddof=1))
    if std == 0.0 or not np.isfinite(std):
        raise ValueError("noise has zero variance; Hurst exponent undefined")
    return NoiseProfile(
        hurst=hurst_rs(noise),
        dominant_period=dominant_period(noise, rate),
        amplitude_scale=std,
    )


# --- fractional Gaussian noise ---------------------------------------------


def fgn_autocovariance(hurst: float, n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * np.abs(k) ** h2 + np.abs(k - 1) ** h2)


def _davies_harte(hurst: float, n: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    gamma = fgn_autocovariance(hurst, n + 1)
    row = np.concatenate([gamma[: n + 1], gamma[n - 1 : 0 : -1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        return None
    lam = np.clip(lam, 0.0, None)
    m = len(row)
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    w = np.fft.fft(np.sqrt(lam / m) * z)
    return w.real[:n]


def generate_fbm(
    profile: NoiseProfile,
    length: int,
    seed: int = 0,
    band_emphasis: float = 0.0,
    rate: float = SAMPLING_RATE,
) -> np.ndarray:
    """Fractional Gaussian noise (FBM increments) with the profile's Hurst exponent.

    Synthesised by circulant embedding, scaled so the increments have standard
    deviation ``amplitude_scale``. ``band_emphasis > 0`` mixes in a peaking
    biquad at ``1 / dominant_period`` with that relative gain.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    if length == 1:
        x = rng.standard_normal(1)
    else:
        x = _davies_harte(profile.hurst, length, rng)
        if x is None:
            if length > CHOLESKY_MAX:
                raise RuntimeError(
                    f"circulant embedding not positive definite for H={profile.hurst}, "
                    f"n={length} exceeds Cholesky fallback limit"
                )
            gamma = fgn_autocovariance(profile.hurst, length)
            idx = np.arange(length)
            cov = gamma[np.abs(idx[:, None] - idx[None, :])]
            x = np.linalg.cholesky(cov) @ rng.standard_normal(length)

    if band_emphasis > 0:
        f0 = 1.0 / profile.dominant_period
        if 0 < f0 < rate / 2:
            b, a = sps.iirpeak(f0, Q=2.0, fs=rate)
            x = x + band_emphasis * sps.lfilter(b, a, x)
            x = x / np.sqrt(1.0 + band_emphasis**2)
    return x * profile.amplitude_scale


# --- augmentation ----------------------------------------------------------


def augment_record(
    record: Record,
    report: ArtifactReport,
    profile: Union[NoiseProfile, Sequence[NoiseProfile]],
    target_duration: float = 30.0,
    seed: int = 0,
    band_emphasis: float = 0.0,
) -> Record:
    """Replace flat segments and front-pad with synthetic noise to a fixed length.

    ``profile`` may be one profile for all axes or one per axis. Every sample
    outside the flagged segments is kept bit-for-bit; ``p_arrival`` moves by
    the number of prepended samples.
    """
    target = int(round(target_duration * record.sampling_rate))
    n = record.length
    if n > target:
        raise RecordError(
            f"record {record.record_id!r} is {n} samples, longer than target {target}"
        )
    pad = target - n
    if isinstance(profile, NoiseProfile):
        profiles = [profile] * record.samples.shape[0]
    else:
        profiles = list(profile)
    if not report.flat_segments and pad == 0:
        return record

    out = np.empty((record.samples.shape[0], target))
    for ax, prof in enumerate(profiles):
        noise = generate_fbm(prof, target, seed=(seed ^ (ax + 1) * 7919), band_emphasis=band_emphasis)
        x = record.samples[ax]
        a, b = report.clean_pre_event
        level = float(x[a:b].mean()) if b > a else 0.0
        noise = noise + level
        row = np.concatenate([noise[:pad], x])
        for s, e in report.flat_segments:
            row[pad + s : pad + e] = noise[pad + s : pad + e]
        out[ax] = row

    p = record.p_arrival + pad if record.p_arrival is not None else None
    return record.replace(samples=out, p_arrival=p)
