"""Per-window reconstruction scores and ROC analysis.

Each window is scored by comparing its spectrogram with the model's
reconstruction. The mean absolute error tracks fidelity; the zero-normalised
cross-correlation is the detection score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .signal_model import Record, slice_windows
from .spectrogram import stack, to_spectrograms
from .trainer import TrainedModel, reconstruct


class SingleClassError(ValueError):
    pass


def ncc(a, b) -> float:
    """Zero-normalised cross-correlation of two equally shaped arrays.

    Returns 0.0 when either input is constant.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.sum(da * da))
    nb = np.sqrt(np.sum(db * db))
    return float(np.clip(np.sum(da * db) / (na * nb), -1.0, 1.0))


def batch_ncc(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise :func:`ncc` over the leading axis."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    da = a - a.mean(axis=1, keepdims=True)
    db = b - b.mean(axis=1, keepdims=True)
    na = np.sqrt(np.sum(da * da, axis=1))
    nb = np.sqrt(np.sum(db * db, axis=1))
    num = np.sum(da * db, axis=1)
    ok = (np.ptp(a, axis=1) > 0) & (np.ptp(b, axis=1) > 0)
    out = np.zeros(len(a))
    out[ok] = num[ok] / (na[ok] * nb[ok])
    return np.clip(out, -1.0, 1.0)


def roc_auc(scores, labels) -> float:
    """Rank-based ROC AUC: Mann-Whitney U / (n_pos * n_neg), ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """(fpr, tpr) points at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[distinct]
    fp = np.cumsum(~y)[distinct]
    tpr = np.r_[0.0, tp / max(y.sum(), 1)]
    fpr = np.r_[0.0, fp / max((~y).sum(), 1)]
    return fpr, tpr


@dataclass(frozen=True)
class DetectionTrace:
    window_starts: np.ndarray
    mae: np.ndarray
    ncc: np.ndarray
    labels: np.ndarray
    record_id: str = ""

    def __post_init__(self):
        n = len(self.window_starts)
        if not (len(self.mae) == len(self.ncc) == len(self.labels) == n):
            raise ValueError("trace sequences must have equal length")

    def auc(self) -> Optional[float]:
        try:
            return roc_auc(self.ncc, self.labels)
        except SingleClassError:
            return None


def score_pixels(model: TrainedModel, pixels: np.ndarray):
    """(mae, ncc) per window for a (n, 32, 92) or (n, 1, 32, 92) batch."""
    x = np.asarray(pixels, dtype=np.float32)
    if x.ndim == 4:
        x = x[:, 0]
    if len(x) == 0:
        return np.zeros(0), np.zeros(0)
    x_hat = reconstruct(model, x)
    mae = np.abs(x_hat.astype(np.float64) - x).reshape(len(x), -1).mean(axis=1)
    return mae, batch_ncc(x, x_hat)


def score_windows(model: TrainedModel, windows: Sequence):
    """(mae, ncc, labels) for signal or spectrogram windows."""
    windows = list(windows)
    if windows and hasattr(windows[0], "values"):
        windows = to_spectrograms(windows)
    mae, scores = score_pixels(model, stack(windows))
    labels = np.array([w.label for w in windows], dtype=bool)
    return mae, scores, labels


def scan_record(
    model: TrainedModel,
    record: Record,
    shift_ms: float = 100,
    axis: int = 0,
    containment: bool = True,
) -> DetectionTrace:
    """Slide a window along a record and score every position.

    Labels use full-window containment of the P arrival by default.
    """
    windows = slice_windows(record, shift_ms, axis=axis, containment=containment)
    mae, scores, labels = score_windows(model, windows)
    return DetectionTrace(
        window_starts=np.array([w.start_index for w in windows]),
        mae=mae,
        ncc=scores,
        labels=labels,
        record_id=record.record_id,
    )


def summarize_traces(traces: Sequence[DetectionTrace]) -> dict:
    """Pooled AUC over all windows plus the per-record mean."""
    scores = np.concatenate([t.ncc for t in traces]) if traces else np.zeros(0)
    labels = np.concatenate([t.labels for t in traces]) if traces else np.zeros(0, bool)
    try:
        pooled = roc_auc(scores, labels)
    except SingleClassError:
        pooled = None
    per = [a for a in (t.auc() for t in traces) if a is not None]
    return {
        "pooled_auc": pooled,
        "per_record_mean_auc": float(np.mean(per)) if per else None,
        "n_records": len(traces),
        "n_windows": int(len(labels)),
        "n_positive": int(labels.sum()),
        "mean_mae": float(np.concatenate([t.mae for t in traces]).mean()) if traces else None,
    }
