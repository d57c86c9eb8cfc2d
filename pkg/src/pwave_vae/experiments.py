"""Synthetic desk-scale data and the analysis harness.

* :func:`make_synthetic_dataset` - fractional-noise records with a sudden
  band-limited onset at a known index.
* :func:`build_windows` / :func:`prepare_data` - P-aligned positives and
  pure-noise negatives, split by record.
* :func:`run_grid` - architecture/capacity sweeps with failure quarantine and
  the per-family, per-latent and depth x heads summary tables.
* :func:`shift_sweep` and :func:`distance_analysis` - AUC as a function of
  window misalignment and of epicentral distance.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detector import SingleClassError, roc_auc, roc_curve, score_windows
from .models import FAMILIES, HEAD_CHOICES, ModelConfig
from .preprocess import NoiseProfile, generate_fbm
from .signal_model import (
    PRE_P_SAMPLES,
    SAMPLING_RATE,
    WINDOW_LENGTH,
    DatasetSplit,
    Record,
    extract_window,
    split_dataset,
)
from .trainer import TrainedModel, TrainParams, train

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0


# --- geometry --------------------------------------------------------------


def law_of_cosines_km(p1, p2) -> float:
    """R * arccos(sin p1 sin p2 + cos p1 cos p2 cos dlon), argument clamped.

    Loses about eps / separation radians near coincident points, so it is kept
    as a reference; :func:`haversine_km` is the one to use.
    """
    phi1, lam1 = map(math.radians, p1)
    phi2, lam2 = map(math.radians, p2)
    c = math.sin(phi1) * math.sin(phi2) + math.cos(phi1) * math.cos(phi2) * math.cos(lam2 - lam1)
    return EARTH_RADIUS_KM * math.acos(min(1.0, max(-1.0, c)))


def haversine_km(p1, p2) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees.

    Same central angle as :func:`law_of_cosines_km`, computed as
    atan2(|u x v|, u . v) so it stays accurate to a few ulps from coincident
    to antipodal points.
    """
    phi1, lam1 = map(math.radians, p1)
    phi2, lam2 = map(math.radians, p2)
    dl = lam2 - lam1
    cross = math.hypot(
        math.cos(phi2) * math.sin(dl),
        math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dl),
    )
    dot = math.sin(phi1) * math.sin(phi2) + math.cos(phi1) * math.cos(phi2) * math.cos(dl)
    return EARTH_RADIUS_KM * math.atan2(cross, dot)


def destination(p, bearing_deg: float, distance_km: float) -> tuple[float, float]:
    """Point reached from ``p`` along a great circle."""
    phi1, lam1 = map(math.radians, p)
    theta = math.radians(bearing_deg)
    d = distance_km / EARTH_RADIUS_KM
    phi2 = math.asin(
        math.sin(phi1) * math.cos(d) + math.cos(phi1) * math.sin(d) * math.cos(theta)
    )
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(d) * math.cos(phi1),
        math.cos(d) - math.sin(phi1) * math.sin(phi2),
    )
    lon = (math.degrees(lam2) + 540.0) % 360.0 - 180.0
    return (math.degrees(phi2), lon)


# --- synthetic records -----------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    snr: tuple = (0.5, 4.0)  # event RMS over 1.44 s / noise std, log-uniform
    band_hz: tuple = (5.0, 20.0)
    hurst: tuple = (0.4, 0.8)
    distance_km: tuple = (5.0, 200.0)
    snr_follows_distance: bool = False  # SNR decays log-linearly with distance
    p_window_s: tuple = (6.0, 20.0)
    duration_s: float = 30.0
    flatline_prob: float = 0.0
    flatline_s: tuple = (1.0, 3.0)
    attack_s: float = 0.03
    decay_s: float = 2.0


def _onset(n: int, p: int, rng, params: SynthParams) -> np.ndarray:
    """Enveloped downward chirp starting abruptly at sample p."""
    t = (np.arange(n) - p) / SAMPLING_RATE
    lo, hi = params.band_hz
    f_start = rng.uniform(lo + 0.5 * (hi - lo), hi)
    f_end = rng.uniform(lo, lo + 0.3 * (hi - lo))
    tau = rng.uniform(0.8, 1.2) * params.decay_s
    tp = np.clip(t, 0.0, None)
    # instantaneous frequency relaxes from f_start to f_end
    phase = 2 * np.pi * (f_end * tp + (f_start - f_end) * tau * (1 - np.exp(-tp / tau)))
    env = (1 - np.exp(-tp / params.attack_s)) * np.exp(-tp / (2 * tau))
    sig = env * np.sin(phase + rng.uniform(0, 2 * np.pi))
    sig[t < 0] = 0.0
    return sig


def make_synthetic_dataset(
    n_records: int,
    seed: int = 0,
    params: SynthParams = SynthParams(),
) -> list[Record]:
    """Records of fractional noise plus a sudden-onset chirp at ``p_arrival``.

    Station coordinates are drawn in a regional box and the event is placed at
    a random bearing and epicentral distance from it. Deterministic in ``seed``.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    n = int(round(params.duration_s * SAMPLING_RATE))
    records = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_records)):
        rng = np.random.default_rng(child)
        p_lo, p_hi = (int(round(v * SAMPLING_RATE)) for v in params.p_window_s)
        p = int(rng.integers(p_lo, min(p_hi, n - WINDOW_LENGTH) + 1))

        dist = rng.uniform(*params.distance_km)
        lo, hi = params.snr
        if params.snr_follows_distance:
            d0, d1 = params.distance_km
            frac = (dist - d0) / (d1 - d0) if d1 > d0 else 0.0
            snr = hi * (lo / hi) ** frac
        else:
            snr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

        station = (rng.uniform(36.0, 42.0), rng.uniform(26.0, 44.0))
        event = destination(station, rng.uniform(0, 360), dist)

        hurst = rng.uniform(*params.hurst)
        axis_gain = np.array([1.0, rng.uniform(0.4, 0.8), rng.uniform(0.4, 0.8)])
        axes = []
        for ax in range(3):
            noise = generate_fbm(
                NoiseProfile(hurst, 1.0, 1.0), n, seed=int(rng.integers(2**31))
            )
            onset = _onset(n, p, rng, params)
            seg = onset[p : p + 144]
            rms = np.sqrt(np.mean(seg**2)) if seg.size else 1.0
            axes.append(noise + onset * (snr * axis_gain[ax] / rms))
        samples = np.array(axes)

        if rng.uniform() < params.flatline_prob:
            k = int(rng.uniform(*params.flatline_s) * SAMPLING_RATE)
            samples[:, : min(k, p - 1)] = 0.0

        records.append(
            Record(
                samples=samples,
                p_arrival=p,
                station_coords=station,
                event_coords=event,
                record_id=f"syn{seed:04d}_{i:05d}",
            )
        )
    return records


# --- windows and splits ----------------------------------------------------


def noise_windows(record: Record, axis: int = 0, stride_ms: float = 500) -> list:
    """Negatives: windows lying entirely before the P arrival."""
    stride = int(round(stride_ms * SAMPLING_RATE / 1000))
    end = record.p_arrival if record.p_arrival is not None else record.length
    return [
        extract_window(record, s, axis, label=False)
        for s in range(0, end - WINDOW_LENGTH + 1, stride)
    ]


def p_window(record: Record, axis: int = 0, shift: int = 0):
    """Positive window starting ``shift`` samples earlier than the trained alignment."""
    return extract_window(record, record.p_arrival - PRE_P_SAMPLES - shift, axis, label=True)


def build_windows(
    records: Sequence[Record], axes=(0,), neg_stride_ms: float = 500
) -> list:
    """P-aligned positives and pure-noise negatives for every record and axis."""
    out = []
    for rec in records:
        if rec.p_arrival is None:
            continue
        for ax in axes:
            if rec.p_arrival - PRE_P_SAMPLES >= 0 and rec.p_arrival + WINDOW_LENGTH - PRE_P_SAMPLES <= rec.length:
                out.append(p_window(rec, ax))
            out.extend(noise_windows(rec, ax, neg_stride_ms))
    return out


@dataclass
class ExperimentData:
    records: list
    split: DatasetSplit

    def records_in(self, part: str) -> list:
        ids = self.split.record_ids(part)
        return [r for r in self.records if r.record_id in ids]


def prepare_data(
    records: Sequence[Record],
    axes=(0,),
    ratios=(0.7, 0.15, 0.15),
    seed: int = 0,
    neg_stride_ms: float = 500,
) -> ExperimentData:
    from .spectrogram import to_spectrograms

    windows = build_windows(records, axes, neg_stride_ms)
    split = split_dataset(windows, ratios, seed)
    split = DatasetSplit(
        train=to_spectrograms(split.train),
        eval=to_spectrograms(split.eval),
        test=to_spectrograms(split.test),
    )
    return ExperimentData(records=list(records), split=split)


def evaluate(model: TrainedModel, test: Sequence) -> dict:
    """AUC of NCC over the test windows plus reconstruction MAE on P windows."""
    mae, scores, labels = score_windows(model, test)
    try:
        auc = roc_auc(scores, labels)
    except SingleClassError:
        auc = None
    return {
        "auc": auc,
        "mae": float(mae[labels].mean()) if labels.any() else None,
        "mae_all": float(mae.mean()) if len(mae) else None,
        "ncc_p": float(scores[labels].mean()) if labels.any() else None,
        "ncc_noise": float(scores[~labels].mean()) if (~labels).any() else None,
        "n_pos": int(labels.sum()),
        "n_neg": int((~labels).sum()),
        "_scores": scores,
        "_labels": labels,
    }


# --- grid search -----------------------------------------------------------


@dataclass
class SweepSpec:
    families: list = field(default_factory=lambda: list(FAMILIES))
    latent_dims: list = field(default_factory=lambda: [64, 128, 256])
    depths: list = field(default_factory=lambda: [4])
    heads: list = field(default_factory=lambda: [4])
    seeds: list = field(default_factory=lambda: [0])
    learning_rates: list = field(default_factory=lambda: [1e-3])
    beta: float = 1.0
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10

    def __post_init__(self):
        bad = [h for h in self.heads if h not in HEAD_CHOICES]
        if bad:
            raise ValueError(f"heads must divide 48: {bad}")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown families: {unknown}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(**d)

    def trials(self) -> list[tuple[ModelConfig, TrainParams]]:
        out = []
        for fam in self.families:
            attn = fam in ("attention", "hybrid")
            depths = self.depths if attn else [1]
            heads = self.heads if attn else [4]
            for latent, depth, head, lr, seed in itertools.product(
                self.latent_dims, depths, heads, self.learning_rates, self.seeds
            ):
                cfg = ModelConfig(fam, latent, depth, head, self.beta)
                hp = TrainParams(self.epochs, self.batch_size, lr, seed, self.patience)
                out.append((cfg, hp))
        return out

    def cardinality(self) -> int:
        return len(self.trials())


def run_trial(cfg: ModelConfig, hp: TrainParams, split: DatasetSplit) -> dict:
    row = {
        "family": cfg.family,
        "latent_dim": cfg.latent_dim,
        "attn_depth": cfg.attn_depth if cfg.uses_attention else None,
        "attn_heads": cfg.attn_heads if cfg.uses_attention else None,
        "learning_rate": hp.learning_rate,
        "seed": hp.seed,
        "status": "OK",
        "auc": None,
        "mae": None,
        "diagnostic": None,
    }
    try:
        model = train(cfg, split, hp)
        row["status"] = model.status
        row["diagnostic"] = model.training_meta.get("diagnostic")
        row["best_epoch"] = model.training_meta.get("best_epoch")
        if model.ok:
            res = evaluate(model, split.test)
            row["auc"], row["mae"] = res["auc"], res["mae"]
            row["ncc_p"], row["ncc_noise"] = res["ncc_p"], res["ncc_noise"]
    except Exception as exc:  # quarantine: one bad trial never stops the sweep
        row["status"] = "FAILED"
        row["diagnostic"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_packed(args):
    return run_trial(*args)


@dataclass
class GridResults:
    rows: list

    def best_per_family(self) -> list[dict]:
        out = []
        for fam in FAMILIES:
            ok = [r for r in self.rows if r["family"] == fam and r["status"] == "OK" and r["auc"] is not None]
            if ok:
                best = max(ok, key=lambda r: r["auc"])
                out.append({"family": fam, "auc": best["auc"], "mae": best["mae"],
                            "latent_dim": best["latent_dim"], "attn_depth": best["attn_depth"],
                            "attn_heads": best["attn_heads"]})
        return out

    def latent_table(self) -> dict:
        """{latent: {family: mean AUC or "Fail"}}; "Fail" when no OK trial beats 0.5."""
        table = {}
        for latent in sorted({r["latent_dim"] for r in self.rows}):
            table[latent] = {}
            for fam in FAMILIES:
                cell = [r for r in self.rows if r["family"] == fam and r["latent_dim"] == latent]
                if not cell:
                    continue
                ok = [r["auc"] for r in cell if r["status"] == "OK" and r["auc"] is not None]
                if not any(a > 0.5 for a in ok):
                    table[latent][fam] = "Fail"
                else:
                    table[latent][fam] = float(np.mean(ok))
        return table

    def depth_heads_table(self) -> dict:
        """{depth: {heads: mean AUC}} over OK attention/hybrid trials."""
        table = {}
        rows = [r for r in self.rows if r["attn_depth"] is not None]
        for d in sorted({r["attn_depth"] for r in rows}):
            table[d] = {}
            for h in sorted({r["attn_heads"] for r in rows}):
                ok = [r["auc"] for r in rows if r["attn_depth"] == d and r["attn_heads"] == h
                      and r["status"] == "OK" and r["auc"] is not None]
                table[d][h] = float(np.mean(ok)) if ok else "Fail"
        return table


def run_grid(spec: SweepSpec, data: DatasetSplit, workers: int = 1) -> GridResults:
    trials = spec.trials()
    log.info("grid: %d trials", len(trials))
    jobs = [(cfg, hp, data) for cfg, hp in trials]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_packed, jobs))
    else:
        rows = [_run_packed(j) for j in jobs]
    return GridResults(rows=rows)


# --- alignment and distance analyses --------------------------------------


@dataclass
class ShiftSeries:
    shifts_s: list
    auc: list
    skipped: list  # records skipped at each shift (window out of bounds)


def _negatives(model, records, axes, neg_stride_ms):
    negs = [w for r in records for ax in axes for w in noise_windows(r, ax, neg_stride_ms)]
    _, scores, _ = score_windows(model, negs)
    return scores


def shift_sweep(
    model: TrainedModel,
    records: Sequence[Record],
    max_shift_s: float = 4.5,
    step_ms: float = 100,
    axes=(0,),
    neg_stride_ms: float = 500,
) -> ShiftSeries:
    """AUC as the positive window slides earlier than the trained alignment.

    Shift 0 is the trained framing (arrival 1.00 s into the window); the
    negative set (pre-P noise windows) is fixed across shifts.
    """
    records = [r for r in records if r.p_arrival is not None]
    neg = _negatives(model, records, axes, neg_stride_ms)
    step = int(round(step_ms * SAMPLING_RATE / 1000))
    n_steps = int(round(max_shift_s * 1000 / step_ms))
    shifts, aucs, skipped = [], [], []
    for k in range(n_steps + 1):
        shift = k * step
        pos, skip = [], 0
        for rec in records:
            start = rec.p_arrival - PRE_P_SAMPLES - shift
            if start < 0 or start + WINDOW_LENGTH > rec.length:
                skip += 1
                continue
            pos.extend(p_window(rec, ax, shift) for ax in axes)
        _, ps, _ = score_windows(model, pos)
        scores = np.concatenate([ps, neg])
        labels = np.r_[np.ones(len(ps), bool), np.zeros(len(neg), bool)]
        try:
            aucs.append(roc_auc(scores, labels))
        except SingleClassError:
            aucs.append(None)
        shifts.append(-shift / SAMPLING_RATE)
        skipped.append(skip)
    return ShiftSeries(shifts_s=shifts, auc=aucs, skipped=skipped)


@dataclass
class DistanceBin:
    lo_km: float
    hi_km: float
    auc: Optional[float]
    n: int

    def __post_init__(self):
        if not self.lo_km < self.hi_km:
            raise ValueError("lo_km must be < hi_km")
        if self.n < 0:
            raise ValueError("n must be >= 0")


def distance_analysis(
    model: TrainedModel,
    records: Sequence[Record],
    bin_edges_km: Sequence[float],
    axes=(0,),
    neg_stride_ms: float = 500,
) -> list[DistanceBin]:
    """Pooled AUC per epicentral-distance bin; empty bins report ``auc=None``."""
    edges = list(bin_edges_km)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    members = [[] for _ in range(len(edges) - 1)]
    for rec in records:
        d = haversine_km(rec.station_coords, rec.event_coords)
        for i, (a, b) in enumerate(zip(edges, edges[1:])):
            if a <= d < b:
                members[i].append(rec)
                break
    bins = []
    for (a, b), recs in zip(zip(edges, edges[1:]), members):
        auc = None
        if recs:
            _, scores, labels = score_windows(model, build_windows(recs, axes, neg_stride_ms))
            try:
                auc = roc_auc(scores, labels)
            except SingleClassError:
                auc = None
        bins.append(DistanceBin(lo_km=a, hi_km=b, auc=auc, n=len(recs)))
    return bins


def roc_points(scores, labels) -> list[tuple[float, float]]:
    fpr, tpr = roc_curve(scores, labels)
    return list(zip(fpr.tolist(), tpr.tolist()))


def as_dict(obj) -> dict:
    return asdict(obj)
