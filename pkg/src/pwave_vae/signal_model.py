"""Accelerogram records, fixed-length signal windows and record-level splits.

Records are stored in a small column-oriented text format::

    # rate=100
    # p_arrival=1200
    # station=39.93,32.86
    # event=40.10,33.02
    0.0012 -0.0031 0.0007
    ...

One row per sample, one column per axis. Values are written with ``repr`` so
a read/write round trip is bit-exact.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SAMPLING_RATE = 100
WINDOW_LENGTH = 244  # 2.44 s at 100 Hz
PRE_P_SAMPLES = 100  # 1.00 s of pre-event context in a training window
N_AXES = 3


class RecordError(ValueError):
    """Raised when a record or window violates its invariants."""


def _check_coords(coords, what: str) -> tuple[float, float]:
    lat, lon = (float(c) for c in coords)
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise RecordError(f"{what} coordinates out of range: ({lat}, {lon})")
    return lat, lon


@dataclass(frozen=True)
class Record:
    """A 3-axis, 100 Hz accelerogram with an optional P-arrival annotation."""

    samples: np.ndarray  # shape (3, n)
    sampling_rate: int = SAMPLING_RATE
    p_arrival: Optional[int] = None
    station_coords: tuple[float, float] = (0.0, 0.0)
    event_coords: tuple[float, float] = (0.0, 0.0)
    record_id: str = ""

    def __post_init__(self):
        validate_record(self)

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sampling_rate

    def replace(self, **changes) -> "Record":
        kw = dict(
            samples=self.samples,
            sampling_rate=self.sampling_rate,
            p_arrival=self.p_arrival,
            station_coords=self.station_coords,
            event_coords=self.event_coords,
            record_id=self.record_id,
        )
        kw.update(changes)
        return Record(**kw)


def validate_record(raw) -> Record:
    """Check a candidate record and return it as a valid :class:`Record`.

    ``raw`` may be a ``Record`` (checked in place) or a mapping with the same
    field names. Axis data is converted to a read-only float64 array.
    """
    if isinstance(raw, Record):
        rec = raw
        fields = dict(
            samples=rec.samples,
            sampling_rate=rec.sampling_rate,
            p_arrival=rec.p_arrival,
            station_coords=rec.station_coords,
            event_coords=rec.event_coords,
            record_id=rec.record_id,
        )
    else:
        fields = dict(raw)

    axes = fields["samples"]
    lengths = [len(a) for a in axes]
    if len(lengths) != N_AXES:
        raise RecordError(f"expected {N_AXES} axes, got {len(lengths)}")
    if len(set(lengths)) != 1:
        raise RecordError(f"axis length mismatch: {lengths}")
    if lengths[0] == 0:
        raise RecordError("record is empty")
    samples = np.array([np.asarray(a, dtype=np.float64) for a in axes])
    samples.setflags(write=False)

    rate = fields.get("sampling_rate", SAMPLING_RATE)
    if rate != SAMPLING_RATE:
        raise RecordError(f"sampling rate must be {SAMPLING_RATE} Hz, got {rate}")

    p = fields.get("p_arrival")
    if p is not None:
        if int(p) != p:
            raise RecordError(f"p_arrival must be an integer index, got {p}")
        p = int(p)
        if not 0 <= p < lengths[0]:
            raise RecordError(f"p_arrival {p} outside [0, {lengths[0]})")

    station = _check_coords(fields.get("station_coords", (0.0, 0.0)), "station")
    event = _check_coords(fields.get("event_coords", (0.0, 0.0)), "event")

    if isinstance(raw, Record):
        # frozen dataclass: normalise fields in place
        object.__setattr__(raw, "samples", samples)
        object.__setattr__(raw, "p_arrival", p)
        object.__setattr__(raw, "station_coords", station)
        object.__setattr__(raw, "event_coords", event)
        return raw
    return Record(
        samples=samples,
        sampling_rate=int(rate),
        p_arrival=p,
        station_coords=station,
        event_coords=event,
        record_id=str(fields.get("record_id", "")),
    )


@dataclass(frozen=True)
class SignalWindow:
    values: np.ndarray  # WINDOW_LENGTH samples from one axis
    start_index: int
    label: bool
    record_id: str = ""
    axis: int = 0

    def __post_init__(self):
        if len(self.values) != WINDOW_LENGTH:
            raise RecordError(
                f"window must have {WINDOW_LENGTH} samples, got {len(self.values)}"
            )


def window_label(
    start_index: int,
    p_arrival: Optional[int],
    tolerance: int = 0,
    containment: bool = False,
) -> bool:
    """Label a window starting at ``start_index``.

    By default a window is P-labelled only when the arrival sits exactly
    ``PRE_P_SAMPLES`` into it (within ``tolerance``). With ``containment``
    any arrival inside the window counts.
    """
    if p_arrival is None:
        return False
    if containment:
        return start_index <= p_arrival < start_index + WINDOW_LENGTH
    return abs(p_arrival - (start_index + PRE_P_SAMPLES)) <= tolerance


def _stride_samples(shift_ms: float) -> int:
    period_ms = 1000.0 / SAMPLING_RATE
    stride = shift_ms / period_ms
    if shift_ms <= 0 or not math.isclose(stride, round(stride)):
        raise RecordError(f"shift must be a positive multiple of {period_ms} ms")
    return int(round(stride))


def window_count(n: int, stride: int) -> int:
    if n < WINDOW_LENGTH:
        return 0
    return (n - WINDOW_LENGTH) // stride + 1


def slice_windows(
    record: Record,
    shift_ms: float = 100,
    axis: int = 0,
    tolerance: int = 0,
    containment: bool = False,
) -> list[SignalWindow]:
    """Cut a record into 244-sample windows every ``shift_ms`` milliseconds.

    Trailing partial windows are dropped.
    """
    stride = _stride_samples(shift_ms)
    if record.length < WINDOW_LENGTH:
        raise RecordError(
            f"record {record.record_id!r} shorter than one window "
            f"({record.length} < {WINDOW_LENGTH})"
        )
    x = record.samples[axis]
    out = []
    for k in range(window_count(record.length, stride)):
        start = k * stride
        out.append(
            SignalWindow(
                values=x[start : start + WINDOW_LENGTH],
                start_index=start,
                label=window_label(start, record.p_arrival, tolerance, containment),
                record_id=record.record_id,
                axis=axis,
            )
        )
    return out


def extract_window(record: Record, start: int, axis: int = 0, label=None) -> SignalWindow:
    """Single window at an arbitrary start offset (no stride constraint)."""
    if start < 0 or start + WINDOW_LENGTH > record.length:
        raise RecordError(f"window at {start} falls outside record bounds")
    if label is None:
        label = window_label(start, record.p_arrival)
    return SignalWindow(
        values=record.samples[axis, start : start + WINDOW_LENGTH],
        start_index=start,
        label=bool(label),
        record_id=record.record_id,
        axis=axis,
    )


@dataclass(frozen=True)
class DatasetSplit:
    train: list = field(default_factory=list)
    eval: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def record_ids(self, part: str) -> set:
        return {w.record_id for w in getattr(self, part)}


def split_dataset(
    windows: Sequence[SignalWindow],
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> DatasetSplit:
    """Partition windows by parent record into train/eval/test.

    Train and eval keep P-labelled windows only; test keeps everything.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative fractions summing to 1: {ratios}")
    if not any(w.label for w in windows):
        raise RecordError("no P-labelled windows to split")

    ids = sorted({w.record_id for w in windows})
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    n_train = int(round(ratios[0] * n))
    n_eval = int(round(ratios[1] * n))
    n_eval = min(n_eval, n - n_train)
    train_ids = set(order[:n_train])
    eval_ids = set(order[n_train : n_train + n_eval])
    test_ids = set(order[n_train + n_eval :])

    return DatasetSplit(
        train=[w for w in windows if w.record_id in train_ids and w.label],
        eval=[w for w in windows if w.record_id in eval_ids and w.label],
        test=[w for w in windows if w.record_id in test_ids],
    )


# --- text format -----------------------------------------------------------


def write_record(record: Record, path) -> None:
    lines = [f"# rate={record.sampling_rate}"]
    if record.record_id:
        lines.append(f"# id={record.record_id}")
    if record.p_arrival is not None:
        lines.append(f"# p_arrival={record.p_arrival}")
    lines.append("# station={!r},{!r}".format(*record.station_coords))
    lines.append("# event={!r},{!r}".format(*record.event_coords))
    cols = record.samples.T
    lines.extend(" ".join(repr(float(v)) for v in row) for row in cols)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_record(path) -> Record:
    header = {}
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
            else:
                rows.append([float(v) for v in line.split()])
    if not rows:
        raise RecordError(f"{path}: no samples")
    if any(len(r) != N_AXES for r in rows):
        raise RecordError(f"{path}: every row needs {N_AXES} columns")

    def coords(key):
        if key not in header:
            return (0.0, 0.0)
        lat, lon = header[key].split(",")
        return (float(lat), float(lon))

    data = np.array(rows, dtype=np.float64).T
    rid = header.get("id") or os.path.splitext(os.path.basename(str(path)))[0]
    return validate_record(
        dict(
            samples=data,
            sampling_rate=int(float(header.get("rate", SAMPLING_RATE))),
            p_arrival=int(header["p_arrival"]) if "p_arrival" in header else None,
            station_coords=coords("station"),
            event_coords=coords("event"),
            record_id=rid,
        )
    )
