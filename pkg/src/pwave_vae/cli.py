"""Command-line entry point.

Every subcommand resolves its settings as defaults < ``--config`` JSON file <
explicit flags, runs one pipeline stage and writes ``manifest.json`` next to
its outputs with the resolved settings, their hash, the seeds and SHA-256
digests of every input file. Exit codes: 0 success, 1 usage error, 2 data
error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("pwave_vae")

RECORD_SUFFIX = ".txt"
WINDOWS_FILE = "windows.pwspec"
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- logging ---------------------------------------------------------------


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps(
            {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        )


def _setup_logging(style: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if style == "json":
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("pwave_vae")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)
    root.propagate = False


# --- helpers ---------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, command: str, settings: dict, seeds: dict, inputs, outputs) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "tool": "pwave_vae",
        "version": __version__,
        "command": command,
        "settings": settings,
        "config_hash": config_hash(settings),
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in sorted(map(str, inputs))},
        "outputs": {Path(p).name: sha256_file(p) for p in sorted(map(str, outputs))},
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _record_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    files = sorted(d.glob("*" + RECORD_SUFFIX))
    if not files:
        raise DataError(f"{d}: no *{RECORD_SUFFIX} record files")
    return files


def _load_records(directory):
    from .signal_model import read_record

    files = _record_files(directory)
    return files, [read_record(f) for f in files]


def _windows_path(data) -> Path:
    p = Path(data)
    if p.is_dir():
        p = p / WINDOWS_FILE
    if not p.is_file():
        raise DataError(f"{p}: no spectrogram tensor file")
    return p


def _write_series(path, rows, header=("x", "y")) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])
    return Path(path)


def _dump_json(path, obj) -> Path:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return Path(path)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _resolve(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    settings = dict(defaults)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    missing = [k for k, v in settings.items() if v is _REQUIRED]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return settings


_REQUIRED = object()


# --- subcommands -----------------------------------------------------------


SYNTH_DEFAULTS = dict(
    n=200, seed=0, out=_REQUIRED, snr=[0.5, 4.0], snr_follows_distance=False, flatline_prob=0.0
)


def cmd_synth(args) -> int:
    from .experiments import SynthParams, make_synthetic_dataset
    from .signal_model import write_record

    s = _resolve(args, SYNTH_DEFAULTS)
    if s["n"] < 1:
        raise UsageError("--n must be >= 1")
    params = SynthParams(
        snr=tuple(s["snr"]), snr_follows_distance=bool(s["snr_follows_distance"]),
        flatline_prob=float(s["flatline_prob"]),
    )
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in make_synthetic_dataset(s["n"], seed=s["seed"], params=params):
        path = out / f"{rec.record_id}{RECORD_SUFFIX}"
        write_record(rec, path)
        written.append(path)
    write_manifest(out, "synth", s, {"seed": s["seed"]}, [], written)
    log.info("wrote %d records to %s", len(written), out)
    return 0


PREPROCESS_DEFAULTS = dict(
    input=_REQUIRED, out=_REQUIRED, target_secs=30.0, asw_win=50, asw_thresh=0.05, seed=0, band_emphasis=0.0
)


def cmd_preprocess(args) -> int:
    from .preprocess import augment_record, detect_artifacts, fit_noise_profile
    from .signal_model import RecordError, write_record

    s = _resolve(args, PREPROCESS_DEFAULTS)
    files, records = _load_records(s["input"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    written, skipped = [], {}
    for i, (path, rec) in enumerate(zip(files, records)):
        try:
            reports, profiles = [], []
            for ax in range(rec.samples.shape[0]):
                rep = detect_artifacts(rec, ax, s["asw_win"], s["asw_thresh"])
                a, b = rep.clean_pre_event
                reports.append(rep)
                profiles.append(fit_noise_profile(rec.samples[ax, a:b], rec.sampling_rate))
            seed = s["seed"] + i
            rows = [
                augment_record(rec, rep, profiles, s["target_secs"], seed, s["band_emphasis"]).samples[ax]
                for ax, rep in enumerate(reports)
            ]
            pad = len(rows[0]) - rec.length
            aug = rec.replace(
                samples=np.array(rows),
                p_arrival=rec.p_arrival + pad if rec.p_arrival is not None else None,
            )
        except (RecordError, ValueError) as exc:
            skipped[path.name] = str(exc)
            log.warning("skipping %s: %s", path.name, exc)
            continue
        target = out / path.name
        write_record(aug, target)
        side = _dump_json(
            out / (path.stem + ".json"),
            {
                "record_id": rec.record_id,
                "pad_samples": pad,
                "p_arrival": aug.p_arrival,
                "noise_seed": seed,
                "axes": [
                    {"axis": ax, "artifacts": rep.to_dict(), "noise_profile": prof.to_dict()}
                    for ax, (rep, prof) in enumerate(zip(reports, profiles))
                ],
            },
        )
        written += [target, side]
    settings = {**s, "skipped": skipped}
    write_manifest(out, "preprocess", settings, {"seed": s["seed"]}, files, written)
    log.info("augmented %d of %d records", len(written) // 2, len(files))
    if not written:
        raise DataError("no record could be preprocessed")
    return 0


SPECTROGRAM_DEFAULTS = dict(input=_REQUIRED, out=_REQUIRED, axes=[0], neg_stride_ms=500.0, dump_csv=None, dump_index=0)


def cmd_spectrogram(args) -> int:
    from .experiments import build_windows
    from .spectrogram import to_spectrograms, write_csv, write_tensor_file

    s = _resolve(args, SPECTROGRAM_DEFAULTS)
    files, records = _load_records(s["input"])
    if any(ax not in (0, 1, 2) for ax in s["axes"]):
        raise UsageError("--axes entries must be 0, 1 or 2")
    specs = to_spectrograms(build_windows(records, tuple(s["axes"]), s["neg_stride_ms"]))
    if not specs:
        raise DataError("no windows could be extracted")
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    written = [out / WINDOWS_FILE]
    write_tensor_file(specs, written[0])
    if s["dump_csv"]:
        if not 0 <= s["dump_index"] < len(specs):
            raise UsageError(f"--dump-index must lie in [0, {len(specs)})")
        write_csv(specs[s["dump_index"]], s["dump_csv"])
    write_manifest(out, "spectrogram", s, {}, files, written)
    log.info("wrote %d windows (%d positive)", len(specs), sum(w.label for w in specs))
    return 0


TRAIN_DEFAULTS = dict(
    data=_REQUIRED, out=_REQUIRED, family="basic", latent_dim=128, attn_depth=1, attn_heads=4,
    beta=1.0, epochs=100, batch_size=32, learning_rate=1e-3, seed=0, patience=10,
    split=[0.7, 0.15, 0.15], split_seed=0,
)


def cmd_train(args) -> int:
    from .models import ModelConfig
    from .signal_model import split_dataset
    from .spectrogram import read_tensor_file
    from .trainer import TrainParams, save_checkpoint, train

    s = _resolve(args, TRAIN_DEFAULTS)
    try:
        cfg = ModelConfig(s["family"], int(s["latent_dim"]), int(s["attn_depth"]), int(s["attn_heads"]), float(s["beta"]))
        hp = TrainParams(int(s["epochs"]), int(s["batch_size"]), float(s["learning_rate"]), int(s["seed"]), int(s["patience"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    src = _windows_path(s["data"])
    split = split_dataset(read_tensor_file(src), tuple(s["split"]), s["split_seed"])
    model = train(cfg, split, hp)

    ckpt = Path(s["out"])
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    meta = model.training_meta
    log_path = _dump_json(
        ckpt.with_name(ckpt.stem + ".log.json"),
        {"config": cfg.to_dict(), "train_params": hp.__dict__, **meta,
         "n_train": len(split.train), "n_eval": len(split.eval), "n_test": len(split.test)},
    )
    write_manifest(ckpt.parent, "train", s, {"seed": hp.seed, "split_seed": s["split_seed"]}, [src], [ckpt, log_path])
    if model.ok:
        log.info("trained %s: best epoch %s, eval total %.6g", cfg.family, meta["best_epoch"], meta["best_eval_total"])
    else:
        log.warning("training FAILED: %s", meta.get("diagnostic"))
    return 0


DETECT_DEFAULTS = dict(model=_REQUIRED, records=_REQUIRED, out=_REQUIRED, shift_ms=100.0, axis=0, plot_data=False)


def cmd_detect(args) -> int:
    from .detector import roc_curve, scan_record, summarize_traces
    from .trainer import load_checkpoint

    s = _resolve(args, DETECT_DEFAULTS)
    model = _load_model(s["model"], load_checkpoint)
    files, records = _load_records(s["records"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    traces, written = [], []
    for rec in records:
        tr = scan_record(model, rec, s["shift_ms"], axis=s["axis"])
        traces.append(tr)
        path = out / f"{rec.record_id}.csv"
        _write_series(
            path,
            zip(tr.window_starts.tolist(), tr.mae.tolist(), tr.ncc.tolist(), tr.labels.astype(int).tolist()),
            header=("start_index", "mae", "ncc", "label"),
        )
        written.append(path)
    summary = summarize_traces(traces)
    summary["per_record_auc"] = {t.record_id: t.auc() for t in traces}
    written.append(_dump_json(out / "summary.json", summary))
    if s["plot_data"] and summary["pooled_auc"] is not None:
        fpr, tpr = roc_curve(np.concatenate([t.ncc for t in traces]), np.concatenate([t.labels for t in traces]))
        written.append(_write_series(out / "plot_roc.csv", zip(fpr.tolist(), tpr.tolist()), ("fpr", "tpr")))
    write_manifest(out, "detect", s, {}, [s["model"], *files], written)
    log.info("pooled AUC %s over %d windows", summary["pooled_auc"], summary["n_windows"])
    return 0


GRID_DEFAULTS = dict(spec=_REQUIRED, data=_REQUIRED, out=_REQUIRED, workers=1, split=[0.7, 0.15, 0.15], split_seed=0, plot_data=False)


def cmd_grid(args) -> int:
    from .experiments import SweepSpec, run_grid
    from .signal_model import split_dataset
    from .spectrogram import read_tensor_file

    s = _resolve(args, GRID_DEFAULTS)
    try:
        spec = SweepSpec.from_dict(json.loads(Path(s["spec"]).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"bad sweep spec {s['spec']}: {exc}") from None
    src = _windows_path(s["data"])
    split = split_dataset(read_tensor_file(src), tuple(s["split"]), s["split_seed"])
    log.info("grid: %d configurations", spec.cardinality())
    results = run_grid(spec, split, workers=int(s["workers"]))

    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    cols = ["family", "latent_dim", "attn_depth", "attn_heads", "learning_rate", "seed", "status", "auc", "mae", "diagnostic"]
    rows_path = _write_series(out / "results.csv", ([r.get(c) for c in cols] for r in results.rows), cols)
    tables = _dump_json(
        out / "tables.json",
        {
            "cardinality": spec.cardinality(),
            "best_per_family": results.best_per_family(),
            "latent": {str(k): v for k, v in results.latent_table().items()},
            "depth_heads": {str(d): {str(h): v for h, v in row.items()} for d, row in results.depth_heads_table().items()},
        },
    )
    written = [rows_path, tables]
    if s["plot_data"]:
        pts = [(r["mae"], r["auc"], r["family"]) for r in results.rows if r["status"] == "OK" and r["auc"] is not None]
        written.append(_write_series(out / "plot_auc_vs_mae.csv", pts, ("mae", "auc", "family")))
    write_manifest(out, "grid", {**s, "sweep": spec.__dict__}, {"seeds": spec.seeds, "split_seed": s["split_seed"]}, [s["spec"], src], written)
    n_failed = sum(r["status"] != "OK" for r in results.rows)
    log.info("grid done: %d trials, %d failed", len(results.rows), n_failed)
    return 0


SHIFT_DEFAULTS = dict(model=_REQUIRED, records=_REQUIRED, out=_REQUIRED, max_shift=4.5, step_ms=100.0, axes=[0], neg_stride_ms=500.0, plot_data=False)


def cmd_shift_sweep(args) -> int:
    from .experiments import shift_sweep
    from .trainer import load_checkpoint

    s = _resolve(args, SHIFT_DEFAULTS)
    model = _load_model(s["model"], load_checkpoint)
    files, records = _load_records(s["records"])
    series = shift_sweep(model, records, s["max_shift"], s["step_ms"], tuple(s["axes"]), s["neg_stride_ms"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    written = [_write_series(out / "shift.csv", zip(series.shifts_s, series.auc, series.skipped), ("shift_s", "auc", "skipped"))]
    if s["plot_data"]:
        written.append(_write_series(out / "plot_auc_vs_shift.csv", zip(series.shifts_s, series.auc)))
    write_manifest(out, "shift-sweep", s, {}, [s["model"], *files], written)
    return 0


DISTANCE_DEFAULTS = dict(model=_REQUIRED, records=_REQUIRED, out=_REQUIRED, bins=[0.0, 40.0, 150.0], axes=[0], neg_stride_ms=500.0, plot_data=False)


def cmd_distance(args) -> int:
    from .experiments import distance_analysis
    from .trainer import load_checkpoint

    s = _resolve(args, DISTANCE_DEFAULTS)
    edges = list(s["bins"])
    if not edges or edges[-1] != math.inf:
        edges.append(math.inf)  # last bin is open-ended
    model = _load_model(s["model"], load_checkpoint)
    files, records = _load_records(s["records"])
    try:
        bins = distance_analysis(model, records, edges, tuple(s["axes"]), s["neg_stride_ms"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    written = [_write_series(out / "distance.csv", ((b.lo_km, b.hi_km, b.auc, b.n) for b in bins), ("lo_km", "hi_km", "auc", "n"))]
    if s["plot_data"]:
        mids = [(b.lo_km + b.hi_km) / 2 if math.isfinite(b.hi_km) else b.lo_km for b in bins]
        written.append(_write_series(out / "plot_auc_vs_distance.csv", zip(mids, (b.auc for b in bins))))
    write_manifest(out, "distance", {**s, "bins": [str(e) for e in edges]}, {}, [s["model"], *files], written)
    return 0


def _load_model(path, loader):
    try:
        return loader(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log", choices=("text", "json"), default="text", help="log line format on stderr")
    common.add_argument("--config", help="JSON file of settings; explicit flags take precedence")

    p = _Parser(prog="pwave-vae", description="P-wave detection with convolutional VAEs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    floats = lambda t: _floats(t)  # noqa: E731
    ints = lambda t: _ints(t)  # noqa: E731

    sp = add("synth", cmd_synth, "Write a synthetic record set.")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--snr", type=floats, help="lo,hi onset-to-noise ratio range")
    sp.add_argument("--snr-follows-distance", action="store_const", const=True, default=None)
    sp.add_argument("--flatline-prob", type=float)

    sp = add("preprocess", cmd_preprocess, "Flag flatlines and pad records with fitted synthetic noise.")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--out")
    sp.add_argument("--target-secs", type=float)
    sp.add_argument("--asw-win", type=int)
    sp.add_argument("--asw-thresh", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--band-emphasis", type=float)

    sp = add("spectrogram", cmd_spectrogram, "Convert records to a spectrogram tensor file.")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--out")
    sp.add_argument("--axes", type=ints)
    sp.add_argument("--neg-stride-ms", type=float)
    sp.add_argument("--dump-csv")
    sp.add_argument("--dump-index", type=int)

    sp = add("train", cmd_train, "Train one model and write a checkpoint.")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--family")
    sp.add_argument("--latent-dim", type=int)
    sp.add_argument("--attn-depth", type=int)
    sp.add_argument("--attn-heads", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--learning-rate", "--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--split", type=floats)
    sp.add_argument("--split-seed", type=int)

    sp = add("detect", cmd_detect, "Scan records with a trained model.")
    sp.add_argument("--model")
    sp.add_argument("--records")
    sp.add_argument("--out")
    sp.add_argument("--shift-ms", type=float)
    sp.add_argument("--axis", type=int)
    sp.add_argument("--plot-data", action="store_const", const=True, default=None)

    sp = add("grid", cmd_grid, "Run an architecture sweep.")
    sp.add_argument("--spec")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--split", type=floats)
    sp.add_argument("--split-seed", type=int)
    sp.add_argument("--plot-data", action="store_const", const=True, default=None)

    sp = add("shift-sweep", cmd_shift_sweep, "AUC against window misalignment.")
    sp.add_argument("--model")
    sp.add_argument("--records")
    sp.add_argument("--out")
    sp.add_argument("--max-shift", type=float)
    sp.add_argument("--step-ms", type=float)
    sp.add_argument("--axes", type=ints)
    sp.add_argument("--neg-stride-ms", type=float)
    sp.add_argument("--plot-data", action="store_const", const=True, default=None)

    sp = add("distance", cmd_distance, "AUC per epicentral-distance bin.")
    sp.add_argument("--model")
    sp.add_argument("--records")
    sp.add_argument("--out")
    sp.add_argument("--bins", type=floats, help="bin edges in km; an open last bin is appended")
    sp.add_argument("--axes", type=ints)
    sp.add_argument("--neg-stride-ms", type=float)
    sp.add_argument("--plot-data", action="store_const", const=True, default=None)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        _setup_logging(args.log)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
