import json
import math
import subprocess
import sys

import pytest

from pwave_vae.cli import run
from pwave_vae.signal_model import read_record
from pwave_vae.spectrogram import read_tensor_file


def pipeline(root, seed=1):
    """synth -> preprocess -> spectrogram -> train (2 epochs) -> detect."""
    d, p, s, m, o = (root / x for x in ("d", "p", "s", "m", "o"))
    steps = [
        ["synth", "--n", "6", "--seed", str(seed), "--out", str(d), "--flatline-prob", "0.5"],
        ["preprocess", "--in", str(d), "--out", str(p), "--seed", str(seed)],
        ["spectrogram", "--in", str(p), "--out", str(s), "--neg-stride-ms", "1000"],
        ["train", "--data", str(s), "--out", str(m / "model.ckpt"), "--epochs", "2",
         "--latent-dim", "32", "--beta", "1e-3", "--seed", str(seed), "--split", "0.5,0.25,0.25"],
        ["detect", "--model", str(m / "model.ckpt"), "--records", str(p), "--out", str(o)],
    ]
    for argv in steps:
        assert run(argv) == 0, argv
    return d, p, s, m, o


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("a"))


class TestPipeline:
    def test_auc_and_manifests(self, chain):
        d, p, s, m, o = chain
        summary = json.loads((o / "summary.json").read_text())
        assert 0 < summary["pooled_auc"] <= 1
        assert summary["n_records"] == 6
        for directory in (d, p, s, m, o):
            man = json.loads((directory / "manifest.json").read_text())
            assert {"tool", "version", "config_hash", "seeds", "inputs", "settings"} <= set(man)
        # each stage names the previous stage's outputs as its inputs
        synth_out = json.loads((d / "manifest.json").read_text())["outputs"]
        pre_in = json.loads((p / "manifest.json").read_text())["inputs"]
        assert sorted(synth_out.values()) == sorted(pre_in.values())

    def test_deterministic(self, chain, tmp_path):
        *_, m, o = chain
        *_, m2, o2 = pipeline(tmp_path)
        assert (m / "model.ckpt").read_bytes() == (m2 / "model.ckpt").read_bytes()
        assert (o / "summary.json").read_text() == (o2 / "summary.json").read_text()

    def test_preprocess_outputs(self, chain):
        d, p, *_ = chain
        for f in sorted(d.glob("*.txt")):
            raw, aug = read_record(f), read_record(p / f.name)
            assert aug.length == 3000
            side = json.loads((p / (f.stem + ".json")).read_text())
            assert side["p_arrival"] == aug.p_arrival == raw.p_arrival + side["pad_samples"]
            assert len(side["axes"]) == 3
            assert {"hurst", "dominant_period", "amplitude_scale"} <= set(side["axes"][0]["noise_profile"])

    def test_detect_csv(self, chain):
        *_, o = chain
        rows = (o / "syn0001_00000.csv").read_text().splitlines()
        assert rows[0] == "start_index,mae,ncc,label"
        assert len(rows) - 1 == 276

    def test_train_log(self, chain):
        *_, m, _ = chain
        log = json.loads((m / "model.log.json").read_text())
        assert log["status"] == "OK"
        assert len(log["history"]) == 3 and "wall_time_s" in log


class TestUsage:
    def test_synth_five(self, tmp_path):
        assert run(["synth", "--n", "5", "--seed", "1", "--out", str(tmp_path / "d")]) == 0
        assert len(list((tmp_path / "d").glob("*.txt"))) == 5
        assert (tmp_path / "d" / "manifest.json").exists()

    def test_missing_flag(self, capsys):
        assert run(["synth", "--n", "5"]) == 1
        assert "--out" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand(self):
        assert run([]) == 1

    def test_bad_value(self):
        assert run(["synth", "--n", "five", "--out", "x"]) == 1

    def test_data_error(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run(["spectrogram", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "s")]) == 2
        (tmp_path / "bad").mkdir()
        (tmp_path / "bad" / "x.txt").write_text("# rate=100\n1 2\n")
        assert run(["spectrogram", "--in", str(tmp_path / "bad"), "--out", str(tmp_path / "s")]) == 2

    def test_invalid_model_setting_is_usage(self, chain, tmp_path):
        _, _, s, *_ = chain
        argv = ["train", "--data", str(s), "--out", str(tmp_path / "m.ckpt"), "--family", "attention", "--attn-heads", "5"]
        assert run(argv) == 1


class TestConfigPrecedence:
    def test_flags_beat_file_beat_defaults(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n": 3, "seed": 4, "out": str(tmp_path / "from_file")}))
        assert run(["synth", "--config", str(cfg), "--n", "2"]) == 0
        man = json.loads((tmp_path / "from_file" / "manifest.json").read_text())
        assert man["settings"]["n"] == 2  # flag
        assert man["settings"]["seed"] == 4  # file
        assert man["settings"]["snr"] == [0.5, 4.0]  # default
        assert len(list((tmp_path / "from_file").glob("*.txt"))) == 2

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nn": 3}))
        assert run(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1

    def test_config_hash_tracks_settings(self, tmp_path):
        run(["synth", "--n", "1", "--seed", "0", "--out", str(tmp_path / "a")])
        run(["synth", "--n", "1", "--seed", "1", "--out", str(tmp_path / "b")])
        ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["config_hash"]
        hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["config_hash"]
        assert ha != hb


class TestAnalyses:
    def test_spectrogram_dump_csv(self, chain, tmp_path):
        _, p, *_ = chain
        out = tmp_path / "one.csv"
        assert run(["spectrogram", "--in", str(p), "--out", str(tmp_path / "s"), "--dump-csv", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert len(rows) == 32 and len(rows[0].split(",")) == 92
        assert len(read_tensor_file(tmp_path / "s" / "windows.pwspec")) > 0

    def test_shift_sweep(self, chain, tmp_path):
        _, p, _, m, _ = chain
        out = tmp_path / "sh"
        assert run(["shift-sweep", "--model", str(m / "model.ckpt"), "--records", str(p), "--out", str(out), "--plot-data"]) == 0
        assert len((out / "shift.csv").read_text().splitlines()) == 47
        assert (out / "plot_auc_vs_shift.csv").read_text().startswith("x,y")

    def test_distance_appends_open_bin(self, chain, tmp_path):
        _, p, _, m, _ = chain
        out = tmp_path / "dist"
        assert run(["distance", "--model", str(m / "model.ckpt"), "--records", str(p), "--out", str(out), "--bins", "0,40,150"]) == 0
        rows = (out / "distance.csv").read_text().splitlines()[1:]
        assert len(rows) == 3
        assert float(rows[-1].split(",")[1]) == math.inf
        assert sum(int(r.split(",")[3]) for r in rows) == 6

    def test_grid_with_failing_cell(self, chain, tmp_path):
        _, _, s, *_ = chain
        spec = tmp_path / "sweep.json"
        spec.write_text(json.dumps({"families": ["basic"], "latent_dims": [32], "learning_rates": [1e-3, 1e6],
                                    "epochs": 1, "beta": 1e-3}))
        out = tmp_path / "g"
        assert run(["grid", "--spec", str(spec), "--data", str(s), "--out", str(out), "--split", "0.5,0.25,0.25", "--plot-data"]) == 0
        rows = (out / "results.csv").read_text().splitlines()
        assert len(rows) == 3
        assert sorted(r.split(",")[6] for r in rows[1:]) == ["FAILED", "OK"]
        assert json.loads((out / "tables.json").read_text())["cardinality"] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pwave_vae", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
