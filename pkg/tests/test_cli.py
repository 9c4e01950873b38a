from __future__ import annotations

import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import small_model
from kigan import tensor as T
from kigan.cli import main
from kigan.config import TrainConfig
from kigan.data import load_windows
from kigan.evaluation import evaluate
from kigan.manifest import RunManifest, file_digest
from kigan.training import TrainLog, checkpoint_load


def scenario(tmp_path, **kw):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"duration_s": 60, "agents_per_approach": 5, **kw}))
    return path


def train_config(tmp_path, **kw):
    cfg = TrainConfig(batch_size=16, epochs=2, k=2, eval_k=2, model=small_model())
    d = cfg.to_dict()
    d.update(kw)
    path = tmp_path / "train.json"
    path.write_text(json.dumps(d))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--config", str(scenario(root)), "--seed", "5", "--out", str(root / "data")]) == 0
    return root / "data"


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = train_config(root)
    assert main(["train", str(dataset), "--config", str(cfg), "--out", str(root / "out")]) == 0
    return root / "out", cfg


def test_gen_data_writes_csvs_and_manifest(dataset):
    assert sorted(p.name for p in dataset.iterdir()) == ["manifest.json", "signals.csv", "tracks.csv"]
    m = RunManifest.read(dataset / "manifest.json")
    assert m.command == "gen-data" and m.seed == 5
    assert m.outputs[str(dataset / "tracks.csv")] == file_digest(dataset / "tracks.csv")
    assert m.code_version


def test_gen_data_same_seed_same_digests(dataset, tmp_path):
    assert main(["gen-data", "--config", str(scenario(tmp_path)), "--seed", "5", "--out", str(tmp_path / "d")]) == 0
    for name in ("tracks.csv", "signals.csv"):
        assert file_digest(tmp_path / "d" / name) == file_digest(dataset / name)


def test_gen_data_invalid_config_leaves_no_files(tmp_path):
    out = tmp_path / "never"
    assert main(["gen-data", "--config", str(scenario(tmp_path, green_s=-5)), "--out", str(out)]) == 1
    assert not out.exists()


def test_train_writes_checkpoint_and_log(trained):
    out, _ = trained
    log = TrainLog.from_csv((out / "trainlog.csv").read_text())
    assert [r.epoch for r in log.records] == [1, 2]
    assert (out / "checkpoint.kigan").is_file()
    m = RunManifest.read(out / "manifest.json")
    assert m.command == "train" and m.config["epochs"] == 2
    assert m.inputs and all(len(d) == 64 for d in m.inputs.values())


def test_train_pooling_flag_is_echoed(dataset, tmp_path):
    argv = ["train", str(dataset), "--config", str(train_config(tmp_path, epochs=1)), "--pooling", "hidden",
            "--out", str(tmp_path / "o")]
    assert main(argv) == 0
    m = RunManifest.read(tmp_path / "o" / "manifest.json")
    assert m.config["model"]["pooling"] == "hidden" and m.extra["pooling"] == "hidden"


def test_flags_override_file(dataset, tmp_path):
    argv = ["train", str(dataset), "--config", str(train_config(tmp_path, epochs=3)), "--epochs", "1",
            "--mask-traffic", "--seed", "9", "--out", str(tmp_path / "o")]
    assert main(argv) == 0
    m = RunManifest.read(tmp_path / "o" / "manifest.json")
    assert (m.config["epochs"], m.config["seed"], m.config["model"]["mask_traffic"]) == (1, 9, True)


def test_train_is_reproducible_from_manifest(trained, tmp_path):
    out, _ = trained
    m = RunManifest.read(out / "manifest.json")
    argv = list(m.argv)
    argv[argv.index("--out") + 1] = str(tmp_path / "again")
    assert main(argv) == 0
    assert file_digest(tmp_path / "again" / "checkpoint.kigan") == file_digest(out / "checkpoint.kigan")


def test_resume_continues_epoch_numbering(dataset, trained, tmp_path):
    out, cfg = trained
    first = tmp_path / "first"
    assert main(["train", str(dataset), "--config", str(cfg), "--epochs", "1", "--out", str(first)]) == 0
    resumed = tmp_path / "resumed"
    argv = ["train", str(dataset), "--resume", str(first / "checkpoint.kigan"), "--epochs", "2", "--out", str(resumed)]
    assert main(argv) == 0
    merged = TrainLog.from_csv((resumed / "trainlog.csv").read_text())
    straight = TrainLog.from_csv((out / "trainlog.csv").read_text())
    assert [r.epoch for r in merged.records] == [1, 2]
    assert merged.comparable() == straight.comparable()
    assert file_digest(resumed / "checkpoint.kigan") == file_digest(out / "checkpoint.kigan")


def test_eval_both_horizons_matches_library(dataset, trained, tmp_path):
    out, _ = trained
    ck = out / "checkpoint.kigan"
    assert main(["eval", str(ck), str(dataset), "--horizons", "both", "--k", "3", "--out", str(tmp_path / "e")]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "e" / "metrics.csv").read_text())))
    assert [r["pred_len"] for r in rows] == ["12", "18"]
    trainer = checkpoint_load(ck)
    for row in rows:
        h = int(row["pred_len"])
        windows = load_windows(dataset, pred_len=h)
        ref = evaluate(trainer.generator, windows, 3, trainer.config.eval_seed)
        assert abs(float(row["ade"]) - ref.ade) <= 1e-12 and abs(float(row["fde"]) - ref.fde) <= 1e-12
    m = RunManifest.read(tmp_path / "e" / "manifest.json")
    assert m.extra["k"] == 3 and m.extra["pred_len"] == [12, 18]


def test_eval_records_k_in_manifest(dataset, trained, tmp_path):
    out, _ = trained
    for k in (1, 12):
        d = tmp_path / f"k{k}"
        assert main(["eval", str(out / "checkpoint.kigan"), str(dataset), "--k", str(k), "--out", str(d)]) == 0
        assert RunManifest.read(d / "manifest.json").extra["k"] == k
        assert json.loads((d / "metrics_12.json").read_text())["k"] == k


def test_predict_writes_per_window_csvs(dataset, trained, tmp_path):
    out, _ = trained
    assert main(["predict", str(out / "checkpoint.kigan"), str(dataset), "--k", "2", "--out", str(tmp_path / "p")]) == 0
    files = sorted((tmp_path / "p" / "predictions").iterdir())
    assert files
    header = files[0].read_text().splitlines()[0]
    assert header == "agent_id,step,x_true,y_true,x_pred,y_pred"


def test_ablate_tables(dataset, tmp_path):
    argv = ["ablate", str(dataset), "--config", str(train_config(tmp_path, epochs=1)), "--out", str(tmp_path / "a")]
    assert main(argv) == 0
    enc = list(csv.reader(io.StringIO((tmp_path / "a" / "ablation_encoders.csv").read_text(encoding="utf-8"))))
    pool = list(csv.reader(io.StringIO((tmp_path / "a" / "ablation_pooling.csv").read_text(encoding="utf-8"))))
    assert enc[0] == ["trajectory", "motion", "physical", "traffic", "ade_12", "fde_12"]
    assert [r[1:4] for r in enc[1:]] == [["yes", "yes", "no"], ["yes", "no", "yes"], ["no", "yes", "yes"],
                                         ["yes", "yes", "yes"]]
    assert [r[0] for r in pool[1:]] == ["social", "hidden", "vap"]
    for cell in [r[4] for r in enc[1:4]] + [r[1] for r in pool[1:3]]:
        assert ("(↑ " in cell or "(↓ " in cell) and cell.endswith(" %)")
    assert "(" not in enc[4][4] and "(" not in pool[3][1]


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path / "g")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(line.startswith("PASS ") for line in lines)
    assert any("generator+variety" in line for line in lines)


def test_gradcheck_failure_exits_numeric(monkeypatch, capsys):
    def broken(x, axis=-1):
        y = np.exp(x.data) / np.exp(x.data).sum(axis=axis, keepdims=True)
        return T._emit("softmax", y, (x,), lambda g: (2.0 * g,))

    monkeypatch.setattr(T, "softmax", broken)
    assert main(["gradcheck"]) == 3
    out = capsys.readouterr()
    assert "FAIL softmax" in out.out and "softmax" in out.err


def test_exit_codes(tmp_path, monkeypatch):
    assert main([]) == 1
    assert main(["train", "x", "--pooling", "mean", "--out", str(tmp_path)]) == 1
    assert main(["train", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("KIGAN_THREADS", "zero")
    assert main(["gradcheck"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kigan", "gen-data", "--seed", "1", "--out", str(tmp_path / "d"),
                           "--config", str(scenario(tmp_path, duration_s=10))], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "kigan", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1
