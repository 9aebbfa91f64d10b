import json
import subprocess
import sys

import pytest

from coattseg.cli import main

FAST_CONFIG = {"channels": 4, "hidden_channels": 4, "embed_dim": 6, "iterations": 20, "episodes_per_iter": 2}


def write_labels(path, n):
    path.write_text("".join(f"label{i:02d}\n" for i in range(n)), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, ckpt, cfg = root / "data", root / "ckpt", root / "cfg.json"
    cfg.write_text(json.dumps(FAST_CONFIG), encoding="utf-8")
    assert main(["gen-synth", "--classes", "4", "--per-class", "4", "--seed", "2", "--out", str(data)]) == 0
    argv = ["train", "--fold", "1", "--scheme", "custom", "--folds", "2", "--data", str(data),
            "--config", str(cfg), "--seed", "3", "--out", str(ckpt)]
    assert main(argv) == 0
    return root


def test_split_folds_vos(tmp_path, capsys):
    labels = write_labels(tmp_path / "labels65.txt", 65)
    out = tmp_path / "folds.json"
    assert main(["split-folds", "--scheme", "vos", "--classes", str(labels), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["folds"]) == 5
    assert all(len(f["test_classes"]) == 13 for f in doc["folds"])


def test_split_folds_shipped_pascal(tmp_path):
    out = tmp_path / "folds.json"
    assert main(["split-folds", "--scheme", "pascal", "--out", str(out)]) == 0
    assert [len(f["test_classes"]) for f in json.loads(out.read_text())["folds"]] == [5] * 4


def test_split_folds_wrong_count(tmp_path, capsys):
    labels = write_labels(tmp_path / "labels64.txt", 64)
    out = tmp_path / "folds.json"
    assert main(["split-folds", "--scheme", "pascal", "--classes", str(labels), "--out", str(out)]) == 1
    assert "20" in capsys.readouterr().err
    assert not out.exists()


def test_gradcheck(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    line = capsys.readouterr().out
    assert line.startswith("max relative error")
    assert float(line.split()[3]) <= 1e-4


def test_gradcheck_bad_dims(capsys):
    assert main(["gradcheck", "--dims", "8,x,6"]) == 1


def test_unknown_flag(capsys):
    assert main(["gradcheck", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1


def test_unreadable_input(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert main(["split-folds", "--scheme", "vos", "--classes", str(missing), "--out", str(tmp_path / "f.json")]) == 2


def test_corrupt_checkpoint(tmp_path, trained):
    (tmp_path / "checkpoint.json").write_text("{not json", encoding="utf-8")
    argv = ["eval", "--fold", "0", "--ckpt", str(tmp_path), "--report", str(tmp_path / "r.json")]
    assert main(argv) == 2


def test_train_records_losses(trained):
    meta = json.loads((trained / "ckpt" / "checkpoint.json").read_text())
    assert len(meta["losses"]) == FAST_CONFIG["iterations"]
    assert meta["fold_id"] == 1 and meta["config"]["seed"] == 3


def test_eval_report_shape_and_idempotence(trained):
    reports = []
    for name in ("a.json", "b.json"):
        argv = ["eval", "--fold", "1", "--ckpt", str(trained / "ckpt"), "--runs", "5",
                "--episodes", "10", "--seed", "7", "--report", str(trained / name)]
        assert main(argv) == 0
        reports.append((trained / name).read_bytes())
    assert reports[0] == reports[1]
    doc = json.loads(reports[0])
    assert len(doc["runs"]) == 5
    assert doc["summary"]["runs"] == 5
    assert {"mean", "stddev"} <= doc["summary"]["mean_iou"].keys()
    assert len({r["run_seed"] for r in doc["runs"]}) == 5


def test_eval_fold_out_of_range(trained):
    argv = ["eval", "--fold", "9", "--ckpt", str(trained / "ckpt"), "--report", str(trained / "x.json")]
    assert main(argv) == 1
    assert not (trained / "x.json").exists()


def test_render_from_manifest_line(trained):
    line = (trained / "data" / "manifest.jsonl").read_text().splitlines()[-1]
    out = trained / "panel.pgm"
    assert main(["render", "--episode", line, "--ckpt", str(trained / "ckpt"), "--out", str(out)]) == 0
    raw = out.read_bytes()
    assert raw.startswith(b"P5")
    # three 16-pixel panels and two separators, scaled by 4
    assert b"\n%d %d\n" % ((3 * 16 + 2) * 4, 16 * 4) in raw


def test_render_bad_episode(trained):
    argv = ["render", "--episode", "{broken", "--ckpt", str(trained / "ckpt"), "--out", str(trained / "p.pgm")]
    assert main(argv) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "coattseg", "gradcheck", "--dims", "4,4,3"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "max relative error" in proc.stdout
