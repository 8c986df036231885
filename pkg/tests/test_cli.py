import json
import subprocess
import sys

import numpy as np
import pytest

from spectracc import io
from spectracc.cli import main

SMALL = ["--n-scenes", "6", "--n-illuminants", "2", "--size", "32", "--ms-factor", "8"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Scenes -> dataset -> misaligned dataset -> short KAN training, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"train": {"lr": 0.01, "max_epochs": 2, "pixels_per_image": 64,
                                         "val_pixels_per_image": 64}}))
    assert main(["make-synthetic-scenes", "--seed", "3", "--out", str(root / "scenes")] + SMALL) == 0
    assert main(["render-dataset", "--scenes", str(root / "scenes" / "scenes.json"), "--out", str(root / "ds"),
                 "--n-illuminants", "2", "--ms-factor", "8"]) == 0
    assert main(["misalign-dataset", "--manifest", str(root / "ds" / "manifest.json"), "--out", str(root / "mis")]) == 0
    assert main(["train-kan", "--manifest", str(root / "ds" / "manifest.json"), "--config", str(cfg),
                 "--out", str(root / "kan")]) == 0
    return root


def test_files_written(workspace):
    assert len(io.read_json(workspace / "scenes" / "scenes.json")["scenes"]) == 6
    manifest = io.read_json(workspace / "ds" / "manifest.json")
    assert len(manifest["triplets"]) == 12 and set(manifest["splits"]) == {"train", "val", "test", "seed"}
    meta = io.read_json(workspace / "mis" / manifest["triplets"][0]["meta"])
    assert len(meta["homography"]) == 9 and meta["homography"] != np.eye(3).ravel().tolist()
    log = io.read_json(workspace / "kan" / "train_log.json")
    assert log["config"]["lr"] == 0.01 and len(log["log"]) == 2


def test_train_deterministic(workspace, tmp_path):
    cfg = workspace / "cfg.json"
    assert main(["train-kan", "--manifest", str(workspace / "ds" / "manifest.json"), "--config", str(cfg),
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.kanc").read_bytes() == (workspace / "kan" / "model.kanc").read_bytes()


def test_evaluate(workspace, tmp_path, capsys):
    args = ["evaluate", "--manifest", str(workspace / "ds" / "manifest.json"), "--methods", "gw,oracle",
            "--ckpt", str(workspace / "kan" / "model.kanc"), "--out", str(tmp_path)]
    assert main(args) == 0
    text = capsys.readouterr().out
    assert "traditional-gw" in text and "oracle" in text and "kan[model]" in text
    first = (tmp_path / "evaluation.json").read_bytes()
    assert main(args + ["--threads", "2"]) == 0
    assert (tmp_path / "evaluation.json").read_bytes() == first


def test_ablations(workspace, tmp_path):
    assert main(["ablate-exposure", "--manifest", str(workspace / "ds" / "manifest.json"), "--methods", "gw",
                 "--alphas", "1,0.5", "--out", str(tmp_path / "exp")]) == 0
    row = io.read_json(tmp_path / "exp" / "exposure_ablation.json")["table"]["traditional-gw"]
    assert abs(row["1.0"] - row["0.5"]) < 1e-9
    assert main(["ablate-misalignment", "--manifest", str(workspace / "ds" / "manifest.json"),
                 "--misaligned", str(workspace / "mis" / "manifest.json"), "--ckpt",
                 str(workspace / "kan" / "model.kanc"), "--config", str(workspace / "cfg.json"),
                 "--out", str(tmp_path / "mis")]) == 0
    res = io.read_json(tmp_path / "mis" / "misalignment.json")
    assert set(res["changed_groups"]) <= {"ms_encoder"}
    assert (tmp_path / "mis" / "finetuned.kanc").exists()


def test_estimate_correct_export(workspace, tmp_path):
    entry = io.read_json(workspace / "ds" / "manifest.json")["triplets"][0]
    rgb = workspace / "ds" / entry["rgb"]
    assert main(["estimate-illuminant", "--input", str(rgb), "--estimator", "sog", "--out", str(tmp_path)]) == 0
    est = io.read_json(tmp_path / "illuminant.json")
    assert est["estimator"]["p"] == 4.0 and abs(np.linalg.norm(est["rgb"]) - 1) < 1e-12
    assert main(["correct", "--input", str(rgb), "--profile", str(workspace / "ds" / "camera.json"),
                 "--out", str(tmp_path / "trad")]) == 0
    assert io.load_image(tmp_path / "trad" / "corrected.mci").color_space == "xyz"
    assert main(["correct", "--mode", "kan", "--input", str(rgb), "--ms", str(workspace / "ds" / entry["ms"]),
                 "--ckpt", str(workspace / "kan" / "model.kanc"), "--out", str(tmp_path / "kan")]) == 0
    assert main(["export-srgb", "--input", str(tmp_path / "kan" / "corrected.mci"),
                 "--out", str(tmp_path / "x.png")]) == 0
    assert (tmp_path / "x.png").stat().st_size > 0


@pytest.mark.parametrize("argv, code", [
    (["evaluate", "--manifest", "/nonexistent/manifest.json"], 3),
    (["correct", "--input", "/nonexistent.mci", "--profile", "p.json"], 3),
    (["render-dataset", "--size", "30", "--ms-factor", "8"], 2),
    (["render-dataset", "--config", "/nonexistent.json"], 2),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == code


def test_exit_code_kan_without_ckpt(workspace, tmp_path):
    rgb = workspace / "ds" / io.read_json(workspace / "ds" / "manifest.json")["triplets"][0]["rgb"]
    assert main(["correct", "--mode", "kan", "--input", str(rgb), "--ms", str(rgb), "--out", str(tmp_path)]) == 2


def test_bad_flag_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate"])
    assert exc.value.code == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "spectracc", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "render-dataset" in out.stdout
