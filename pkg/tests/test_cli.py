import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from facereenact.cli import main
from facereenact.io import load_dataset, read_fit, read_nmfc_sequence, write_png_sequence


def digest(root):
    """Hash of every file under ``root`` keyed by relative path."""
    root = Path(root)
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run_pipeline(work, seed=0):
    work = Path(work)
    c = str(work / "corpus")
    steps = [
        ["synth-data", "--out", c, "--people", "3", "--frames", "14", "--size", "32",
         "--n-id", "8", "--n-exp", "6"],
        ["fit", "--model", f"{c}/model.fmm", "--landmarks", f"{c}/person_000/landmarks.json",
         "--out", str(work / "fit0.json")],
        ["fit", "--model", f"{c}/model.fmm", "--landmarks", f"{c}/person_001/landmarks.json",
         "--out", str(work / "fit1.json")],
        ["nmfc", "--model", f"{c}/model.fmm", "--fit", str(work / "fit0.json"), "--size", "32",
         "--out", str(work / "nmfc0"), "--preview"],
        ["reenact", "--model", f"{c}/model.fmm", "--source-fit", str(work / "fit0.json"),
         "--target-fit", str(work / "fit1.json"), "--size", "32", "--out", str(work / "re")],
        ["train-init", "--data", c, "--out", str(work / "init.ckpt"), "--steps", "2",
         "--log", str(work / "init.csv")],
        ["finetune", "--checkpoint", str(work / "init.ckpt"), "--data", f"{c}/person_002",
         "--out", str(work / "person.ckpt"), "--steps", "2", "--test-len", "4",
         "--log", str(work / "ft.csv")],
        ["render", "--checkpoint", str(work / "person.ckpt"), "--nmfc", f"{c}/person_002/nmfc",
         "--out", str(work / "render")],
        ["metrics", "--fake", str(work / "render/frames"), "--real", f"{c}/person_002/frames",
         "--gt-masks", f"{c}/person_002/masks", "--pred-masks", str(work / "render/masks"),
         "--out", str(work / "report.json")],
    ]
    for argv in steps:
        assert main(["--seed", str(seed)] + argv) == 0, argv


def test_pipeline_end_to_end_and_reproducible(tmp_path):
    run_pipeline(tmp_path / "a")
    run_pipeline(tmp_path / "b")
    a, b = digest(tmp_path / "a"), digest(tmp_path / "b")
    assert a == b
    for name in ("fit0.json", "re/fit.json", "re/nmfc/000000.nmfc", "nmfc0/000000.png",
                 "init.ckpt", "person.ckpt", "init.csv", "ft.csv", "render/frames/000013.png",
                 "render/masks/000000.png", "report.json"):
        assert name in a, name
    report = json.loads((tmp_path / "a/report.json").read_text())
    assert report["n_frames"] == 14 and 0 <= report["mask_iou"] <= 1
    # reenacted fit keeps the source motion and takes the target identity
    src, tgt = read_fit(tmp_path / "a/fit0.json"), read_fit(tmp_path / "a/fit1.json")
    re = read_fit(tmp_path / "a/re/fit.json")
    assert np.array_equal(re.identity, tgt.identity)
    assert np.array_equal(re.expressions, src.expressions)
    assert read_nmfc_sequence(tmp_path / "a/re/nmfc").shape == (14, 32, 32, 3)


def test_seed_changes_synthetic_data(tmp_path):
    for seed in (0, 1):
        assert main(["--seed", str(seed), "synth-data", "--out", str(tmp_path / str(seed)),
                     "--people", "1", "--frames", "3", "--size", "16", "--n-id", "4",
                     "--n-exp", "3"]) == 0
    ds0 = load_dataset(tmp_path / "0/person_000")
    ds1 = load_dataset(tmp_path / "1/person_000")
    assert len(ds0) == 3 and not np.array_equal(ds0.frames, ds1.frames)


def test_metrics_identical_dirs_report_zero(tmp_path, capsys):
    rng = np.random.default_rng(0)
    frames = rng.integers(0, 256, (3, 8, 8, 3), dtype=np.uint8)
    write_png_sequence(tmp_path / "a", frames)
    write_png_sequence(tmp_path / "b", frames)
    assert main(["metrics", "--fake", str(tmp_path / "a"), "--real", str(tmp_path / "b")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["avg_pixel_dist"] == 0 and report["n_frames"] == 3


def test_usage_errors_exit_2(capsys):
    assert main(["fit", "--landmarks", "x.json", "--out", "y.json"]) == 2
    assert "--model" in capsys.readouterr().err
    assert main(["--bogus-flag", "metrics"]) == 2
    assert main(["metrics", "--real", "x", "--unknown"]) == 2
    assert main([]) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["fit", "--model", str(tmp_path / "missing.fmm"), "--landmarks", "x",
                 "--out", "y"]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["metrics", "--fake", str(tmp_path), "--real", str(tmp_path)]) == 1


@pytest.mark.parametrize("kind", ["toml", "json"])
def test_config_file_supplies_flags(tmp_path, kind):
    out = tmp_path / "corpus"
    if kind == "toml":
        text = f'seed = 3\n[synth-data]\nout = "{out}"\npeople = 1\nframes = 2\nsize = 16\n' \
               'n-id = 4\nn-exp = 3\n'
    else:
        text = json.dumps({"seed": 3, "synth-data": {"out": str(out), "people": 1, "frames": 2,
                                                     "size": 16, "n_id": 4, "n_exp": 3}})
    cfg = tmp_path / f"cfg.{kind}"
    cfg.write_text(text)
    assert main(["--config", str(cfg), "synth-data"]) == 0
    assert len(load_dataset(out / "person_000")) == 2
    # the command line wins over the file
    assert main(["--config", str(cfg), "synth-data", "--frames", "4"]) == 0
    assert len(load_dataset(out / "person_000")) == 4
