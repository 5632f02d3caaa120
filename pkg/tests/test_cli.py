import numpy as np
import pytest

from mvdistill.cli import main
from mvdistill.data import read_manifest, read_tkd
from mvdistill.geometry import read_rig
from mvdistill.render import read_ppm
from mvdistill.tape import load_checkpoint
from mvdistill.visibility import read_masks


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    rc = main([
        "gen", "--out", str(root / "train"), "--per-class", "3",
        "--points", "64", "--jitter", "0.01", "--seed", "7",
    ])
    assert rc == 0
    rc = main([
        "gen", "--out", str(root / "test"), "--per-class", "2",
        "--points", "64", "--jitter", "0.01", "--seed", "8",
    ])
    assert rc == 0
    return root


def test_gen_writes_manifest(tiny_dataset):
    manifest = read_manifest(tiny_dataset / "train" / "manifest.txt")
    assert len(manifest) == 12
    assert manifest.class_names == ["sphere", "cube", "cylinder", "cone"]


def test_rig_subcommand(tmp_path):
    out = tmp_path / "rig.txt"
    assert main(["rig", "--preset", "redu6", "--out", str(out)]) == 0
    assert len(read_rig(out)) == 6
    with pytest.raises(SystemExit) as exc:
        main(["rig", "--preset", "nope", "--out", str(out)])
    assert exc.value.code == 1


def test_visible_subcommand(tiny_dataset, tmp_path):
    cloud = next((tiny_dataset / "train" / "clouds").glob("*.xyz"))
    out = tmp_path / "m.mvmk"
    rc = main(["visible", "--cloud", str(cloud), "--rig", "redu4", "--out", str(out)])
    assert rc == 0
    masks = read_masks(out)
    assert len(masks) == 4 and all(len(m) > 0 for m in masks)


def test_render_subcommand(tiny_dataset, tmp_path):
    cloud = next((tiny_dataset / "train" / "clouds").glob("*.xyz"))
    out = tmp_path / "img.ppm"
    rc = main([
        "render", "--cloud", str(cloud), "--rig", "classification", "--view", "2",
        "--size", "64", "--out", str(out),
    ])
    assert rc == 0
    img = read_ppm(out)
    assert img.width == img.height == 64
    assert (img.pixels != 255).any()
    # out-of-range view index is a validation error
    rc = main([
        "render", "--cloud", str(cloud), "--rig", "classification", "--view", "40",
        "--out", str(tmp_path / "x.ppm"),
    ])
    assert rc == 1


def test_full_pipeline_and_modes(tiny_dataset, tmp_path):
    train_manifest = tiny_dataset / "train" / "manifest.txt"
    test_manifest = tiny_dataset / "test" / "manifest.txt"
    teacher = tmp_path / "teacher"
    rc = main([
        "teacher-proc", "--manifest", str(train_manifest), "--rig", "redu4",
        "--ct", "16", "--logits", "--out", str(teacher), "--seed", "7",
    ])
    assert rc == 0
    tkd_files = sorted(teacher.glob("*.tkd"))
    assert len(tkd_files) == 12
    tk = read_tkd(tkd_files[0])
    assert tk.num_views == 4 and tk.channels == 16
    assert tk.logits is not None
    assert len(sorted(teacher.glob("*.mvmk"))) == 12

    ckpt = tmp_path / "model.mvpt"
    metrics = tmp_path / "metrics.tsv"
    rc = main([
        "train", "--manifest", str(train_manifest), "--teacher", str(teacher),
        "--rig", "redu4", "--mode", "vafp", "--epochs", "2", "--batch", "4",
        "--out", str(ckpt), "--metrics", str(metrics), "--seed", "7",
    ])
    assert rc == 0
    assert ckpt.exists()
    lines = metrics.read_text().splitlines()
    assert len(lines) == 3  # header + 2 epochs
    store = load_checkpoint(ckpt)
    assert "align.w" in store

    rc = main(["eval", "--checkpoint", str(ckpt), "--manifest", str(test_manifest)])
    assert rc == 0

    for mode in ("none", "logit", "feature"):
        rc = main([
            "train", "--manifest", str(train_manifest), "--teacher", str(teacher),
            "--rig", "redu4", "--mode", mode, "--epochs", "1", "--batch", "4",
            "--out", str(tmp_path / f"{mode}.mvpt"), "--seed", "7",
        ])
        assert rc == 0, mode


def test_train_requires_teacher_flag(tiny_dataset, tmp_path):
    rc = main([
        "train", "--manifest", str(tiny_dataset / "train" / "manifest.txt"),
        "--rig", "redu4", "--mode", "vafp", "--epochs", "1",
        "--out", str(tmp_path / "x.mvpt"),
    ])
    assert rc == 1


def test_eval_missing_checkpoint(tiny_dataset):
    rc = main([
        "eval", "--checkpoint", "/nonexistent/model.mvpt",
        "--manifest", str(tiny_dataset / "test" / "manifest.txt"),
    ])
    assert rc == 1


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--out", "/tmp/x", "--bogus-flag", "1"])
    assert exc.value.code == 1


def test_bad_gen_class(tmp_path):
    rc = main(["gen", "--out", str(tmp_path), "--classes", "pyramid", "--per-class", "1"])
    assert rc == 1


def test_invalid_rig_file_is_validation_error(tiny_dataset, tmp_path):
    bad = tmp_path / "bad_rig.txt"
    bad.write_text("0.1 2.0 2.2\n")  # elevation out of (-pi/2, pi/2)
    cloud = next((tiny_dataset / "train" / "clouds").glob("*.xyz"))
    rc = main(["visible", "--cloud", str(cloud), "--rig", str(bad),
               "--out", str(tmp_path / "m.mvmk")])
    assert rc == 1


def test_gradcheck_subcommand(capsys):
    rc = main([
        "gradcheck", "--clouds", "2", "--points", "32", "--classes", "2",
        "--views", "4", "--ct", "8", "--samples", "5", "--seed", "7",
    ])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out


def test_pipeline_determinism(tiny_dataset, tmp_path):
    # same seed, twice: every artifact byte-identical
    train_manifest = tiny_dataset / "train" / "manifest.txt"

    def run(tag):
        teacher = tmp_path / f"teacher_{tag}"
        ckpt = tmp_path / f"ck_{tag}.mvpt"
        metrics = tmp_path / f"me_{tag}.tsv"
        assert main([
            "teacher-proc", "--manifest", str(train_manifest), "--rig", "redu4",
            "--ct", "8", "--out", str(teacher), "--seed", "7",
        ]) == 0
        assert main([
            "train", "--manifest", str(train_manifest), "--teacher", str(teacher),
            "--rig", "redu4", "--epochs", "1", "--batch", "4",
            "--out", str(ckpt), "--metrics", str(metrics), "--seed", "7",
        ]) == 0
        tkds = b"".join(p.read_bytes() for p in sorted(teacher.glob("*.tkd")))
        masks = b"".join(p.read_bytes() for p in sorted(teacher.glob("*.mvmk")))
        return tkds, masks, ckpt.read_bytes(), metrics.read_bytes()

    assert run("a") == run("b")
