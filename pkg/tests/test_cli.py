import json

import numpy as np
import pytest

from adlfusion import __version__
from adlfusion.cli import main
from adlfusion.dataset import load_clip_dir, write_clip_dir
from adlfusion.fusion import ModelConfig
from adlfusion.objects import HOME_OBJECTS
from adlfusion.pose import compute_y_rotation, rotation_y
from adlfusion.region import DetectionBox, write_detections
from adlfusion.tensorio import read_tensor, write_tensor
from adlfusion.training import generate_synthetic

from conftest import frontal_sequence


def write_config(path, **sections):
    cfg = {"seed": 0, "model": {"preset": "tiny", "num_classes": 4},
           "data": {"synthetic": {"samples_per_class": 10}, "val_fraction": 0}}
    cfg.update(sections)
    path.write_text(json.dumps(cfg))
    return str(path)


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_version(capsys):
    assert main(["version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "schema 1" in out


def test_help_states_precedence(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    assert "flag > config file > built-in default" in capsys.readouterr().out


def test_dry_run_writes_nothing(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    before = snapshot(tmp_path)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "model"), "--dry-run"]) == 0
    assert snapshot(tmp_path) == before
    assert capsys.readouterr().out.startswith("ok:")


def test_config_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"preset": "tiny", "video_frames": 3}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "m"), "--dry-run"]) == 1
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "m")]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", "x"]) == 1
    err = capsys.readouterr().err
    assert err.count("adlfusion: error:") == 3


def test_missing_detections_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    labels = tmp_path / "labels.json"
    labels.write_text("{}")
    code = main(["group-objects", "--detections", str(missing), "--labels", str(labels),
                 "--out", str(tmp_path / "g")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_non_finite_loss_exit_3(tmp_path, capsys):
    cfg = ModelConfig.tiny()
    samples = generate_synthetic(cfg, samples_per_class=1, seed=0)
    samples[0].future_pose[...] = np.inf
    write_clip_dir(tmp_path / "clips", samples)
    conf = write_config(tmp_path / "cfg.json", model={"preset": "tiny"},
                        data={"clips": str(tmp_path / "clips"), "val_fraction": 0})
    assert main(["train", "--config", conf, "--out", str(tmp_path / "m")]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_flag_overrides_config(tmp_path):
    conf = write_config(tmp_path / "cfg.json", train={"max_epochs": 7})
    assert main(["train", "--config", conf, "--out", str(tmp_path / "m"), "--max-epochs", "2",
                 "--seed", "5"]) == 0
    manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert manifest["config"]["train"]["max_epochs"] == 2
    assert manifest["config"]["seed"] == 5
    assert manifest["result"]["epochs_run"] == 2


def test_train_then_eval_overfits(tmp_path, capsys):
    conf = write_config(tmp_path / "cfg.json", train={"max_epochs": 200})
    assert main(["train", "--config", conf, "--out", str(tmp_path / "m")]) == 0
    capsys.readouterr()
    assert main(["eval", "--model", str(tmp_path / "m"), "--subset", "train",
                 "--out", str(tmp_path / "metrics.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mean_per_class"] == 1.0 and report["num_clips"] == 40
    assert json.loads((tmp_path / "metrics.json").read_text()) == report
    header = (tmp_path / "m" / "history.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_mpca"


def test_pipeline_is_byte_reproducible(tmp_path):
    conf = write_config(tmp_path / "cfg.json", train={"max_epochs": 3},
                        data={"synthetic": {"samples_per_class": 4}, "val_fraction": 0.25})
    for run in ("a", "b"):
        assert main(["train", "--config", conf, "--out", str(tmp_path / run / "model")]) == 0
        assert main(["dump-attention", "--model", str(tmp_path / run / "model"),
                     "--out", str(tmp_path / run / "att")]) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b and len(a) > 20


def test_dump_attention_format(tmp_path):
    conf = write_config(tmp_path / "cfg.json", train={"max_epochs": 1})
    main(["train", "--config", conf, "--out", str(tmp_path / "m")])
    assert main(["dump-attention", "--model", str(tmp_path / "m"), "--subset", "train",
                 "--out", str(tmp_path / "att")]) == 0
    files = sorted((tmp_path / "att").glob("*.json"))
    assert len(files) == 40
    d = json.loads(files[0].read_text())
    assert len(d["alpha"]) == 4 and abs(sum(d["alpha"]) - 1) < 1e-12
    xa = np.array(d["cross_attention"])
    assert xa.shape == (2, 2, 36)
    np.testing.assert_allclose(xa.sum(axis=-1), 1.0, atol=1e-12)


def test_eval_on_clip_directory(tmp_path, capsys):
    cfg = ModelConfig.tiny()
    write_clip_dir(tmp_path / "clips", generate_synthetic(cfg, samples_per_class=3, seed=2))
    assert len(load_clip_dir(tmp_path / "clips")) == 9
    conf = write_config(tmp_path / "cfg.json", model={"preset": "tiny"}, train={"max_epochs": 2},
                        data={"clips": str(tmp_path / "clips"), "val_fraction": 0.34})
    assert main(["train", "--config", conf, "--out", str(tmp_path / "m")]) == 0
    capsys.readouterr()
    assert main(["eval", "--model", str(tmp_path / "m")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["subset"] == "val" and report["num_clips"] == 3


def test_preprocess_pose(tmp_path, rng):
    p = frontal_sequence(rng, 8)
    rotated = p.frames @ rotation_y(0.6).T
    write_tensor(tmp_path / "pose.tnsr", rotated)
    (tmp_path / "joints.json").write_text(json.dumps(p.joint_map.to_dict()))
    assert main(["preprocess-pose", str(tmp_path / "pose.tnsr"), "--joints",
                 str(tmp_path / "joints.json"), "--out", str(tmp_path / "norm.tnsr")]) == 0
    out = read_tensor(tmp_path / "norm.tnsr")
    assert out.shape == (4, 13, 3)
    assert abs(compute_y_rotation(out[0].astype(np.float64))) < 1e-5
    angles = json.loads((tmp_path / "norm.angles.json").read_text())
    assert abs(angles["alpha_y"] - 0.6) < 1e-5 and angles["stride"] == 2


def test_preprocess_pose_degenerate_is_data_error(tmp_path, capsys):
    write_tensor(tmp_path / "pose.tnsr", np.zeros((4, 13, 3)))
    assert main(["preprocess-pose", str(tmp_path / "pose.tnsr"), "--out", str(tmp_path / "o.tnsr")]) == 2


def _detections():
    recs = []
    rng = np.random.default_rng(0)
    objects = HOME_OBJECTS[:12]
    for v in range(6):
        vid = f"vid{v}"
        recs.append(DetectionBox(0, 100, 100, 300, 400, class_name="person", video_id=vid))
        recs.append(DetectionBox(5, 150, 120, 320, 380, class_name="person", video_id=vid))
        for k, name in enumerate(objects):
            if rng.random() < 0.5:
                x, y = rng.uniform(100, 280, size=2)
                recs.append(DetectionBox(int(k), x, y, x + 20, y + 20, class_name=name,
                                         video_id=vid, confidence=0.8))
    return recs


def test_crop_and_group_objects(tmp_path):
    write_detections(tmp_path / "dets.jsonl", _detections())
    (tmp_path / "labels.json").write_text(json.dumps({f"vid{v}": v % 3 for v in range(6)}))
    assert main(["crop", "--detections", str(tmp_path / "dets.jsonl"),
                 "--out", str(tmp_path / "crops.json")]) == 0
    crops = json.loads((tmp_path / "crops.json").read_text())
    assert crops["vid0"]["square_side"] == 300.0 and crops["vid0"]["out_size"] == 224
    # most vocabulary objects never occur here, so their correlations are undefined
    with pytest.warns(RuntimeWarning, match="undefined"):
        code = main(["group-objects", "--detections", str(tmp_path / "dets.jsonl"),
                     "--labels", str(tmp_path / "labels.json"), "--crops",
                     str(tmp_path / "crops.json"), "--target", "8", "--out", str(tmp_path / "g")])
    assert code == 0
    grouping = json.loads((tmp_path / "g" / "grouping.json").read_text())
    assert len(grouping["groups"]) == 8
    assert sorted(i for g in grouping["groups"] for i in g) == list(range(len(HOME_OBJECTS)))
    assert len(grouping["merge_trace"]) == len(HOME_OBJECTS) - 8
    masks = read_tensor(tmp_path / "g" / "vid3" / "masks.tnsr")
    assert masks.shape == (8, 7, 7) and set(np.unique(masks)) <= {0.0, 1.0}
    assert masks.sum() > 0


def test_crop_frames_output(tmp_path):
    frames = np.full((2, 60, 80, 3), 50.0)
    write_tensor(tmp_path / "frames.tnsr", frames)
    write_detections(tmp_path / "d.jsonl", [DetectionBox(0, 10, 10, 40, 30, video_id="v")])
    assert main(["crop", "--detections", str(tmp_path / "d.jsonl"), "--frames",
                 str(tmp_path / "frames.tnsr"), "--size", "16", "--out", str(tmp_path / "c.json")]) == 0
    out = read_tensor(tmp_path / "c.frames.tnsr")
    assert out.shape == (2, 16, 16, 3) and np.all(out == 50.0)
