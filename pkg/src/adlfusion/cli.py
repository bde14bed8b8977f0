"""Command-line pipeline: ``adlfusion <subcommand> [options]``.

Every setting resolves as command-line flag > config file > built-in
default. Outputs are deterministic for a fixed seed: JSON is written with
sorted keys and no timestamps.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import CONFIG_SCHEMA_VERSION, __version__
from .dataset import load_clip_dir
from .errors import (
    ConfigurationError,
    DataError,
    DegeneratePoseError,
    DimensionError,
    DomainError,
    NoPersonError,
    NumericalError,
)
from .fusion import FusionModel, ModelConfig
from .objects import (
    HOME_OBJECTS,
    build_incidence,
    group_masks,
    merge_groups,
    temporal_object_mask,
)
from .pose import JOINT_MAP_5, JOINT_MAP_13, JointMap, PoseSequence, normalize_sequence, temporal_subsample
from .region import ActivityCrop, crop_frames, full_activity_bbox, read_detections, squarify
from .tensorio import read_tensor, write_tensor
from .training import (
    LossConfig,
    TrainConfig,
    evaluate,
    generate_synthetic,
    stratified_split,
    train,
)

log = logging.getLogger("adlfusion")

PRECEDENCE = "Settings resolve as: command-line flag > config file > built-in default."

DEFAULTS = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "model": {},
    "loss": {},
    "train": {},
    "data": {"synthetic": {"num_classes": None, "samples_per_class": 10, "horizon": 3},
             "val_fraction": 0.2},
    "preprocess": {"stride": 2},
    "crop": {"size": 224, "image_size": [640, 480], "threshold": 0.5},
    "grouping": {"target": 8, "threshold": 0.5, "grid": [7, 7], "image_size": [640, 480]},
}


# -- config -------------------------------------------------------------------

def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        if isinstance(base[key], dict) and key not in ("model", "loss", "train"):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where}.{key} must be an object")
            if key == "data":
                extra = set(value) - {"synthetic", "clips", "val_fraction"}
                if extra:
                    raise ConfigurationError(f"{where}.data: unknown keys {sorted(extra)}")
                # a clip directory replaces the synthetic generator
                merged = {k: v for k, v in out[key].items() if k != "synthetic" or "clips" not in value}
                merged.update(value)
                out[key] = merged
            else:
                out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"{p}: config file not found")
    try:
        user = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise ConfigurationError(f"{p}: top level must be an object")
    version = user.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigurationError(
            f"{p}: schema_version {version} unsupported (expected {CONFIG_SCHEMA_VERSION})"
        )
    return _merge(cfg, user)


def model_config(section):
    section = dict(section)
    preset = section.pop("preset", None)
    if preset is None:
        return ModelConfig.from_dict(section)
    if preset != "tiny":
        raise ConfigurationError(f"unknown model preset {preset!r} (only 'tiny')")
    unknown = set(section) - set(ModelConfig.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig.from_dict({**ModelConfig.tiny().to_dict(), **section})


def _dataclass_from(cls, section, name):
    unknown = set(section) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown {name} config keys: {sorted(unknown)}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigurationError(f"{name} config: {exc}") from exc


def resolve(args, cfg):
    """Apply flag overrides (flag > config > default) and validate."""
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for flag, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[section][key] = list(value) if isinstance(value, tuple) else value
    model_config(cfg["model"])
    _dataclass_from(LossConfig, cfg["loss"], "loss")
    _dataclass_from(TrainConfig, {**cfg["train"], "seed": cfg["seed"]}, "train")
    vf = cfg["data"].get("val_fraction", 0.2)
    if not 0.0 <= vf < 1.0:
        raise ConfigurationError(f"data.val_fraction {vf} outside [0, 1)")
    if cfg["preprocess"]["stride"] < 1:
        raise ConfigurationError("preprocess.stride must be >= 1")
    if cfg["crop"]["size"] < 1:
        raise ConfigurationError("crop.size must be >= 1")
    if cfg["grouping"]["target"] < 1:
        raise ConfigurationError("grouping.target must be >= 1")
    return cfg


_FLAG_KEYS = {
    "stride": ("preprocess", "stride"),
    "size": ("crop", "size"),
    "image_size": ("crop", "image_size"),
    "target": ("grouping", "target"),
    "grid": ("grouping", "grid"),
    "max_epochs": ("train", "max_epochs"),
    "batch_size": ("train", "batch_size"),
    "learning_rate": ("train", "learning_rate"),
    "lambda_pose": ("loss", "lambda_pose"),
}


# -- helpers ------------------------------------------------------------------

def _require_file(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: file not found")
    return p


def _read_json(path):
    p = _require_file(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _safe_name(video_id):
    name = str(video_id)
    if not name or "/" in name or "\\" in name or name in (".", ".."):
        raise DataError(f"video id {video_id!r} cannot be used as a file name")
    return name


def load_dataset(cfg):
    data = cfg["data"]
    if "clips" in data:
        root = Path(data["clips"])
        if not root.is_dir():
            raise DataError(f"{root}: clip directory not found")
        return load_clip_dir(root)
    syn = data.get("synthetic") or {}
    mcfg = model_config(cfg["model"])
    return generate_synthetic(
        mcfg, num_classes=syn.get("num_classes"),
        samples_per_class=syn.get("samples_per_class", 10),
        seed=cfg["seed"], horizon=syn.get("horizon", 3),
    )


def _select(samples, split, subset):
    if subset not in split:
        raise DataError(f"split has no subset {subset!r} (has {sorted(split)})")
    by_id = {s.clip_id: s for s in samples}
    missing = [c for c in split[subset] if c not in by_id]
    if missing:
        raise DataError(f"split subset {subset!r} names unknown clips, e.g. {missing[0]!r}")
    return [by_id[c] for c in split[subset]]


def save_model(out_dir, model, cfg, result):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {}
    for name, p in model.parameters().items():
        write_tensor(out / f"{name}.tnsr", p.value)
        params[name] = {"file": f"{name}.tnsr", "shape": list(p.value.shape)}
    best = result.best_val_mpca
    manifest = {
        "tool": "adlfusion",
        "version": __version__,
        "schema_version": CONFIG_SCHEMA_VERSION,
        "config": cfg,
        "parameters": params,
        "result": {
            "epochs_run": result.history[-1]["epoch"],
            "best_epoch": result.best_epoch,
            "best_val_mpca": None if not np.isfinite(best) else best,
            "stopped_early": result.stopped_early,
            "restored_best": result.restored_best,
        },
    }
    _write_json(out / "manifest.json", manifest)
    (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")


def load_model(model_dir):
    root = Path(model_dir)
    manifest = _read_json(root / "manifest.json")
    try:
        cfg = manifest["config"]
        model = FusionModel(model_config(cfg["model"]), seed=cfg["seed"])
        state = {name: read_tensor(_require_file(root / info["file"]))
                 for name, info in manifest["parameters"].items()}
    except KeyError as exc:
        raise DataError(f"{root / 'manifest.json'}: missing {exc}") from exc
    model.load_state(state)
    return model, cfg


# -- subcommands ----------------------------------------------------------------

def cmd_version(args, cfg):
    print(f"adlfusion {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    return 0


def cmd_preprocess_pose(args, cfg):
    src = _require_file(args.pose)
    frames = read_tensor(src).astype(np.float64)
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise DataError(f"{src}: expected a T x J x 3 tensor, got {frames.shape}")
    if args.joints:
        try:
            jm = JointMap.from_dict(_read_json(args.joints))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{args.joints}: joint map lacks {exc}") from exc
    elif frames.shape[1] in (5, 13):
        jm = JOINT_MAP_13 if frames.shape[1] == 13 else JOINT_MAP_5
    else:
        raise DataError(f"{src}: J={frames.shape[1]} needs a --joints sidecar")
    stride = cfg["preprocess"]["stride"]
    if args.dry_run:
        print(f"ok: {src} {frames.shape}, stride {stride}")
        return 0
    seq, angles = normalize_sequence(PoseSequence(frames, jm))
    seq = temporal_subsample(seq, stride)
    write_tensor(args.out, seq.frames)
    angles_path = args.angles or str(Path(args.out).with_suffix("")) + ".angles.json"
    _write_json(angles_path, {**angles.to_dict(), "stride": stride, "joint_map": jm.to_dict()})
    return 0


def _crops_by_video(boxes, image_size, threshold):
    persons = {}
    for b in boxes:
        if b.class_name == "person":
            persons.setdefault(b.video_id, []).append(b)
    crops = {}
    for vid in sorted(persons, key=str):
        try:
            crops[vid] = squarify(full_activity_bbox(persons[vid], threshold), image_size)
        except NoPersonError:
            log.warning("video %s: no person box at confidence >= %s", vid, threshold)
    return crops


def cmd_crop(args, cfg):
    c = cfg["crop"]
    boxes = read_detections(_require_file(args.detections))
    if args.video_id is not None:
        boxes = [b for b in boxes if b.video_id == args.video_id]
    frames = None
    if args.frames:
        frames = read_tensor(_require_file(args.frames))
        if frames.ndim != 4:
            raise DataError(f"{args.frames}: expected T x H x W x 3 frames, got {frames.shape}")
        image_size = (frames.shape[2], frames.shape[1])
    else:
        image_size = tuple(c["image_size"])
    crops = _crops_by_video(boxes, image_size, c["threshold"])
    if not crops:
        raise NoPersonError(f"{args.detections}: no person detection at confidence >= {c['threshold']}")
    if frames is not None and len(crops) != 1:
        raise DataError("--frames needs detections of exactly one video (use --video-id)")
    if args.dry_run:
        print(f"ok: {len(crops)} video(s), output size {c['size']}")
        return 0
    _write_json(args.out, {str(v): {**crop.to_dict(), "out_size": c["size"]}
                           for v, crop in crops.items()})
    if frames is not None:
        (crop,) = crops.values()
        out = crop_frames(frames, crop, c["size"])
        write_tensor(args.frames_out or str(Path(args.out).with_suffix("")) + ".frames.tnsr", out)
    return 0


def cmd_group_objects(args, cfg):
    g = cfg["grouping"]
    boxes = read_detections(_require_file(args.detections))
    labels = _read_json(args.labels)
    if not isinstance(labels, dict):
        raise DataError(f"{args.labels}: expected an object mapping video id to activity")
    inc = build_incidence(boxes, labels, threshold=g["threshold"])
    if inc.rejected:
        log.warning("%d detection(s) from unlabeled videos ignored", inc.rejected)
    if args.crops:
        crops = {k: ActivityCrop.from_dict(v) for k, v in _read_json(args.crops).items()}
    else:
        crops = _crops_by_video(boxes, tuple(g["image_size"]), g["threshold"])
    if args.dry_run:
        print(f"ok: {len(inc.object_names)} objects, {len(inc.video_ids)} videos, "
              f"target {g['target']} groups")
        return 0
    grouping = merge_groups(inc, target_groups=g["target"])
    out = Path(args.out)
    _write_json(out / "grouping.json", grouping.to_dict())
    grid = tuple(g["grid"])
    index = {name: i for i, name in enumerate(HOME_OBJECTS)}
    for vid in inc.video_ids:
        crop = crops.get(vid)
        if crop is None:
            log.warning("video %s: no crop geometry, masks skipped", vid)
            continue
        per_object = np.zeros((len(HOME_OBJECTS),) + grid, dtype=bool)
        for b in boxes:
            if b.video_id == vid and b.class_name in index and b.confidence >= g["threshold"]:
                per_object[index[b.class_name]] |= temporal_object_mask([b], crop, grid)
        masks = group_masks(per_object, grouping.groups).astype(np.float32)
        target = out / _safe_name(vid) / "masks.tnsr"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_tensor(target, masks)
    return 0


def cmd_train(args, cfg):
    mcfg = model_config(cfg["model"])
    loss_cfg = LossConfig(**cfg["loss"])
    train_cfg = TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})
    samples = load_dataset(cfg)
    if args.dry_run:
        print(f"ok: {len(samples)} clips, {mcfg.num_classes} classes, "
              f"up to {train_cfg.max_epochs} epochs")
        return 0
    vf = cfg["data"].get("val_fraction", 0.2)
    if vf > 0:
        tr, va = stratified_split(samples, vf, seed=cfg["seed"])
    else:
        tr, va = list(samples), []
    model = FusionModel(mcfg, seed=cfg["seed"])
    result = train(model, tr, va or None, train_cfg, loss_cfg)
    save_model(args.out, model, cfg, result)
    split = {"train": [s.clip_id for s in tr]}
    if va:
        split["val"] = [s.clip_id for s in va]
    _write_json(Path(args.out) / "split.json", split)
    return 0


def _eval_inputs(args, cfg):
    model, model_cfg = load_model(args.model)
    if args.config:
        model_cfg = {**model_cfg, "data": cfg["data"]}
    samples = load_dataset(model_cfg)
    split_path = args.split or str(Path(args.model) / "split.json")
    split = _read_json(split_path)
    if isinstance(split, list):
        split = {"all": split}
    subset = args.subset or next((k for k in ("test", "val", "all", "train") if k in split), None)
    return model, model_cfg, _select(samples, split, subset), subset


def cmd_eval(args, cfg):
    model, model_cfg, clips, subset = _eval_inputs(args, cfg)
    if args.dry_run:
        print(f"ok: {len(clips)} clips in subset {subset!r}")
        return 0
    ev = evaluate(model, clips, LossConfig(**model_cfg["loss"]))
    report = {**ev.metrics.to_dict(), "subset": subset, "num_clips": len(clips)}
    text = json.dumps(report, sort_keys=True, allow_nan=False)
    print(text)
    if args.out:
        _write_json(args.out, report)
    return 0


def cmd_dump_attention(args, cfg):
    model, _, clips, subset = _eval_inputs(args, cfg)
    if args.dry_run:
        print(f"ok: {len(clips)} clips in subset {subset!r}")
        return 0
    out = Path(args.out)
    for s in clips:
        r = model.forward(s.pose, s.features, s.masks)
        _write_json(out / f"{_safe_name(s.clip_id)}.json", {
            "clip_id": s.clip_id,
            "alpha": r.attention.weights.tolist(),
            "cross_attention": r.cross_attention.tolist(),
            "query_active": r.query_active.tolist(),
        })
    return 0


# -- parser -------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="seed for data, init, shuffling and dropout")
    common.add_argument("--dry-run", action="store_true",
                        help="validate config and inputs, write nothing")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="adlfusion",
        description="Pose, video-feature and object-context activity recognition pipeline. "
                    + PRECEDENCE,
        epilog="Exit codes: 1 configuration error, 2 data error, 3 numerical failure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("version", parents=[common], help="print tool and config schema version")
    p.set_defaults(func=cmd_version)

    p = sub.add_parser("preprocess-pose", parents=[common], help="normalize and subsample a pose tensor",
                       epilog=PRECEDENCE)
    p.add_argument("pose", help="T x J x 3 TNSR file")
    p.add_argument("--joints", help="JSON sidecar with left/right shoulder and hip indices")
    p.add_argument("--stride", type=int, help="temporal stride (default 2)")
    p.add_argument("--out", required=True, help="normalized TNSR output")
    p.add_argument("--angles", help="angles JSON output (default: next to --out)")
    p.set_defaults(func=cmd_preprocess_pose)

    p = sub.add_parser("crop", parents=[common], help="full-activity square crops from person boxes",
                       epilog=PRECEDENCE)
    p.add_argument("--detections", required=True, help="detections JSONL")
    p.add_argument("--out", required=True, help="crop geometry JSON output")
    p.add_argument("--size", type=int, help="output side in pixels (default 224)")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"),
                   help="source frame size when --frames is not given (default 640 480)")
    p.add_argument("--video-id", help="only this video")
    p.add_argument("--frames", help="T x H x W x 3 TNSR frames to crop")
    p.add_argument("--frames-out", help="cropped frames TNSR output")
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("group-objects", parents=[common],
                       help="correlation-based object grouping and group masks", epilog=PRECEDENCE)
    p.add_argument("--detections", required=True, help="detections JSONL")
    p.add_argument("--labels", required=True, help="JSON mapping video id to activity")
    p.add_argument("--target", type=int, help="number of groups (default 8)")
    p.add_argument("--grid", type=int, nargs=2, metavar=("H", "W"), help="mask grid (default 7 7)")
    p.add_argument("--crops", help="crop JSON from the crop subcommand")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_group_objects)

    p = sub.add_parser("train", parents=[common], help="train a model", epilog=PRECEDENCE)
    p.add_argument("--out", required=True, help="model directory (TNSR parameters + manifest)")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lambda-pose", type=float)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "print mean per-class accuracy as JSON"),
        ("dump-attention", cmd_dump_attention, "write per-clip attention JSON"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext, epilog=PRECEDENCE)
        p.add_argument("--model", required=True, help="model directory written by train")
        p.add_argument("--split", help="split JSON (default: the model's split.json)")
        p.add_argument("--subset", help="split subset name (default: test, else val)")
        p.add_argument("--out", required=name == "dump-attention",
                       help="output file" if name == "eval" else "output directory")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="adlfusion: %(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = resolve(args, load_config(args.config))
        return args.func(args, cfg)
    except (ConfigurationError, DomainError) as exc:
        code, msg = 1, exc
    except NumericalError as exc:
        code, msg = 3, exc
    except (DataError, NoPersonError, DegeneratePoseError, DimensionError,
            OSError, ValueError) as exc:
        code, msg = 2, exc
    print(f"adlfusion: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
