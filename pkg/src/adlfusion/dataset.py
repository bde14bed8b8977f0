"""Clip directories: the on-disk form of a multi-modal dataset.

A clip directory holds ``clips.json``, a list of entries::

    {"clip_id": "...", "label": 3,
     "pose": "p.tnsr", "features": "f.tnsr", "masks": "m.tnsr",
     "future_pose": "y.tnsr"}

with paths relative to the directory. Tensors use the TNSR format
(T_p x J x 3, T x H x W x C, G x H x W and J x 3).
"""

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensorio import read_tensor, write_tensor
from .training import SyntheticSample

INDEX_NAME = "clips.json"
_FIELDS = ("pose", "features", "masks", "future_pose")


def write_clip_dir(path, samples):
    """Store ``samples`` as TNSR files plus ``clips.json`` (float32 on disk)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    index = []
    for s in samples:
        entry = {"clip_id": s.clip_id, "label": int(s.label)}
        for name in _FIELDS:
            rel = f"{s.clip_id}.{name}.tnsr"
            write_tensor(root / rel, getattr(s, name))
            entry[name] = rel
        index.append(entry)
    with open(root / INDEX_NAME, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_clip_dir(path):
    root = Path(path)
    index_path = root / INDEX_NAME
    if not index_path.is_file():
        raise DataError(f"{index_path}: clip index not found")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{index_path}: {exc}") from exc
    samples = []
    for k, entry in enumerate(index):
        try:
            arrays = {}
            for name in _FIELDS:
                f = root / entry[name]
                if not f.is_file():
                    raise DataError(f"{f}: file not found")
                arrays[name] = read_tensor(f).astype(np.float64)
            samples.append(SyntheticSample(label=int(entry["label"]),
                                           clip_id=str(entry["clip_id"]), **arrays))
        except KeyError as exc:
            raise DataError(f"{index_path}: entry {k} lacks {exc}") from exc
    return samples
