"""Full-activity crops: union of person boxes, squaring, gray padding, resize.

Also holds the detection record type and its JSON Lines reader/writer, since
both the crop and the object-context code consume it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, NoPersonError

__all__ = [
    "CONFIDENCE_THRESHOLD",
    "PAD_COLOR",
    "DetectionBox",
    "ActivityCrop",
    "read_detections",
    "write_detections",
    "full_activity_bbox",
    "squarify",
    "crop_frames",
    "bilinear_resize",
]

CONFIDENCE_THRESHOLD = 0.5
PAD_COLOR = (128, 128, 128)


@dataclass(frozen=True)
class DetectionBox:
    frame: int
    x1: float
    y1: float
    x2: float
    y2: float
    class_id: int = 0
    confidence: float = 1.0
    class_name: str = "person"
    video_id: str = ""

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2}) at frame {self.frame}"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def bbox(self):
        return (self.x1, self.y1, self.x2, self.y2)

    def to_record(self):
        return {
            "video_id": self.video_id,
            "frame": self.frame,
            "class_id": self.class_id,
            "class_name": self.class_name,
            "bbox": [self.x1, self.y1, self.x2, self.y2],
            "conf": self.confidence,
        }

    @classmethod
    def from_record(cls, rec):
        try:
            x1, y1, x2, y2 = rec["bbox"]
            return cls(
                frame=int(rec["frame"]),
                x1=x1, y1=y1, x2=x2, y2=y2,
                class_id=int(rec["class_id"]),
                confidence=rec["conf"],
                class_name=str(rec["class_name"]),
                video_id=str(rec["video_id"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed detection record {rec!r}: {exc}") from None


def read_detections(path):
    """Parse a detections JSON Lines file into DetectionBox objects."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            out.append(DetectionBox.from_record(rec))
    return out


def write_detections(path, boxes):
    with open(path, "w", encoding="utf-8") as fh:
        for b in boxes:
            fh.write(json.dumps(b.to_record(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class ActivityCrop:
    """A square window in image coordinates, possibly reaching past the edges.

    ``p_tl``/``p_br`` are the corners of the *square*; ``activity_tl`` and
    ``activity_br`` keep the unsquared union box.
    """

    p_tl: tuple
    p_br: tuple
    square_side: float
    image_size: tuple
    activity_tl: tuple = None
    activity_br: tuple = None
    pad_color: tuple = PAD_COLOR

    @property
    def padding(self):
        """(left, top, right, bottom) pixels lying outside the image."""
        W, H = self.image_size
        x0, y0 = self.p_tl
        x1, y1 = self.p_br
        return (max(0.0, -x0), max(0.0, -y0), max(0.0, x1 - W), max(0.0, y1 - H))

    def to_crop_space(self, x, y):
        """Image pixel coordinates -> fractional crop coordinates in [0, 1]."""
        return ((np.asarray(x) - self.p_tl[0]) / self.square_side,
                (np.asarray(y) - self.p_tl[1]) / self.square_side)

    def to_dict(self):
        return {
            "p_tl": list(self.p_tl),
            "p_br": list(self.p_br),
            "square_side": self.square_side,
            "image_size": list(self.image_size),
            "activity_tl": list(self.activity_tl) if self.activity_tl else None,
            "activity_br": list(self.activity_br) if self.activity_br else None,
            "padding": list(self.padding),
            "pad_color": list(self.pad_color),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                tuple(float(v) for v in d["p_tl"]),
                tuple(float(v) for v in d["p_br"]),
                float(d["square_side"]),
                tuple(int(v) for v in d["image_size"]),
                tuple(d["activity_tl"]) if d.get("activity_tl") else None,
                tuple(d["activity_br"]) if d.get("activity_br") else None,
                tuple(int(v) for v in d.get("pad_color", PAD_COLOR)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed crop record: {exc}") from exc


def full_activity_bbox(person_boxes, threshold=CONFIDENCE_THRESHOLD):
    """Min/max corners over all person boxes at or above ``threshold``."""
    boxes = [b for b in person_boxes if b.confidence >= threshold]
    if not boxes:
        raise NoPersonError("no person detection at or above the confidence threshold")
    arr = np.array([b.bbox for b in boxes], dtype=np.float64)
    tl = (float(arr[:, 0].min()), float(arr[:, 1].min()))
    br = (float(arr[:, 2].max()), float(arr[:, 3].max()))
    return tl, br


def squarify(bbox, image_size):
    """Square window centred on ``bbox`` whose side is its larger dimension."""
    (x0, y0), (x1, y1) = bbox
    if not (x0 < x1 and y0 < y1):
        raise DataError(f"invalid bbox {bbox}")
    side = max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    tl = (cx - side / 2.0, cy - side / 2.0)
    br = (cx + side / 2.0, cy + side / 2.0)
    return ActivityCrop(tl, br, float(side), tuple(image_size), (x0, y0), (x1, y1))


def _sample_coords(n_out, n_in):
    # half-pixel centres, clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(img, out_h, out_w):
    """Bilinear resize of an H x W (x channels) array; float64 result."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    y0, y1, fy = _sample_coords(out_h, H)
    x0, x1, fx = _sample_coords(out_w, W)
    fy = fy.reshape((-1, 1) + (1,) * (img.ndim - 2))
    fx = fx.reshape((1, -1) + (1,) * (img.ndim - 2))
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def crop_frames(frames, crop: ActivityCrop, out_size=224):
    """Cut the square window out of every frame, gray-padding, then resize.

    ``frames`` is T x H x W x 3. The window corners are rounded to whole
    pixels. Integer inputs are rounded back to their dtype.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise DimensionError(f"frames must be T x H x W x 3, got {frames.shape}")
    W, H = crop.image_size
    if frames.shape[1:3] != (H, W):
        raise DimensionError(
            f"frame size {frames.shape[2]}x{frames.shape[1]} != declared image size {W}x{H}"
        )
    side = int(round(crop.square_side))
    x0 = int(round(crop.p_tl[0]))
    y0 = int(round(crop.p_tl[1]))
    T = frames.shape[0]
    canvas = np.empty((T, side, side, 3), dtype=frames.dtype)
    canvas[...] = np.asarray(crop.pad_color, dtype=frames.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, W), min(y0 + side, H)
    if sx0 < sx1 and sy0 < sy1:
        canvas[:, sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frames[:, sy0:sy1, sx0:sx1]
    if side == out_size:
        return canvas
    out = np.stack([bilinear_resize(f, out_size, out_size) for f in canvas])
    if np.issubdtype(frames.dtype, np.integer):
        info = np.iinfo(frames.dtype)
        out = np.clip(np.rint(out), info.min, info.max).astype(frames.dtype)
    return out
