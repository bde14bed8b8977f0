"""View-invariant skeleton normalization and temporal subsampling.

A sequence is first turned about the vertical (Y) axis so the torso faces
the camera, using an angle measured once on the first frame. Each frame is
then turned about the optical (Z) axis to level shoulders and hips.

Angle conventions
-----------------
The facing angle is ``atan2(dz, dx)`` of the vector from the midpoint of
right shoulder and right hip to the left shoulder, i.e. it grows from +X
toward +Z. :func:`rotation_y` rotates by an angle measured the same way, so
``rotation_y(-alpha)`` undoes a facing angle ``alpha``. The tilt angle of a
joint pair is ``atan2(left_y - right_y, left_x - right_x)`` and
:func:`rotation_z` is the usual right-handed rotation (+X toward +Y).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoseError, DimensionError

__all__ = [
    "JointMap",
    "JOINT_NAMES_13",
    "JOINT_MAP_13",
    "JOINT_MAP_5",
    "PoseSequence",
    "RotationAngles",
    "rotation_y",
    "rotation_z",
    "compute_y_rotation",
    "compute_z_rotation",
    "normalize_sequence",
    "temporal_subsample",
]

_EPS = 1e-9


@dataclass(frozen=True)
class JointMap:
    left_shoulder: int
    right_shoulder: int
    left_hip: int
    right_hip: int

    def indices(self):
        return (self.left_shoulder, self.right_shoulder, self.left_hip, self.right_hip)

    def validate(self, num_joints):
        idx = self.indices()
        if len(set(idx)) != len(idx):
            raise ValueError(f"joint map indices must be distinct: {idx}")
        if min(idx) < 0 or max(idx) >= num_joints:
            raise ValueError(f"joint map indices {idx} out of range for J={num_joints}")

    def to_dict(self):
        return {
            "left_shoulder": self.left_shoulder,
            "right_shoulder": self.right_shoulder,
            "left_hip": self.left_hip,
            "right_hip": self.right_hip,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["left_shoulder"]), int(d["right_shoulder"]),
                   int(d["left_hip"]), int(d["right_hip"]))


JOINT_NAMES_13 = (
    "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)
JOINT_MAP_13 = JointMap(left_shoulder=1, right_shoulder=2, left_hip=7, right_hip=8)

# head, l/r shoulder, l/r hip: smallest skeleton the normalization can run on
JOINT_MAP_5 = JointMap(left_shoulder=1, right_shoulder=2, left_hip=3, right_hip=4)


@dataclass
class PoseSequence:
    """T_p x J x 3 joint coordinates plus the joints used for orientation."""

    frames: np.ndarray
    joint_map: JointMap = field(default=JOINT_MAP_13)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise DimensionError(f"pose frames must be T x J x 3, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise DimensionError("pose sequence needs at least one frame")
        self.joint_map.validate(self.frames.shape[1])

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_joints(self):
        return self.frames.shape[1]


@dataclass
class RotationAngles:
    alpha_y: float
    beta_z: np.ndarray

    def to_dict(self):
        return {"alpha_y": float(self.alpha_y), "beta_z": [float(b) for b in self.beta_z]}


def rotation_y(angle):
    """Rotation about Y taking +X toward +Z by ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def rotation_z(angle):
    """Right-handed rotation about Z taking +X toward +Y."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_finite(frame, idx, t=None):
    if not np.all(np.isfinite(frame[list(idx)])):
        raise DegeneratePoseError("orientation joints are missing or non-finite", t)


def compute_y_rotation(frame0, joint_map=JOINT_MAP_13):
    """Facing angle of the torso on one frame (radians, in (-pi, pi])."""
    frame0 = np.asarray(frame0, dtype=np.float64)
    jm = joint_map
    _check_finite(frame0, (jm.left_shoulder, jm.right_shoulder, jm.right_hip))
    s_l = frame0[jm.left_shoulder]
    s_r = frame0[jm.right_shoulder]
    h_r = frame0[jm.right_hip]
    num = s_l[2] - (s_r[2] + h_r[2]) / 2.0
    den = s_l[0] - (s_r[0] + h_r[0]) / 2.0
    if abs(num) < _EPS and abs(den) < _EPS:
        raise DegeneratePoseError("torso vector has no extent in the XZ plane")
    return float(np.arctan2(num, den))


def _pair_tilt(left, right):
    dx = left[0] - right[0]
    dy = left[1] - right[1]
    if abs(dx) < _EPS and abs(dy) < _EPS:
        return None
    return np.arctan2(dy, dx)


def compute_z_rotation(frame, joint_map=JOINT_MAP_13):
    """Average of the shoulder-line and hip-line tilts in the XY plane."""
    frame = np.asarray(frame, dtype=np.float64)
    jm = joint_map
    _check_finite(frame, jm.indices())
    b_s = _pair_tilt(frame[jm.left_shoulder], frame[jm.right_shoulder])
    b_h = _pair_tilt(frame[jm.left_hip], frame[jm.right_hip])
    if b_s is None or b_h is None:
        raise DegeneratePoseError("coincident shoulder or hip joints")
    return float((b_s + b_h) / 2.0)


def normalize_sequence(p: PoseSequence):
    """Return the normalized sequence and the angles that were removed.

    The Y angle comes from frame 0 only and is removed from every frame,
    which keeps turns the person makes during the clip. The Z angle is
    estimated and removed per frame, after the Y correction.
    """
    frames = p.frames
    if not np.all(np.isfinite(frames)):
        bad = np.unique(np.nonzero(~np.isfinite(frames))[0])
        raise DegeneratePoseError("NaN or infinite joint coordinates", int(bad[0]))
    try:
        alpha = compute_y_rotation(frames[0], p.joint_map)
    except DegeneratePoseError as exc:
        raise DegeneratePoseError(str(exc), 0) from None
    # row-vector form: x' = x R^T
    out = frames @ rotation_y(-alpha).T
    betas = np.empty(len(out))
    for t in range(len(out)):
        try:
            beta = compute_z_rotation(out[t], p.joint_map)
        except DegeneratePoseError as exc:
            raise DegeneratePoseError(str(exc), t) from None
        betas[t] = beta
        out[t] = out[t] @ rotation_z(-beta).T
    return PoseSequence(out, p.joint_map), RotationAngles(alpha, betas)


def temporal_subsample(p: PoseSequence, stride=2):
    """Keep frames 0, stride, 2*stride, ...

    A stride longer than the sequence keeps only frame 0 and emits a
    ``RuntimeWarning``.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stride > p.num_frames:
        warnings.warn(
            f"stride {stride} exceeds sequence length {p.num_frames}; keeping frame 0 only",
            RuntimeWarning,
            stacklevel=2,
        )
    return PoseSequence(p.frames[::stride].copy(), p.joint_map)
