"""Object masks and grouping of objects that rarely share activities.

Objects are merged agglomeratively: at every step the two groups whose
activity distributions are *least* correlated are fused, so each resulting
group gathers objects that rarely show up in the same activities and its
mask seldom co-activates with others.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError
from .region import CONFIDENCE_THRESHOLD, ActivityCrop, DetectionBox

__all__ = [
    "HOME_OBJECTS",
    "REFERENCE_GROUPS",
    "TIE_TOL",
    "IncidenceMatrix",
    "ActivityObjectCounts",
    "MergeStep",
    "ObjectGrouping",
    "rasterize_box",
    "temporal_object_mask",
    "build_incidence",
    "activity_counts",
    "pairwise_pearson",
    "merge_groups",
    "group_mask",
    "group_masks",
    "resize_mask",
]

# Correlations closer than this are treated as equal by the tie rule.
TIE_TOL = 1e-12
_VAR_EPS = 1e-20

# The eight groups reported for the real dataset (COCO names). Documentation
# fixture only: reproducing them needs the original detections.
REFERENCE_GROUPS = (
    ("knife", "vase", "hair drier"),
    ("sink", "orange", "dining table"),
    ("remote", "pizza", "mouse", "broccoli", "toaster"),
    ("refrigerator", "cup", "cake", "microwave"),
    ("tv", "hot dog", "fork", "toilet", "wine glass", "donut", "bed", "toothbrush"),
    ("bench", "banana", "couch", "spoon", "apple"),
    ("chair", "bowl", "laptop"),
    ("book", "sandwich", "keyboard", "bottle", "carrot", "cell phone", "oven", "scissors"),
)
HOME_OBJECTS = tuple(name for group in REFERENCE_GROUPS for name in group)


# -- masks ------------------------------------------------------------------

def rasterize_box(u0, v0, u1, v1, grid):
    """Cells of an H x W grid over [0,1]^2 that overlap the box with positive area.

    Box coordinates are fractions of the crop side (u horizontal, v vertical).
    """
    H, W = grid
    cols = np.arange(W)
    rows = np.arange(H)
    col_hit = (u0 < (cols + 1) / W) & (u1 > cols / W)
    row_hit = (v0 < (rows + 1) / H) & (v1 > rows / H)
    return row_hit[:, None] & col_hit[None, :]


def temporal_object_mask(dets, crop: ActivityCrop, grid=(7, 7)):
    """OR over frames of each box rasterized in crop space."""
    mask = np.zeros(grid, dtype=bool)
    for d in dets:
        u0, v0 = crop.to_crop_space(d.x1, d.y1)
        u1, v1 = crop.to_crop_space(d.x2, d.y2)
        mask |= rasterize_box(u0, v0, u1, v1, grid)
    return mask


def group_mask(object_masks, groups, g):
    """OR of the member-object masks of group ``g``."""
    object_masks = np.asarray(object_masks, dtype=bool)
    out = np.zeros(object_masks.shape[1:], dtype=bool)
    for i in groups[g]:
        out |= object_masks[i]
    return out


def group_masks(object_masks, groups):
    return np.stack([group_mask(object_masks, groups, g) for g in range(len(groups))])


def resize_mask(mask, grid=(7, 7)):
    """Any-overlap downscale: a coarse cell is set if any fine cell under it is."""
    mask = np.asarray(mask, dtype=bool)
    Hf, Wf = mask.shape
    H, W = grid
    out = np.zeros((H, W), dtype=bool)
    for i in range(H):
        r0, r1 = (i * Hf) // H, -((-(i + 1) * Hf) // H)
        for j in range(W):
            c0, c1 = (j * Wf) // W, -((-(j + 1) * Wf) // W)
            out[i, j] = mask[r0:r1, c0:c1].any()
    return out


# -- incidence and counts ---------------------------------------------------

@dataclass
class IncidenceMatrix:
    Z: np.ndarray                 # objects x videos, 0/1
    object_names: list
    video_ids: list
    video_activity: list          # activity label per video
    rejected: int = 0             # records whose video has no label


@dataclass
class ActivityObjectCounts:
    S: np.ndarray                 # activities x objects
    P: np.ndarray                 # column-normalized S
    activities: list
    zero_columns: np.ndarray      # bool per object: S column all zero


def build_incidence(records, video_activity, threshold=CONFIDENCE_THRESHOLD,
                    vocabulary=HOME_OBJECTS):
    """Binary object/video incidence from a stream of detections.

    ``records`` yields DetectionBox objects (or raw dicts with the JSONL
    keys). ``video_activity`` maps video id to activity label; every labeled
    video gets a column even if nothing was detected in it.
    """
    vocab = list(vocabulary)
    obj_index = {name: i for i, name in enumerate(vocab)}
    video_ids = sorted(video_activity, key=str)
    vid_index = {v: k for k, v in enumerate(video_ids)}
    Z = np.zeros((len(vocab), len(video_ids)), dtype=np.int64)
    rejected = 0
    for rec in records:
        if isinstance(rec, dict):
            rec = DetectionBox.from_record(rec)
        if rec.confidence < threshold or rec.class_name not in obj_index:
            continue
        col = vid_index.get(rec.video_id)
        if col is None:
            rejected += 1
            continue
        Z[obj_index[rec.class_name], col] = 1
    return IncidenceMatrix(Z, vocab, video_ids, [video_activity[v] for v in video_ids], rejected)


def _activity_onehot(video_activity, activities=None):
    if activities is None:
        activities = sorted(set(video_activity), key=str)
    index = {a: k for k, a in enumerate(activities)}
    onehot = np.zeros((len(activities), len(video_activity)), dtype=np.int64)
    for v, a in enumerate(video_activity):
        if a not in index:
            raise DataError(f"video {v} has unknown activity {a!r}")
        onehot[index[a], v] = 1
    return onehot, list(activities)


def activity_counts(Z, video_activity, activities=None):
    """S[a, i] = number of videos of activity a containing object i; P = S / column sums."""
    Z = np.asarray(Z, dtype=np.int64)
    if Z.shape[1] != len(video_activity):
        raise DimensionError(f"Z has {Z.shape[1]} videos but {len(video_activity)} labels")
    onehot, activities = _activity_onehot(video_activity, activities)
    S = onehot @ Z.T
    col = S.sum(axis=0)
    zero = col == 0
    P = np.zeros(S.shape, dtype=np.float64)
    P[:, ~zero] = S[:, ~zero] / col[~zero]
    return ActivityObjectCounts(S, P, activities, zero)


def pairwise_pearson(P):
    """Population Pearson correlation between the columns of P.

    Pairs involving a zero-variance column are NaN (undefined); with fewer
    than two activities every pair is undefined. The diagonal is NaN too.
    """
    P = np.asarray(P, dtype=np.float64)
    n_act, n = P.shape
    corr = np.full((n, n), np.nan)
    if n_act < 2:
        return corr
    centered = P - P.mean(axis=0)
    var = (centered ** 2).mean(axis=0)
    ok = var > _VAR_EPS
    cov = centered.T @ centered / n_act
    denom = np.sqrt(np.outer(var, var))
    valid = np.outer(ok, ok)
    corr[valid] = cov[valid] / denom[valid]
    np.fill_diagonal(corr, np.nan)
    return corr


# -- grouping ---------------------------------------------------------------

@dataclass(frozen=True)
class MergeStep:
    first: tuple       # member object indices of the two merged groups
    second: tuple
    correlation: float  # NaN when chosen by the all-undefined fallback


@dataclass
class ObjectGrouping:
    groups: list                      # list of sorted tuples of object indices
    merge_trace: list = field(default_factory=list)
    object_names: list = None

    def named_groups(self):
        if self.object_names is None:
            return [list(g) for g in self.groups]
        return [[self.object_names[i] for i in g] for g in self.groups]

    def to_dict(self):
        return {
            "groups": [list(g) for g in self.groups],
            "group_names": self.named_groups(),
            "merge_trace": [
                {"merged": [list(s.first), list(s.second)],
                 "correlation": None if np.isnan(s.correlation) else s.correlation}
                for s in self.merge_trace
            ],
        }


def _pick_pair(corr, groups):
    """Minimum defined correlation; ties (within TIE_TOL) go to the smallest
    (min member, max member) key of the two groups' first members."""
    n = len(groups)
    iu, ju = np.triu_indices(n, k=1)
    vals = corr[iu, ju]
    defined = ~np.isnan(vals)
    if not defined.any():
        return 0, 1, float("nan")
    best = vals[defined].min()
    cand = defined & (vals <= best + TIE_TOL)
    keys = [(min(groups[i][0], groups[j][0]), max(groups[i][0], groups[j][0]), i, j)
            for i, j in zip(iu[cand], ju[cand])]
    _, _, i, j = min(keys)
    return int(i), int(j), float(corr[i, j])


def merge_groups(incidence, video_activity=None, target_groups=8):
    """Agglomerate objects until ``target_groups`` remain.

    ``incidence`` is an IncidenceMatrix or a raw objects x videos 0/1 array
    (then ``video_activity`` is required). Each step rebuilds group-level
    presence by OR over members, recomputes S, P and the correlations, and
    merges the least correlated pair.
    """
    names = None
    if isinstance(incidence, IncidenceMatrix):
        Z = incidence.Z
        names = incidence.object_names
        if video_activity is None:
            video_activity = incidence.video_activity
    else:
        Z = np.asarray(incidence)
    Z = Z.astype(bool)
    n_obj = Z.shape[0]
    if n_obj < target_groups:
        raise DataError(f"{n_obj} objects cannot form {target_groups} groups")
    onehot, _ = _activity_onehot(list(video_activity))
    groups = [(i,) for i in range(n_obj)]
    group_z = Z.copy()
    trace = []
    warned = False
    while len(groups) > target_groups:
        S = onehot @ group_z.T.astype(np.int64)
        col = S.sum(axis=0)
        P = np.where(col > 0, S / np.where(col > 0, col, 1), 0.0)
        corr = pairwise_pearson(P)
        i, j, c = _pick_pair(corr, groups)
        if np.isnan(c) and not warned:
            warnings.warn("all group correlations undefined; merging by index order",
                          RuntimeWarning, stacklevel=2)
            warned = True
        trace.append(MergeStep(groups[i], groups[j], c))
        merged = tuple(sorted(groups[i] + groups[j]))
        merged_z = group_z[i] | group_z[j]
        keep = [k for k in range(len(groups)) if k not in (i, j)]
        groups = [groups[k] for k in keep] + [merged]
        group_z = np.vstack([group_z[keep], merged_z[None, :]])
        order = sorted(range(len(groups)), key=lambda k: groups[k][0])
        groups = [groups[k] for k in order]
        group_z = group_z[order]
    return ObjectGrouping(groups, trace, names)
