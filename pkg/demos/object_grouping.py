"""Group household objects by how rarely they share activities.

Detections for a small synthetic corpus are turned into an object/video
incidence matrix. Objects whose activity distributions are least correlated
are merged until eight groups remain, then one video's detections become
per-group spatial masks on the 7x7 feature grid.
"""

import warnings

import numpy as np

from adlfusion.objects import (
    HOME_OBJECTS,
    build_incidence,
    group_masks,
    merge_groups,
    temporal_object_mask,
)
from adlfusion.region import DetectionBox, full_activity_bbox, squarify

ACTIVITIES = ("cook", "eat", "watch_tv", "read", "clean")
# objects typical for each activity; anything else shows up at random
TYPICAL = {
    "cook": ("knife", "oven", "microwave", "refrigerator", "sink", "bowl"),
    "eat": ("fork", "spoon", "cup", "dining table", "sandwich", "pizza"),
    "watch_tv": ("tv", "remote", "couch", "laptop"),
    "read": ("book", "chair", "cell phone"),
    "clean": ("sink", "bottle", "toothbrush", "toilet"),
}


def synthetic_detections(rng, videos_per_activity=6):
    records, labels = [], {}
    for a in ACTIVITIES:
        for k in range(videos_per_activity):
            vid = f"{a}_{k}"
            labels[vid] = a
            records.append(DetectionBox(0, 200, 80, 420, 460, video_id=vid))
            for name in HOME_OBJECTS:
                p = 0.8 if name in TYPICAL[a] else 0.05
                if rng.random() < p:
                    x, y = rng.uniform(180, 420), rng.uniform(80, 440)
                    records.append(DetectionBox(int(rng.integers(0, 16)), x, y, x + 30, y + 25,
                                                class_name=name, video_id=vid, confidence=0.9))
    return records, labels


def main():
    rng = np.random.default_rng(1)
    records, labels = synthetic_detections(rng)
    inc = build_incidence(records, labels)
    print(f"{inc.Z.shape[0]} objects x {inc.Z.shape[1]} videos, "
          f"{int(inc.Z.sum())} object/video hits")

    with warnings.catch_warnings():
        # objects never seen have undefined correlations and merge by index
        warnings.simplefilter("ignore", RuntimeWarning)
        grouping = merge_groups(inc, target_groups=8)
    for g, names in enumerate(grouping.named_groups()):
        print(f"group {g}: {', '.join(names)}")

    vid = "cook_0"
    dets = [r for r in records if r.video_id == vid]
    crop = squarify(full_activity_bbox([d for d in dets if d.class_name == "person"]), (640, 480))
    per_object = np.array([
        temporal_object_mask([d for d in dets if d.class_name == name], crop)
        for name in HOME_OBJECTS
    ])
    masks = group_masks(per_object, grouping.groups)
    print(f"\nmasks for {vid} (group: cells covered)")
    for g, m in enumerate(masks):
        print(f"  {g}: {int(m.sum()):2d}")


if __name__ == "__main__":
    main()
