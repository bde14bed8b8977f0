"""Undo the camera view of a skeleton clip.

A standing person is turned 70 degrees about the vertical axis and leaned
15 degrees sideways, then normalized. The facing angle comes from the first
frame only and the lean is removed frame by frame, so a turn made mid-clip
survives normalization.
"""

import numpy as np

from adlfusion.pose import (
    JOINT_MAP_13,
    PoseSequence,
    compute_y_rotation,
    normalize_sequence,
    rotation_y,
    rotation_z,
    temporal_subsample,
)
from adlfusion.training import body_template


def main():
    frames = np.stack([body_template(13)] * 8)
    # the person turns a further 40 degrees over the last four frames
    for t in range(4, 8):
        frames[t] = frames[t] @ rotation_y(np.radians(10 * (t - 3))).T
    view = rotation_y(np.radians(70)) @ rotation_z(np.radians(15))
    seen = PoseSequence(frames @ view.T, JOINT_MAP_13)

    out, angles = normalize_sequence(seen)
    print(f"facing angle removed: {np.degrees(angles.alpha_y):6.1f} deg")
    print("lean removed per frame:", np.round(np.degrees(angles.beta_z), 1))
    for t in (0, 7):
        facing = np.degrees(compute_y_rotation(out.frames[t]))
        print(f"frame {t}: facing after normalization {facing:6.1f} deg")
    print("max joint error on the untouched frames:",
          f"{np.abs(out.frames[:4] - frames[:4]).max():.1e}")

    sub = temporal_subsample(out, stride=2)
    print(f"subsampled {out.num_frames} -> {sub.num_frames} frames")


if __name__ == "__main__":
    main()
