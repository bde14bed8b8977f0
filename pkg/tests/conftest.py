import sys

import numpy as np
import pytest

from adlfusion.pose import JOINT_MAP_13, PoseSequence
from adlfusion.training import body_template


def frontal_sequence(rng, num_frames=6, jitter=0.03):
    """Random 13-joint sequence that is already normalized by construction.

    Frame 0 has the left shoulder's z equal to the mean z of right shoulder
    and right hip (zero facing angle); every frame tilts the shoulder line by
    +tau and the hip line by -tau (zero average tilt).
    """
    jm = JOINT_MAP_13
    base = body_template(13)
    frames = np.empty((num_frames, 13, 3))
    for t in range(num_frames):
        f = base + rng.normal(scale=jitter, size=base.shape)
        tau = rng.uniform(-0.2, 0.2)
        for (li, ri, half, sign) in ((jm.left_shoulder, jm.right_shoulder, 0.2, 1),
                                     (jm.left_hip, jm.right_hip, 0.12, -1)):
            centre = (f[li] + f[ri]) / 2
            w = half * rng.uniform(0.8, 1.2)
            d = np.array([w * np.cos(sign * tau), w * np.sin(sign * tau)])
            f[li, :2] = centre[:2] + d
            f[ri, :2] = centre[:2] - d
        if t == 0:
            f[jm.left_shoulder, 2] = (f[jm.right_shoulder, 2] + f[jm.right_hip, 2]) / 2
        frames[t] = f
    return PoseSequence(frames, jm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
