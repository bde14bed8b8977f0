"""Skeleton graph and the per-frame two-layer graph convolution.

The adjacency is dense: bones get ``alpha`` and every other joint pair gets
``beta``, so with the default weights the graph is complete with two edge
strengths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numerics import Parameter, glorot_uniform, relu, relu_backward

__all__ = [
    "ALPHA_CONNECTED",
    "BETA_DISCONNECTED",
    "EDGES_13",
    "EDGES_5",
    "default_edges",
    "SkeletonGraph",
    "build_adjacency",
    "normalize_adjacency",
    "GcnStack",
    "gcn_forward",
    "gcn_backward",
]

ALPHA_CONNECTED = 5.0
BETA_DISCONNECTED = 2.0

# indices follow pose.JOINT_NAMES_13
EDGES_13 = (
    (0, 1), (0, 2), (1, 2),          # head to shoulders, shoulder line
    (1, 3), (3, 5), (2, 4), (4, 6),  # arms
    (1, 7), (2, 8), (7, 8),          # torso sides, hip line
    (7, 9), (9, 11), (8, 10), (10, 12),  # legs
)
# head, l/r shoulder, l/r hip
EDGES_5 = ((0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4))


def default_edges(num_joints):
    if num_joints == 13:
        return EDGES_13
    if num_joints == 5:
        return EDGES_5
    # chain fallback for other sizes
    return tuple((i, i + 1) for i in range(num_joints - 1))


@dataclass
class SkeletonGraph:
    adjacency: np.ndarray
    edges: tuple
    alpha: float = ALPHA_CONNECTED
    beta: float = BETA_DISCONNECTED

    @property
    def num_joints(self):
        return self.adjacency.shape[0]

    def to_json(self):
        return json.dumps({
            "joints": self.num_joints,
            "edges": [list(e) for e in self.edges],
            "alpha": self.alpha,
            "beta": self.beta,
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return build_adjacency(
            [tuple(e) for e in d["edges"]], int(d["joints"]),
            float(d.get("alpha", ALPHA_CONNECTED)), float(d.get("beta", BETA_DISCONNECTED)),
        )


def build_adjacency(edges, num_joints, alpha=ALPHA_CONNECTED, beta=BETA_DISCONNECTED):
    A = np.full((num_joints, num_joints), float(beta))
    for i, j in edges:
        if i == j:
            raise ConfigurationError(f"self-edge ({i}, {j}) in skeleton edge list")
        if not (0 <= i < num_joints and 0 <= j < num_joints):
            raise ConfigurationError(f"edge ({i}, {j}) out of range for J={num_joints}")
        A[i, j] = A[j, i] = alpha
    np.fill_diagonal(A, 0.0)
    return SkeletonGraph(A, tuple((int(i), int(j)) for i, j in edges), float(alpha), float(beta))


def normalize_adjacency(g):
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    A = g.adjacency if isinstance(g, SkeletonGraph) else np.asarray(g, dtype=np.float64)
    A_hat = A + np.eye(A.shape[0])
    d = A_hat.sum(axis=1)
    if np.any(d <= 0):
        raise ConfigurationError("adjacency has a non-positive degree")
    inv_sqrt = 1.0 / np.sqrt(d)
    return A_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


@dataclass
class GcnStack:
    """Two graph-conv layers (3 -> h1 -> h2) plus a 3 -> h2 residual projection."""

    a_norm: np.ndarray
    w1: Parameter
    w2: Parameter
    w_res: Parameter

    @classmethod
    def init(cls, graph, rng, hidden=(128, 64), in_dim=3):
        h1, h2 = hidden
        return cls(
            normalize_adjacency(graph),
            Parameter(glorot_uniform(rng, in_dim, h1)),
            Parameter(glorot_uniform(rng, h1, h2)),
            Parameter(glorot_uniform(rng, in_dim, h2)),
        )

    @property
    def out_dim(self):
        return self.w2.value.shape[1]

    def parameters(self):
        return {"gcn.w1": self.w1, "gcn.w2": self.w2, "gcn.w_res": self.w_res}


def _propagate(a_norm, x):
    # x: (T, J, d); each frame mixed over joints independently
    return np.einsum("ij,tjd->tid", a_norm, x)


def gcn_forward(frames, stack: GcnStack):
    """frames: T_p x J x 3 -> (features T_p x J x h2, cache)."""
    frames = np.asarray(frames, dtype=np.float64)
    J = stack.a_norm.shape[0]
    if frames.ndim != 3 or frames.shape[1] != J:
        raise DimensionError(f"pose of shape {frames.shape} does not match a {J}-joint graph")
    ax = _propagate(stack.a_norm, frames)
    z1 = ax @ stack.w1.value
    h1 = relu(z1)
    ah1 = _propagate(stack.a_norm, h1)
    z2 = ah1 @ stack.w2.value
    out = relu(z2) + frames @ stack.w_res.value
    return out, (frames, ax, z1, ah1, z2)


def gcn_backward(d_out, cache, stack: GcnStack):
    """Accumulate weight gradients; the pose input gets none."""
    frames, ax, z1, ah1, z2 = cache
    stack.w_res.grad += np.einsum("tjc,tjd->cd", frames, d_out)
    dz2 = relu_backward(z2, d_out)
    stack.w2.grad += np.einsum("tjh,tjd->hd", ah1, dz2)
    dah1 = dz2 @ stack.w2.value.T
    dh1 = np.einsum("ij,tid->tjd", stack.a_norm, dah1)
    dz1 = relu_backward(z1, dh1)
    stack.w1.grad += np.einsum("tjc,tjd->cd", ax, dz1)
