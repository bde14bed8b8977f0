"""Pose-driven temporal attention, object-guided cross-attention and fusion.

One clip flows through the model as follows::

    pose (T_p, J, 3) --GCN--> H (T_p, J, C_p) --joint mean--> h (T_p, C_p)
    h --shared MLP--> u (T_p, 3J)
        u + flattened pose --1x1 temporal conv--> future pose (J, 3)
        u --conv1d, pool to T, dense--> h* (T,) --softmax--> alpha (T,)
    features f (T, H, W, C) * alpha --> f~ --flatten--> F (T*H*W, C)
    group masks (G, H, W) --masked mean over F--> Q (G, C)
    multi-head cross-attention(Q, K=V=F) --> A (G, C)
    [A flattened | GAP(f~) | mean_t h] --dense, dense, dense--> softmax

The auxiliary branch gets the pose residual, the attention branch does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DimensionError
from .gcn import (
    ALPHA_CONNECTED,
    BETA_DISCONNECTED,
    GcnStack,
    build_adjacency,
    default_edges,
    gcn_backward,
    gcn_forward,
)
from .numerics import (
    Parameter,
    conv1d_same,
    conv1d_same_backward,
    conv1x1_temporal,
    conv1x1_temporal_backward,
    dense_apply,
    dense_backward,
    dropout_mask,
    glorot_uniform,
    relu,
    relu_backward,
    softmax,
    softmax_backward,
)

__all__ = [
    "ModelConfig",
    "TemporalAttention",
    "AuxPosePrediction",
    "FusedEmbedding",
    "Dense",
    "SharedMLP",
    "TemporalAttentionBranch",
    "CrossAttentionBlock",
    "ClassifierHead",
    "FusionModel",
    "joint_mean_pool",
    "joint_mean_pool_backward",
    "shared_mlp",
    "shared_mlp_backward",
    "aux_pose_predict",
    "aux_pose_predict_backward",
    "temporal_attention",
    "temporal_attention_backward",
    "modulate",
    "modulate_backward",
    "flatten_tokens",
    "unflatten_tokens",
    "token_index",
    "pooling_matrix",
    "masked_query",
    "cross_attention",
    "cross_attention_backward",
    "fuse_and_classify",
    "fuse_and_classify_backward",
]


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and switches. Defaults follow the full-scale setup."""

    pose_frames: int = 32          # T_p
    video_frames: int = 8          # T
    num_joints: int = 13           # J
    grid: tuple = (7, 7)           # H, W
    channels: int = 1024           # C
    num_groups: int = 8            # G
    num_heads: int = 8
    num_classes: int = 35
    gcn_hidden: tuple = (128, 64)
    mlp_hidden: int = 128
    attn_conv_channels: int = 32
    attn_conv_kernel: int = 3
    attn_hidden: int = 32
    classifier_hidden: tuple = (256, 128)
    dropout: float = 0.3
    alpha_adj: float = ALPHA_CONNECTED
    beta_adj: float = BETA_DISCONNECTED
    edges: tuple = None
    # ablation switches
    use_pose_attention: bool = True
    use_object_context: bool = True
    use_pose_features: bool = True

    def __post_init__(self):
        if self.pose_frames < 1 or self.video_frames < 1:
            raise ConfigurationError("frame counts must be positive")
        if self.pose_frames % self.video_frames:
            raise ConfigurationError(
                f"video frames T={self.video_frames} must divide pose frames "
                f"T_p={self.pose_frames}"
            )
        if self.channels % self.num_heads:
            raise ConfigurationError(
                f"channels C={self.channels} not divisible by {self.num_heads} heads"
            )
        if self.num_groups < 1:
            raise ConfigurationError("need at least one object group")
        if self.num_classes < 2:
            raise ConfigurationError("need at least two classes")
        if self.attn_conv_kernel % 2 != 1:
            raise ConfigurationError("attention conv kernel size must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout rate {self.dropout} outside [0, 1)")

    @classmethod
    def tiny(cls, **overrides):
        """Small dims used by the gradient checks and desk-scale runs."""
        base = dict(
            pose_frames=8, video_frames=4, num_joints=5, grid=(3, 3), channels=8,
            num_groups=2, num_heads=2, num_classes=3, gcn_hidden=(8, 6), mlp_hidden=8,
            attn_conv_channels=4, attn_hidden=4, classifier_hidden=(32, 16),
        )
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def pool_factor(self):
        return self.pose_frames // self.video_frames

    @property
    def num_tokens(self):
        return self.video_frames * self.grid[0] * self.grid[1]

    @property
    def embedding_dim(self):
        d = self.channels
        if self.use_object_context:
            d += self.num_groups * self.channels
        if self.use_pose_features:
            d += self.gcn_hidden[1]
        return d

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["grid"] = list(self.grid)
        d["gcn_hidden"] = list(self.gcn_hidden)
        d["classifier_hidden"] = list(self.classifier_hidden)
        d["edges"] = None if self.edges is None else [list(e) for e in self.edges]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("grid", "gcn_hidden", "classifier_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("edges") is not None:
            d["edges"] = tuple(tuple(e) for e in d["edges"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- result types -----------------------------------------------------------

@dataclass
class TemporalAttention:
    weights: np.ndarray   # alpha, (T,)
    h_star: np.ndarray    # pre-softmax scores, (T,)


@dataclass
class AuxPosePrediction:
    predicted_pose: np.ndarray   # (J, 3)
    horizon: int = 3


@dataclass
class FusedEmbedding:
    z_context: np.ndarray
    visual_gap: np.ndarray
    pose_pooled: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.z_context, self.visual_gap, self.pose_pooled])


# -- parameter blocks -------------------------------------------------------

@dataclass
class Dense:
    w: Parameter
    b: Parameter

    @classmethod
    def init(cls, rng, d_in, d_out):
        return cls(Parameter(glorot_uniform(rng, d_in, d_out)), Parameter(np.zeros(d_out)))

    def __call__(self, x, activation="identity"):
        return dense_apply(x, self.w, self.b, activation)


@dataclass
class SharedMLP:
    hidden: Dense
    out: Dense


@dataclass
class TemporalAttentionBranch:
    conv_w: Parameter   # (k, 3J, channels)
    conv_b: Parameter
    hidden: Dense
    score: Dense        # -> 1 scalar per step


@dataclass
class CrossAttentionBlock:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    num_heads: int

    @classmethod
    def init(cls, rng, channels, num_heads):
        if channels % num_heads:
            raise ConfigurationError(f"channels {channels} not divisible by {num_heads} heads")
        return cls(*(Parameter(glorot_uniform(rng, channels, channels)) for _ in range(4)),
                   num_heads=num_heads)

    @property
    def head_dim(self):
        return self.wq.value.shape[0] // self.num_heads


@dataclass
class ClassifierHead:
    layers: list   # Dense blocks; ReLU + dropout on all but the last


# -- pose branch ops --------------------------------------------------------

def joint_mean_pool(H):
    """(T_p, J, C_p) -> (T_p, C_p) mean over joints."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 3 or H.shape[1] == 0:
        raise DimensionError(f"expected T_p x J x C_p with J >= 1, got {H.shape}")
    return H.mean(axis=1)


def joint_mean_pool_backward(dh, num_joints):
    return np.repeat(dh[:, None, :] / num_joints, num_joints, axis=1)


def shared_mlp(h_seq, pose_frames, mlp: SharedMLP):
    """Per-frame MLP C_p -> 3J; returns (m, u, cache).

    ``u`` is the MLP output, ``m = u + flattened pose`` the residual version
    fed to the future-pose head.
    """
    T_p, J = pose_frames.shape[:2]
    if h_seq.shape[0] != T_p:
        raise DimensionError(f"{h_seq.shape[0]} feature frames vs {T_p} pose frames")
    if mlp.out.w.value.shape[1] != 3 * J:
        raise DimensionError(
            f"MLP emits {mlp.out.w.value.shape[1]} values per frame, skeleton needs {3 * J}"
        )
    a1, c1 = mlp.hidden(h_seq, "relu")
    u, c2 = mlp.out(a1)
    m = u + pose_frames.reshape(T_p, 3 * J)
    return m, u, (c1, c2)


def shared_mlp_backward(du, cache):
    """Gradient w.r.t. the pooled pose sequence; ``du`` covers both branches."""
    c1, c2 = cache
    da1 = dense_backward(du, c2)
    return dense_backward(da1, c1)


def aux_pose_predict(m, conv_w: Parameter, num_joints, horizon=3):
    """Collapse (T_p, 3J) to a (J, 3) forecast with a 1x1 temporal conv."""
    T_p = m.shape[0]
    x = m.reshape(T_p, num_joints, 3).transpose(1, 2, 0)   # (J, 3, T_p)
    y = conv1x1_temporal(x, conv_w.value)
    return AuxPosePrediction(y[..., 0], horizon), x


def aux_pose_predict_backward(dpred, x, conv_w: Parameter):
    dx, dw = conv1x1_temporal_backward(x, conv_w.value, dpred[..., None])
    conv_w.grad += dw
    T_p = x.shape[2]
    return dx.transpose(2, 0, 1).reshape(T_p, -1)


def temporal_attention(u, num_video_frames, branch: TemporalAttentionBranch):
    """Scores one weight per video time step from the pose sequence ``u``."""
    T_p = u.shape[0]
    T = num_video_frames
    if T < 1 or T_p % T:
        raise ConfigurationError(f"T={T} must divide T_p={T_p}")
    n = T_p // T
    z = conv1d_same(u, branch.conv_w.value, branch.conv_b.value)
    c = relu(z)
    pooled = c.reshape(T, n, -1).mean(axis=1)
    d1, cache1 = branch.hidden(pooled, "relu")
    s, cache2 = branch.score(d1)
    h_star = s[:, 0]
    alpha = softmax(h_star)
    return TemporalAttention(alpha, h_star), (u, z, n, cache1, cache2)


def temporal_attention_backward(dalpha, att: TemporalAttention, cache, branch):
    u, z, n, cache1, cache2 = cache
    dh = softmax_backward(att.weights, dalpha)
    dd1 = dense_backward(dh[:, None], cache2)
    dpooled = dense_backward(dd1, cache1)
    dc = np.repeat(dpooled / n, n, axis=0)
    dz = relu_backward(z, dc)
    du, dw, db = conv1d_same_backward(u, branch.conv_w.value, dz)
    branch.conv_w.grad += dw
    branch.conv_b.grad += db
    return du


# -- visual ops -------------------------------------------------------------

def modulate(f, alpha):
    """Scale each temporal slice f[t] by alpha[t]."""
    f = np.asarray(f, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (f.shape[0],):
        raise DimensionError(f"attention of shape {alpha.shape} for {f.shape[0]} time steps")
    return f * alpha[:, None, None, None]


def modulate_backward(f, alpha, d_ft):
    """Return (df, dalpha)."""
    df = d_ft * alpha[:, None, None, None]
    dalpha = np.einsum("thwc,thwc->t", d_ft, f)
    return df, dalpha


def flatten_tokens(ft):
    """(T, H, W, C) -> (T*H*W, C), row-major over t, h, w."""
    T, H, W, C = ft.shape
    return ft.reshape(T * H * W, C)


def unflatten_tokens(F, shape):
    return F.reshape(shape)


def token_index(t, h, w, grid):
    H, W = grid
    return t * H * W + h * W + w


def pooling_matrix(masks, num_frames):
    """(G, H, W) masks -> (G, T*H*W) weights so that Q = weights @ F.

    Each row averages its mask cells over all time steps; an empty mask
    yields a zero row (inactive group).
    """
    masks = np.asarray(masks, dtype=np.float64)
    G = masks.shape[0]
    flat = np.tile(masks.reshape(G, -1), (1, num_frames))
    counts = masks.reshape(G, -1).sum(axis=1) * num_frames
    active = counts > 0
    weights = np.zeros_like(flat)
    weights[active] = flat[active] / counts[active, None]
    return weights, active


def masked_query(ft, mask):
    """Masked mean of f~ over the mask cells and all time steps.

    Returns ``(q, active)``; an empty mask gives the zero vector and
    ``active=False``.
    """
    ft = np.asarray(ft, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != ft.shape[1:3]:
        raise DimensionError(f"mask {mask.shape} vs feature grid {ft.shape[1:3]}")
    weights, active = pooling_matrix(mask[None], ft.shape[0])
    return (weights @ flatten_tokens(ft))[0], bool(active[0])


def cross_attention(Q, F, block: CrossAttentionBlock):
    """Multi-head scaled dot-product attention from G queries to N tokens.

    Keys and values both come from F. Returns ``(A, cache)``; ``cache['probs']``
    holds the (heads, G, N) attention rows.
    """
    C = Q.shape[1]
    if F.shape[1] != C:
        raise DimensionError(f"query width {C} vs token width {F.shape[1]}")
    if C % block.num_heads:
        raise ConfigurationError(f"channels {C} not divisible by {block.num_heads} heads")
    nh, dh = block.num_heads, C // block.num_heads
    G, N = Q.shape[0], F.shape[0]
    qp = Q @ block.wq.value
    k = F @ block.wk.value
    v = F @ block.wv.value
    qh = qp.reshape(G, nh, dh).transpose(1, 0, 2)
    kh = k.reshape(N, nh, dh).transpose(1, 0, 2)
    vh = v.reshape(N, nh, dh).transpose(1, 0, 2)
    scale = 1.0 / np.sqrt(dh)
    scores = qh @ kh.transpose(0, 2, 1) * scale
    probs = softmax(scores, axis=-1)
    oh = probs @ vh
    o = oh.transpose(1, 0, 2).reshape(G, C)
    out = o @ block.wo.value
    cache = dict(Q=Q, F=F, qh=qh, kh=kh, vh=vh, probs=probs, o=o, scale=scale)
    return out, cache


def cross_attention_backward(dA, cache, block: CrossAttentionBlock):
    """Accumulate projection grads; return (dQ, dF)."""
    Q, F = cache["Q"], cache["F"]
    qh, kh, vh, probs, o, scale = (cache[k] for k in ("qh", "kh", "vh", "probs", "o", "scale"))
    nh, G, dh = qh.shape
    N = kh.shape[1]
    C = nh * dh
    block.wo.grad += o.T @ dA
    do = dA @ block.wo.value.T
    doh = do.reshape(G, nh, dh).transpose(1, 0, 2)
    dprobs = doh @ vh.transpose(0, 2, 1)
    dvh = probs.transpose(0, 2, 1) @ doh
    dscores = softmax_backward(probs, dprobs, axis=-1) * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh
    dqp = dqh.transpose(1, 0, 2).reshape(G, C)
    dk = dkh.transpose(1, 0, 2).reshape(N, C)
    dv = dvh.transpose(1, 0, 2).reshape(N, C)
    block.wq.grad += Q.T @ dqp
    block.wk.grad += F.T @ dk
    block.wv.grad += F.T @ dv
    dQ = dqp @ block.wq.value.T
    dF = dk @ block.wk.value.T + dv @ block.wv.value.T
    return dQ, dF


# -- fusion head ------------------------------------------------------------

def fuse_and_classify(A, ft, pose_summary, head: ClassifierHead, dropout=0.0, rng=None):
    """Concatenate context, pooled video and pooled pose; classify.

    ``A`` or ``pose_summary`` may be None when that branch is switched off.
    Dropout is applied only when ``rng`` is given.
    """
    emb = FusedEmbedding(
        np.zeros(0) if A is None else A.reshape(-1),
        ft.mean(axis=(0, 1, 2)),
        np.zeros(0) if pose_summary is None else pose_summary,
    )
    x = emb.vector
    caches, masks = [], []
    for layer in head.layers[:-1]:
        x, c = layer(x, "relu")
        mask = dropout_mask(rng, x.shape, dropout)
        x = x * mask
        caches.append(c)
        masks.append(mask)
    logits, c = head.layers[-1](x)
    caches.append(c)
    probs = softmax(logits)
    return probs, logits, (emb, caches, masks)


def fuse_and_classify_backward(dlogits, cache, head: ClassifierHead, ft_shape):
    """Return (dA_flat, d_ft, d_pose_summary) from the logits gradient."""
    emb, caches, masks = cache
    dx = dense_backward(dlogits, caches[-1])
    for layer_cache, mask in zip(reversed(caches[:-1]), reversed(masks)):
        dx = dense_backward(dx * mask, layer_cache)
    nA = emb.z_context.size
    nC = emb.visual_gap.size
    dA = dx[:nA]
    dgap = dx[nA:nA + nC]
    dpose = dx[nA + nC:]
    T, H, W, _ = ft_shape
    d_ft = np.broadcast_to(dgap / (T * H * W), ft_shape).copy()
    return dA, d_ft, dpose


# -- the model --------------------------------------------------------------

@dataclass
class ForwardResult:
    probs: np.ndarray
    logits: np.ndarray
    pose: AuxPosePrediction
    attention: TemporalAttention
    cross_attention: np.ndarray      # (heads, G, N), empty if objects off
    query_active: np.ndarray
    cache: dict = field(default=None, repr=False)


class FusionModel:
    """All learnable parameters plus forward and backward for single clips."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = cfg = config
        rng = np.random.default_rng(seed)
        J = cfg.num_joints
        edges = cfg.edges if cfg.edges is not None else default_edges(J)
        self.graph = build_adjacency(edges, J, cfg.alpha_adj, cfg.beta_adj)
        self.gcn = GcnStack.init(self.graph, rng, cfg.gcn_hidden)
        c_p = cfg.gcn_hidden[1]
        self.mlp = SharedMLP(Dense.init(rng, c_p, cfg.mlp_hidden),
                             Dense.init(rng, cfg.mlp_hidden, 3 * J))
        self.aux_conv = Parameter(glorot_uniform(rng, cfg.pose_frames, 1))
        k, ch = cfg.attn_conv_kernel, cfg.attn_conv_channels
        self.attention = TemporalAttentionBranch(
            Parameter(glorot_uniform(rng, k * 3 * J, k * ch, shape=(k, 3 * J, ch))),
            Parameter(np.zeros(ch)),
            Dense.init(rng, ch, cfg.attn_hidden),
            Dense.init(rng, cfg.attn_hidden, 1),
        )
        self.cross = CrossAttentionBlock.init(rng, cfg.channels, cfg.num_heads)
        dims = (cfg.embedding_dim,) + tuple(cfg.classifier_hidden) + (cfg.num_classes,)
        self.head = ClassifierHead([Dense.init(rng, a, b) for a, b in zip(dims[:-1], dims[1:])])

    # parameters -----------------------------------------------------------

    def parameters(self):
        """Ordered name -> Parameter mapping of everything trainable."""
        p = dict(self.gcn.parameters())
        p["mlp.hidden.w"], p["mlp.hidden.b"] = self.mlp.hidden.w, self.mlp.hidden.b
        p["mlp.out.w"], p["mlp.out.b"] = self.mlp.out.w, self.mlp.out.b
        p["aux.conv_w"] = self.aux_conv
        p["attn.conv_w"], p["attn.conv_b"] = self.attention.conv_w, self.attention.conv_b
        p["attn.hidden.w"], p["attn.hidden.b"] = self.attention.hidden.w, self.attention.hidden.b
        p["attn.score.w"], p["attn.score.b"] = self.attention.score.w, self.attention.score.b
        for name in ("wq", "wk", "wv", "wo"):
            p[f"cross.{name}"] = getattr(self.cross, name)
        for i, layer in enumerate(self.head.layers):
            p[f"head.{i}.w"], p[f"head.{i}.b"] = layer.w, layer.b
        return p

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state(self):
        return {k: p.value.copy() for k, p in self.parameters().items()}

    def load_state(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise DimensionError(f"state is missing parameters {sorted(missing)}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise DimensionError(f"{k}: stored shape {v.shape} != model shape {p.value.shape}")
            p.value[...] = v

    # forward / backward ---------------------------------------------------

    def _check_inputs(self, pose, features, masks):
        cfg = self.config
        T_p, J = cfg.pose_frames, cfg.num_joints
        if pose.shape != (T_p, J, 3):
            raise DimensionError(f"pose shape {pose.shape}, expected {(T_p, J, 3)}")
        exp_f = (cfg.video_frames,) + tuple(cfg.grid) + (cfg.channels,)
        if features.shape != exp_f:
            raise DimensionError(f"feature shape {features.shape}, expected {exp_f}")
        exp_m = (cfg.num_groups,) + tuple(cfg.grid)
        if masks.shape != exp_m:
            raise DimensionError(f"mask shape {masks.shape}, expected {exp_m}")

    def forward(self, pose, features, masks, rng=None, dropout=None):
        """Run one clip. ``rng`` enables dropout (training mode); ``dropout``
        overrides the configured rate."""
        cfg = self.config
        pose = np.asarray(pose, dtype=np.float64)
        features = np.asarray(features, dtype=np.float64)
        masks = np.asarray(masks, dtype=np.float64)
        self._check_inputs(pose, features, masks)
        J, T = cfg.num_joints, cfg.video_frames

        H, gcn_cache = gcn_forward(pose, self.gcn)
        h = joint_mean_pool(H)
        m, u, mlp_cache = shared_mlp(h, pose, self.mlp)
        pred, aux_x = aux_pose_predict(m, self.aux_conv, J)

        if cfg.use_pose_attention:
            att, att_cache = temporal_attention(u, T, self.attention)
        else:
            att, att_cache = TemporalAttention(np.full(T, 1.0 / T), np.zeros(T)), None
        ft = modulate(features, att.weights)
        F = flatten_tokens(ft)

        A, cross_cache, pool_w, active = None, None, None, np.zeros(0, dtype=bool)
        probs_xa = np.zeros((0,))
        if cfg.use_object_context:
            pool_w, active = pooling_matrix(masks, T)
            Q = pool_w @ F
            A, cross_cache = cross_attention(Q, F, self.cross)
            probs_xa = cross_cache["probs"]

        pose_summary = h.mean(axis=0) if cfg.use_pose_features else None
        probs, logits, head_cache = fuse_and_classify(
            A, ft, pose_summary, self.head, cfg.dropout if dropout is None else dropout, rng
        )
        cache = dict(pose=pose, features=features, gcn=gcn_cache, h=h, mlp=mlp_cache,
                     aux_x=aux_x, att=att, att_cache=att_cache, pool_w=pool_w,
                     cross=cross_cache, head=head_cache, ft_shape=ft.shape)
        return ForwardResult(probs, logits, pred, att, probs_xa, active, cache)

    def backward(self, result: ForwardResult, dlogits, dpose):
        """Accumulate parameter grads from gradients at the logits and the
        predicted future pose."""
        cfg = self.config
        c = result.cache
        J, T_p = cfg.num_joints, cfg.pose_frames
        dA, d_ft, dpose_summary = fuse_and_classify_backward(
            dlogits, c["head"], self.head, c["ft_shape"]
        )
        dh = np.zeros_like(c["h"])
        if cfg.use_pose_features:
            dh += dpose_summary[None, :] / T_p
        if cfg.use_object_context:
            dQ, dF = cross_attention_backward(dA.reshape(cfg.num_groups, cfg.channels),
                                              c["cross"], self.cross)
            dF = dF + c["pool_w"].T @ dQ
            d_ft = d_ft + unflatten_tokens(dF, c["ft_shape"])
        du = aux_pose_predict_backward(np.asarray(dpose), c["aux_x"], self.aux_conv)
        if cfg.use_pose_attention:
            _, dalpha = modulate_backward(c["features"], c["att"].weights, d_ft)
            du = du + temporal_attention_backward(dalpha, c["att"], c["att_cache"],
                                                  self.attention)
        dh += shared_mlp_backward(du, c["mlp"])
        dH = joint_mean_pool_backward(dh, J)
        gcn_backward(dH, c["gcn"], self.gcn)

    def predict(self, pose, features, masks):
        return self.forward(pose, features, masks).probs
