"""Multi-task loss, mean per-class accuracy, synthetic clips and training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError, NumericalError
from .fusion import FusionModel, ModelConfig
from .numerics import AdamConfig, adam_step

__all__ = [
    "LossConfig",
    "TrainConfig",
    "SyntheticSample",
    "Metrics",
    "EvalResult",
    "TrainResult",
    "cross_entropy",
    "cross_entropy_grad_logits",
    "pose_mse",
    "pose_mse_grad",
    "total_loss",
    "batch_loss_and_grad",
    "mean_per_class_accuracy",
    "evaluate",
    "train",
    "stratified_split",
    "generate_synthetic",
    "body_template",
]

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    lambda_pose: float = 0.25
    delta_horizon: int = 3

    def __post_init__(self):
        if self.lambda_pose < 0:
            raise ConfigurationError(f"lambda_pose must be >= 0, got {self.lambda_pose}")
        if self.delta_horizon < 1:
            raise ConfigurationError(f"delta_horizon must be >= 1, got {self.delta_horizon}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.3
    seed: int = 0
    learning_rate: float = 0.001
    track_train_metrics: bool = False

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout {self.dropout} outside [0, 1)")


@dataclass
class SyntheticSample:
    pose: np.ndarray          # (T_p, J, 3)
    features: np.ndarray      # (T, H, W, C)
    masks: np.ndarray         # (G, H, W) 0/1
    label: int
    future_pose: np.ndarray   # (J, 3)
    clip_id: str = ""
    motion: dict = None       # generator parameters: amplitude, frequency, phase


@dataclass
class Metrics:
    per_class_accuracy: np.ndarray   # NaN where a class has no samples
    mean_per_class: float
    confusion: np.ndarray            # rows: true class, cols: predicted

    def to_dict(self):
        return {
            "mean_per_class": self.mean_per_class,
            "per_class_accuracy": [None if np.isnan(a) else float(a)
                                   for a in self.per_class_accuracy],
            "confusion": self.confusion.tolist(),
        }


# -- losses -----------------------------------------------------------------

def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class, log clamped at 1e-12."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    N, C = probs.shape
    if labels.shape[0] != N:
        raise DimensionError(f"{N} predictions vs {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= C):
        raise DataError(f"labels outside [0, {C})")
    picked = probs[np.arange(N), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def cross_entropy_grad_logits(probs, labels):
    """(probs - onehot) / N: gradient w.r.t. the pre-softmax logits."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    N = probs.shape[0]
    g = probs.copy()
    g[np.arange(N), labels] -= 1.0
    return g / N


def pose_mse(pred, target):
    """Mean over samples of the squared Euclidean error over all coordinates."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    pred = pred.reshape(pred.shape[0], -1) if pred.ndim == 3 else pred.reshape(1, -1)
    target = target.reshape(pred.shape)
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def pose_mse_grad(pred, target, n):
    return 2.0 * (np.asarray(pred) - np.asarray(target)) / n


def total_loss(act_loss, pose_loss, cfg=LossConfig()):
    if not (np.isfinite(act_loss) and np.isfinite(pose_loss)):
        raise NumericalError(f"non-finite loss terms: act={act_loss}, pose={pose_loss}")
    return act_loss + cfg.lambda_pose * pose_loss


def batch_loss_and_grad(model: FusionModel, batch, loss_cfg=LossConfig(), rng=None,
                        dropout=None, compute_grad=True):
    """Total, activity and pose losses over ``batch``; accumulates grads.

    Gradients are added to whatever the parameters already hold, one sample
    at a time in batch order.
    """
    n = len(batch)
    probs, preds = [], []
    for s in batch:
        res = model.forward(s.pose, s.features, s.masks, rng=rng, dropout=dropout)
        probs.append(res.probs)
        preds.append(res.pose.predicted_pose)
        if not (np.all(np.isfinite(res.probs)) and np.all(np.isfinite(res.pose.predicted_pose))
                and np.all(np.isfinite(s.future_pose))):
            raise NumericalError(f"non-finite forward values or target for clip {s.clip_id!r}")
        if compute_grad:
            dlogits = cross_entropy_grad_logits(res.probs, [s.label])[0] / n
            dpose = loss_cfg.lambda_pose * pose_mse_grad(
                res.pose.predicted_pose, s.future_pose, n
            )
            model.backward(res, dlogits, dpose)
    labels = [s.label for s in batch]
    act = cross_entropy(np.array(probs), labels)
    pose = pose_mse(np.array(preds), np.array([s.future_pose for s in batch]))
    return total_loss(act, pose, loss_cfg), act, pose, np.array(probs)


# -- metrics ----------------------------------------------------------------

def mean_per_class_accuracy(preds, labels, num_classes):
    """Macro accuracy: mean of per-class recall over classes that occur."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise DataError("cannot score an empty prediction set")
    if preds.shape != labels.shape:
        raise DimensionError(f"{preds.size} predictions vs {labels.size} labels")
    for name, arr in (("labels", labels), ("predictions", preds)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"{name} outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    counts = confusion.sum(axis=1)
    per_class = np.full(num_classes, np.nan)
    present = counts > 0
    per_class[present] = np.diag(confusion)[present] / counts[present]
    return Metrics(per_class, float(per_class[present].mean()), confusion)


@dataclass
class EvalResult:
    metrics: Metrics
    act_loss: float
    pose_loss: float
    total_loss: float


def evaluate(model: FusionModel, samples, loss_cfg=LossConfig()):
    """Inference-mode losses and metrics (no dropout, no gradients)."""
    if not samples:
        raise DataError("empty evaluation set")
    total, act, pose, probs = batch_loss_and_grad(model, samples, loss_cfg, compute_grad=False)
    preds = probs.argmax(axis=1)
    metrics = mean_per_class_accuracy(preds, [s.label for s in samples],
                                      model.config.num_classes)
    return EvalResult(metrics, act, pose, total)


# -- training loop ----------------------------------------------------------

@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # dict per epoch; epoch 0 = before training
    best_epoch: int = 0
    best_val_mpca: float = float("-inf")
    stopped_early: bool = False
    restored_best: bool = False

    def history_csv(self):
        cols = ("epoch", "train_loss", "val_mpca")
        lines = [",".join(cols)]
        for row in self.history:
            lines.append(",".join(_fmt(row.get(c)) for c in cols))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def train(model: FusionModel, train_set, val_set=None, train_cfg=TrainConfig(),
          loss_cfg=LossConfig(), adam_cfg=None):
    """Mini-batch Adam training with validation-based early stopping.

    Deterministic for a fixed ``train_cfg.seed``: shuffling and dropout draw
    from generators derived from it. The history starts with an epoch-0 row
    measured before any update. Validation mean per-class accuracy drives
    early stopping; on an early stop the best weights are restored.
    """
    if not train_set:
        raise DataError("empty training set")
    if adam_cfg is None:
        adam_cfg = AdamConfig(learning_rate=train_cfg.learning_rate)
    shuffle_seq, dropout_seq = np.random.SeedSequence(train_cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    params = list(model.parameters().values())
    model.zero_grad()
    result = TrainResult()
    best_state = None
    stale = 0

    def record(epoch, train_loss):
        row = {"epoch": epoch, "train_loss": train_loss}
        if train_cfg.track_train_metrics:
            ev = evaluate(model, train_set, loss_cfg)
            row["train_mpca"] = ev.metrics.mean_per_class
            row["train_pose_loss"] = ev.pose_loss
            if train_loss is None:
                row["train_loss"] = ev.total_loss
        if val_set:
            ev = evaluate(model, val_set, loss_cfg)
            row["val_mpca"] = ev.metrics.mean_per_class
            row["val_pose_loss"] = ev.pose_loss
            row["val_loss"] = ev.total_loss
        result.history.append(row)
        return row

    record(0, None)
    n = len(train_set)
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        weighted = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + train_cfg.batch_size]]
            loss, _, _, _ = batch_loss_and_grad(model, batch, loss_cfg, rng=dropout_rng,
                                                dropout=train_cfg.dropout)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            adam_step(params, adam_cfg)
            weighted += loss * len(batch)
        row = record(epoch, weighted / n)
        log.debug("epoch %d: %s", epoch, row)
        if not val_set:
            continue
        if row["val_mpca"] > result.best_val_mpca:
            result.best_val_mpca = row["val_mpca"]
            result.best_epoch = epoch
            best_state = model.state()
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                result.stopped_early = True
                break
    if result.stopped_early and best_state is not None:
        model.load_state(best_state)
        result.restored_best = True
    return result


def stratified_split(samples, val_fraction=0.2, seed=0):
    """Per-class random split; at least one validation clip per class with >= 2 clips."""
    rng = np.random.default_rng(seed)
    by_class = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    train_idx, val_idx = [], []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        rng.shuffle(idx)
        k = int(round(val_fraction * len(idx)))
        if len(idx) >= 2:
            k = min(max(k, 1), len(idx) - 1)
        else:
            k = 0
        val_idx.extend(idx[:k].tolist())
        train_idx.extend(idx[k:].tolist())
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(val_idx)]


# -- synthetic data ---------------------------------------------------------

def body_template(num_joints):
    """A frontal standing skeleton (metres, Y up) for 5 or 13 joints."""
    if num_joints == 13:
        return np.array([
            [0.00, 0.75, 0.0],                    # head
            [0.20, 0.50, 0.0], [-0.20, 0.50, 0.0],   # shoulders (left at +x)
            [0.28, 0.25, 0.0], [-0.28, 0.25, 0.0],   # elbows
            [0.30, 0.00, 0.0], [-0.30, 0.00, 0.0],   # wrists
            [0.12, 0.00, 0.0], [-0.12, 0.00, 0.0],   # hips
            [0.13, -0.45, 0.0], [-0.13, -0.45, 0.0],  # knees
            [0.14, -0.90, 0.0], [-0.14, -0.90, 0.0],  # ankles
        ])
    if num_joints == 5:
        return np.array([
            [0.00, 0.75, 0.0],
            [0.20, 0.50, 0.0], [-0.20, 0.50, 0.0],
            [0.12, 0.00, 0.0], [-0.12, 0.00, 0.0],
        ])
    raise ConfigurationError(f"no body template for J={num_joints} (use 5 or 13)")


def _class_trajectory(template, amp, freq, phase, t):
    # (len(t), J, 3)
    return template[None] + amp[None] * np.sin(freq * t[:, None, None] + phase[None])


def generate_synthetic(config: ModelConfig, num_classes=None, samples_per_class=10,
                       seed=0, horizon=3, motion_amplitude=0.08, feature_noise=0.3,
                       feature_amplitude=4.0):
    """Seeded multi-modal clips with class-specific motion, features and masks.

    Class ``c`` owns an oscillation frequency, per-joint amplitudes/phases,
    a grid cell and a channel prototype. Each clip:

    * pose: the class motion (random phase offset per clip) sampled at
      frames 0..T_p-1; ``future_pose`` is the same trajectory at frame
      T_p-1+horizon.
    * features: Gaussian noise plus the class prototype in the class cell
      at every time step.
    * masks: group ``c % G`` covers the class cell plus one random cell;
      each other group covers one random cell with probability 1/2.
    """
    rng = np.random.default_rng(seed)
    K = num_classes if num_classes is not None else config.num_classes
    T_p, J = config.pose_frames, config.num_joints
    T, (H, W), C, G = config.video_frames, config.grid, config.channels, config.num_groups
    if T_p % T:
        raise ConfigurationError(f"T={T} must divide T_p={T_p}")
    if K > H * W:
        raise ConfigurationError(f"{K} classes need distinct cells but the grid has {H * W}")
    template = body_template(J)
    freqs = 2 * np.pi * (1 + np.arange(K)) / (2.5 * T_p)
    amps = rng.uniform(0.3, 1.0, size=(K, J, 3)) * motion_amplitude
    amps[..., 2] *= 0.5
    phases = rng.uniform(0, 2 * np.pi, size=(K, J, 3))
    cells = rng.permutation(H * W)[:K]
    protos = rng.normal(size=(K, C))
    protos *= feature_amplitude / np.linalg.norm(protos, axis=1, keepdims=True)
    t_obs = np.arange(T_p, dtype=np.float64)
    t_future = np.array([T_p - 1 + horizon], dtype=np.float64)

    samples = []
    for c in range(K):
        for k in range(samples_per_class):
            shift = rng.uniform(0, 2 * np.pi)
            pose = _class_trajectory(template, amps[c], freqs[c], phases[c] + shift, t_obs)
            future = _class_trajectory(template, amps[c], freqs[c], phases[c] + shift,
                                       t_future)[0]
            feats = rng.normal(scale=feature_noise, size=(T, H, W, C))
            hc, wc = divmod(int(cells[c]), W)
            feats[:, hc, wc, :] += protos[c]
            masks = np.zeros((G, H, W))
            masks[c % G, hc, wc] = 1.0
            extra = rng.integers(H * W)
            masks[c % G].flat[extra] = 1.0
            for g in range(G):
                if g != c % G and rng.random() < 0.5:
                    masks[g].flat[rng.integers(H * W)] = 1.0
            motion = {"amplitude": amps[c], "frequency": float(freqs[c]),
                      "phase": phases[c] + shift}
            samples.append(SyntheticSample(pose, feats, masks, c, future,
                                           f"syn-{c:02d}-{k:03d}", motion))
    return samples
