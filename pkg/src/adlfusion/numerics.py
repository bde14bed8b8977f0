"""Differentiable float64 primitives and the Adam optimizer.

Every primitive comes as a forward/backward pair. Forward functions return
their output (plus a cache where the backward needs intermediates); backward
functions take the upstream gradient and return gradients with respect to
their inputs, accumulating into :class:`Parameter` grads where parameters are
involved. Model code composes these by hand; there is no tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, NumericalError

__all__ = [
    "Parameter",
    "AdamConfig",
    "glorot_uniform",
    "matmul",
    "matmul_backward",
    "softmax",
    "softmax_backward",
    "relu",
    "relu_backward",
    "dense_apply",
    "dense_backward",
    "conv1x1_temporal",
    "conv1x1_temporal_backward",
    "conv1d_same",
    "conv1d_same_backward",
    "dropout_mask",
    "adam_step",
    "GradCheckReport",
    "finite_diff_check",
]


@dataclass
class Parameter:
    """A learnable tensor with its gradient and Adam moment buffers."""

    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    adam_m: np.ndarray = field(default=None, repr=False)
    adam_v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        for name in ("grad", "adam_m", "adam_v"):
            buf = getattr(self, name)
            if buf is None:
                setattr(self, name, np.zeros_like(self.value))
            else:
                buf = np.array(buf, dtype=np.float64)
                if buf.shape != self.value.shape:
                    raise DimensionError(
                        f"{name} shape {buf.shape} != value shape {self.value.shape}"
                    )
                setattr(self, name, buf)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


# -- matmul -----------------------------------------------------------------

def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def matmul_backward(a, b, dc):
    """Return (dA, dB) = (dC B^T, A^T dC)."""
    return dc @ b.T, a.T @ dc


# -- softmax ----------------------------------------------------------------

def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(x)):
        raise DomainError("softmax input contains non-finite values")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y, dy, axis=-1):
    """Vector-Jacobian product of softmax given its output ``y``."""
    return y * (dy - np.sum(dy * y, axis=axis, keepdims=True))


# -- relu -------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    # x is the pre-activation
    return dy * (x > 0)


# -- dense ------------------------------------------------------------------

_ACTIVATIONS = ("relu", "identity")


def dense_apply(x, w, b, activation="identity"):
    """y = act(x @ W + b) over the trailing axis of ``x``.

    ``w`` and ``b`` are Parameters of shape (d_in, d_out) and (d_out,).
    Returns ``(y, cache)``.
    """
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.value.shape[0]:
        raise DimensionError(
            f"dense input trailing dim {x.shape[-1]} != weight rows {w.value.shape[0]}"
            f" (input {x.shape}, weight {w.value.shape})"
        )
    z = x @ w.value + b.value
    y = relu(z) if activation == "relu" else z
    return y, (x, z, w, b, activation)


def dense_backward(dy, cache):
    """Accumulate dW, db into the layer's Parameters and return dx."""
    x, z, w, b, activation = cache
    if activation == "relu":
        dy = relu_backward(z, dy)
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    w.grad += x2.T @ dy2
    b.grad += dy2.sum(axis=0)
    return dy @ w.value.T


# -- temporal convolutions --------------------------------------------------

def conv1x1_temporal(x, w):
    """Collapse the trailing (temporal) axis with learned weights.

    x: (J, 3, T_p), w: (T_p, 1) -> (J, 3, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"temporal length {x.shape[-1]} of input {x.shape} != conv weight length "
            f"{w.shape[0]} of {w.shape}"
        )
    return x @ w


def conv1x1_temporal_backward(x, w, dy):
    """Return (dx, dw) for :func:`conv1x1_temporal`."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    dx = dy @ w.T
    dw = np.einsum("jct,jco->to", x, dy)
    return dx, dw


def conv1d_same(x, w, b):
    """Zero-padded 'same' 1D convolution along time.

    x: (T, d_in), w: (k, d_in, d_out) with odd k, b: (d_out,) -> (T, d_out).
    """
    k = w.shape[0]
    if k % 2 != 1:
        raise DimensionError(f"kernel size must be odd, got {k}")
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"conv input channels {x.shape} vs kernel {w.shape}")
    pad = k // 2
    T = x.shape[0]
    xp = np.pad(x, ((pad, pad), (0, 0)))
    out = np.broadcast_to(b, (T, w.shape[2])).copy()
    for i in range(k):
        out += xp[i:i + T] @ w[i]
    return out


def conv1d_same_backward(x, w, dy):
    """Return (dx, dw, db) for :func:`conv1d_same`."""
    k = w.shape[0]
    pad = k // 2
    T = x.shape[0]
    xp = np.pad(x, ((pad, pad), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(k):
        dw[i] = xp[i:i + T].T @ dy
        dxp[i:i + T] += dy @ w[i].T
    return dxp[pad:pad + T], dw, dy.sum(axis=0)


# -- dropout ----------------------------------------------------------------

def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask; all ones when ``rng`` is None or rate is 0."""
    if rng is None or rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# -- optimizer --------------------------------------------------------------

def adam_step(params, cfg=AdamConfig()):
    """One bias-corrected Adam update; grads are zeroed afterwards.

    ``params`` is an iterable of Parameters or a name -> Parameter mapping.
    """
    if isinstance(params, dict):
        params = params.values()
    for p in params:
        p.step_count += 1
        t = p.step_count
        g = p.grad
        p.adam_m *= cfg.beta1
        p.adam_m += (1.0 - cfg.beta1) * g
        p.adam_v *= cfg.beta2
        p.adam_v += (1.0 - cfg.beta2) * g * g
        m_hat = p.adam_m / (1.0 - cfg.beta1 ** t)
        v_hat = p.adam_v / (1.0 - cfg.beta2 ** t)
        p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        p.zero_grad()


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict
    tol: float
    worst_index: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(e < self.tol for e in self.max_rel_error.values())

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    def failures(self):
        return {k: v for k, v in self.max_rel_error.items() if not v < self.tol}


def finite_diff_check(loss_fn, params, h=1e-5, tol=1e-5, floor=1e-6):
    """Compare each ``param.grad`` entry against central differences.

    ``params`` maps names to Parameters whose ``grad`` already holds the
    analytic gradient of ``loss_fn()`` at the current values. ``loss_fn``
    takes no arguments, must be deterministic, and must not touch grads.
    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not isinstance(params, dict):
        params = {str(i): p for i, p in enumerate(params)}
    errors, worst = {}, {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        max_err, max_idx = 0.0, None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(
                    f"non-finite loss while perturbing {name}[{i}]: {f_plus}, {f_minus}"
                )
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(analytic[i]), abs(numeric), floor)
            err = abs(analytic[i] - numeric) / denom
            if err > max_err or max_idx is None:
                max_err, max_idx = err, i
        errors[name] = float(max_err)
        worst[name] = max_idx
    return GradCheckReport(errors, tol, worst)
