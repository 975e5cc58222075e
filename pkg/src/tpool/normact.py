"""Activations and vector normalisations with their gradients.

Functions operate elementwise, except :func:`nrelu` and
:func:`vec_normalize` which work per frame along the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

ACTIVATIONS = ("relu", "leaky_relu", "swish", "nrelu", "rpn", "linear")
NORMS = ("none", "l1", "l2")
NORM_DELTA = 1e-12


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = "nrelu"
    theta: float = 1.0
    epsilon: float = 1e-5
    alpha: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.kind!r}; choose from {', '.join(ACTIVATIONS)}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not np.isfinite(self.theta):
            raise ConfigError("theta must be finite")


@dataclass(frozen=True)
class NormSpec:
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in NORMS:
            raise ConfigError(f"unknown normalization {self.kind!r}; choose from {', '.join(NORMS)}")


def _same_shape(x, g):
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ShapeError(f"grad_out shape {g.shape} does not match input shape {x.shape}")
    return x, g


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def leaky_relu(x, alpha=0.01):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, alpha * x)


def swish(x):
    x = np.asarray(x, dtype=np.float64)
    return x * _sigmoid(x)


def linear(x):
    return np.asarray(x, dtype=np.float64)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def rpn(x, theta):
    """Regularised power normalisation ``sign(x) * (sqrt(|x| + theta^2) - |theta|)``."""
    x = np.asarray(x, dtype=np.float64)
    t2 = theta * theta
    return np.sign(x) * (np.sqrt(np.abs(x) + t2) - np.sqrt(t2))


def nrelu(x, epsilon=1e-5):
    """``relu(x) / (max(relu(x)) + epsilon)`` with the max taken per frame."""
    r = relu(x)
    return r / (np.max(r, axis=-1, keepdims=True) + epsilon)


def vec_normalize(x, kind="l2"):
    x = np.asarray(x, dtype=np.float64)
    if kind == "none":
        return x.copy()
    return x / (_norm(x, kind) + NORM_DELTA)


def _norm(x, kind):
    if kind == "l2":
        return np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    if kind == "l1":
        return np.sum(np.abs(x), axis=-1, keepdims=True)
    raise ConfigError(f"unknown normalization {kind!r}")


def backward_relu(x, grad_out):
    x, g = _same_shape(x, grad_out)
    return g * (x > 0)


def backward_leaky_relu(x, grad_out, alpha=0.01):
    x, g = _same_shape(x, grad_out)
    return g * np.where(x > 0, 1.0, alpha)


def backward_swish(x, grad_out):
    x, g = _same_shape(x, grad_out)
    s = _sigmoid(x)
    return g * (s + x * s * (1.0 - s))


def backward_linear(x, grad_out):
    _, g = _same_shape(x, grad_out)
    return g.copy()


def backward_rpn(x, theta, grad_out):
    """Returns ``(grad_x, grad_theta)``; ``grad_theta`` is summed over all elements."""
    x, g = _same_shape(x, grad_out)
    root = np.sqrt(np.abs(x) + theta * theta)
    gx = g / (2.0 * root)
    dtheta = np.sign(x) * (theta / root - np.sign(theta))
    return gx, float(np.sum(g * dtheta))


def backward_nrelu(x, grad_out, epsilon=1e-5):
    x, g = _same_shape(x, grad_out)
    r = np.maximum(x, 0.0)
    arg = np.argmax(r, axis=-1)[..., None]  # earliest maximiser on ties
    m = np.take_along_axis(r, arg, axis=-1)
    denom = m + epsilon
    gr = g / denom
    gm = -np.sum(g * r, axis=-1, keepdims=True) / (denom * denom)
    np.put_along_axis(gr, arg, np.take_along_axis(gr, arg, axis=-1) + gm, axis=-1)
    return gr * (x > 0)


def backward_vec_normalize(x, grad_out, kind="l2"):
    x, g = _same_shape(x, grad_out)
    if kind == "none":
        return g.copy()
    n = _norm(x, kind)
    denom = n + NORM_DELTA
    dot = np.sum(g * x, axis=-1, keepdims=True)
    if kind == "l2":
        dn = np.divide(x, n, out=np.zeros_like(x), where=n > 0)
    else:
        dn = np.sign(x)
    return g / denom - dot / (denom * denom) * dn


def activate(x, spec: ActivationSpec, theta: float | None = None):
    """Apply ``spec``; ``theta`` overrides ``spec.theta`` for learned RPN layers."""
    k = spec.kind
    if k == "relu":
        return relu(x)
    if k == "leaky_relu":
        return leaky_relu(x, spec.alpha)
    if k == "swish":
        return swish(x)
    if k == "nrelu":
        return nrelu(x, spec.epsilon)
    if k == "rpn":
        return rpn(x, spec.theta if theta is None else theta)
    return linear(x)


def activate_backward(x, spec: ActivationSpec, grad_out, theta: float | None = None):
    """Returns ``(grad_x, grad_theta)``; ``grad_theta`` is ``None`` unless ``spec.kind == 'rpn'``."""
    k = spec.kind
    if k == "rpn":
        return backward_rpn(x, spec.theta if theta is None else theta, grad_out)
    if k == "relu":
        gx = backward_relu(x, grad_out)
    elif k == "leaky_relu":
        gx = backward_leaky_relu(x, grad_out, spec.alpha)
    elif k == "swish":
        gx = backward_swish(x, grad_out)
    elif k == "nrelu":
        gx = backward_nrelu(x, grad_out, spec.epsilon)
    else:
        gx = backward_linear(x, grad_out)
    return gx, None
