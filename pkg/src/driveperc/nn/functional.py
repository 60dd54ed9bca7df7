"""Activations, losses and their derivatives.

Losses are batch means.  For ``mse`` and ``binary_ce`` the mean runs over
every element; for ``categorical_ce`` and ``cross_entropy`` the class sum
runs over the last axis and the mean over everything before it.
Probabilities are clamped to ``[1e-12, 1 - 1e-12]`` before taking logs.
"""

import numpy as np

from ..errors import DimensionError, ParameterError

ACTIVATIONS = ("linear", "sigmoid", "relu", "elu", "softmax")
LOSSES = ("mse", "categorical_ce", "cross_entropy", "binary_ce")
PROB_CLAMP = 1e-12


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activation(kind, x, alpha=1.0):
    x = np.asarray(x, dtype=np.float64)
    if kind == "linear":
        return x.copy()
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "elu":
        return np.where(x >= 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    if kind == "softmax":
        return softmax(x)
    raise ParameterError(f"unknown activation {kind!r}")


def activation_grad(kind, x, alpha=1.0):
    """Elementwise derivative f'(x).  ELU'(0) is taken as 1.

    Softmax has no elementwise derivative; use :func:`activation_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "linear":
        return np.ones_like(x)
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "elu":
        return np.where(x >= 0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))
    if kind == "softmax":
        raise ParameterError("softmax derivative is a Jacobian; use activation_backward")
    raise ParameterError(f"unknown activation {kind!r}")


def activation_backward(kind, dout, x, y, alpha=1.0):
    """Vector-Jacobian product given the pre-activation ``x`` and output ``y``."""
    if kind == "softmax":
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))
    if kind == "linear":
        return dout
    if kind == "relu":
        return dout * (x > 0)
    if kind == "sigmoid":
        return dout * y * (1.0 - y)
    return dout * activation_grad(kind, x, alpha)


def _check(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"loss shapes differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise DimensionError("loss of an empty batch")
    return y_true, y_pred


def _batch_count(y):
    return 1 if y.ndim <= 1 else int(np.prod(y.shape[:-1]))


def loss(kind, y_true, y_pred):
    y_true, y_pred = _check(y_true, y_pred)
    if kind == "mse":
        return float(np.mean((y_true - y_pred) ** 2))
    p = np.clip(y_pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if kind in ("categorical_ce", "cross_entropy"):
        return float(-(y_true * np.log(p)).sum() / _batch_count(y_true))
    if kind == "binary_ce":
        return float(-np.mean(y_true * np.log(p) + (1.0 - y_true) * np.log1p(-p)))
    raise ParameterError(f"unknown loss {kind!r}")


def loss_grad(kind, y_true, y_pred):
    """Gradient of :func:`loss` with respect to ``y_pred``."""
    y_true, y_pred = _check(y_true, y_pred)
    if kind == "mse":
        return 2.0 * (y_pred - y_true) / y_true.size
    inside = (y_pred >= PROB_CLAMP) & (y_pred <= 1.0 - PROB_CLAMP)
    p = np.clip(y_pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if kind in ("categorical_ce", "cross_entropy"):
        return np.where(inside, -y_true / p, 0.0) / _batch_count(y_true)
    if kind == "binary_ce":
        return np.where(inside, (p - y_true) / (p * (1.0 - p)), 0.0) / y_true.size
    raise ParameterError(f"unknown loss {kind!r}")


def fused_output_grad(kind, act, y_true, logits):
    """Gradient w.r.t. the pre-activation of a softmax/CE or sigmoid/BCE output.

    Returns None when ``(kind, act)`` has no fused form.
    """
    y_true, logits = _check(y_true, logits)
    if act == "softmax" and kind in ("categorical_ce", "cross_entropy"):
        # reduces to (softmax - y) / N when each target row sums to one
        return (softmax(logits) * y_true.sum(axis=-1, keepdims=True) - y_true) / _batch_count(y_true)
    if act == "sigmoid" and kind == "binary_ce":
        return (sigmoid(logits) - y_true) / y_true.size
    return None
