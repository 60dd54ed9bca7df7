"""Mini-batch training and evaluation."""

import numpy as np

from ..errors import DimensionError, ParameterError
from . import functional as F
from . import optim
from .model import INFER, TRAIN


def loss_and_grad(model, y, out, kind):
    """Loss of ``out`` and the gradient to feed :meth:`Model.backward`.

    Softmax/CE and sigmoid/BCE outputs use the fused gradient w.r.t. logits.
    Returns ``(loss, grad, from_logits)``.
    """
    value = F.loss(kind, y, out)
    act = model.output_activation
    if act in ("softmax", "sigmoid"):
        fused = F.fused_output_grad(kind, act, y, model.layers[-1]._z)
        if fused is not None:
            return value, fused, True
    return value, F.loss_grad(kind, y, out), False


def _check_data(x, y):
    if len(x) == 0:
        raise ParameterError("no training samples")
    if len(x) != len(y):
        raise DimensionError(f"{len(x)} inputs but {len(y)} targets")


def batch_slices(n, batch_size):
    """Consecutive slices of ``range(n)``; a trailing batch of one joins its predecessor
    (batch norm cannot train on a single sample)."""
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        del bounds[-2]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def train_epoch(model, x, y, loss_kind, state, prng, batch_size=64):
    """One pass over ``(x, y)`` in a seeded shuffled order; returns the mean sample loss."""
    _check_data(x, y)
    if batch_size < 1:
        raise ParameterError("batch size must be positive")
    model.set_mode(TRAIN)
    order = np.array(prng.permutation(len(x)))
    total = 0.0
    for sl in batch_slices(len(x), batch_size):
        idx = order[sl]
        xb, yb = x[idx], y[idx]
        out = model.forward(xb, prng=prng)
        value, grad, from_logits = loss_and_grad(model, yb, out, loss_kind)
        model.backward(grad, from_logits=from_logits)
        optim.step(state, model.params(), model.grads())
        total += value * len(idx)
    model.set_mode(INFER)
    return total / len(x)


def predict(model, x, batch_size=64):
    """Infer-mode outputs for every sample, batch by batch."""
    prev = model.mode
    model.set_mode(INFER)
    try:
        outs = [model.forward(x[s : s + batch_size]) for s in range(0, len(x), batch_size)]
    finally:
        model.set_mode(prev)
    return np.concatenate(outs) if outs else np.zeros((0,) + model.output_shape)


def evaluate(model, x, y, loss_kind, metrics=None, batch_size=64):
    """Infer-mode loss over all samples plus ``{name: fn(y_true, y_pred)}`` metrics."""
    _check_data(x, y)
    pred = predict(model, x, batch_size)
    total = 0.0
    for s in range(0, len(x), batch_size):
        total += F.loss(loss_kind, y[s : s + batch_size], pred[s : s + batch_size]) * len(pred[s : s + batch_size])
    results = {name: fn(y, pred) for name, fn in (metrics or {}).items()}
    return total / len(x), results


def fit(model, x, y, loss_kind, state, prng, epochs, batch_size=64, on_epoch=None):
    """Run ``epochs`` epochs; ``on_epoch(i, loss)`` may return True to stop early."""
    history = []
    for epoch in range(1, epochs + 1):
        value = train_epoch(model, x, y, loss_kind, state, prng, batch_size)
        history.append(value)
        if on_epoch is not None and on_epoch(epoch, value):
            break
    return history
