"""Central finite-difference checks of every layer kind and loss.

The error reported for one tensor is ``|a - n|_2 / max(|a|_2, |n|_2)`` where
``a`` is the analytic gradient and ``n`` the numerical one; a case's error is
the maximum over all of its parameter tensors and the input.  When both
norms are below ``ZERO_FLOOR`` (a gradient that is identically zero, such as
a bias feeding batch norm) the absolute difference is reported instead.
"""

import numpy as np

from ..tensor_core import Prng
from . import functional as F
from .layers import (
    Activation,
    BatchNorm,
    ConcatMerge,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool,
    Upsample,
)
from .model import INFER, TRAIN, Model
from .train import loss_and_grad

STEP = 1e-5
TOLERANCE = 1e-6
ZERO_FLOOR = 1e-7


def relative_error(a, n):
    a, n = np.ravel(a), np.ravel(n)
    diff = float(np.linalg.norm(a - n))
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return diff if scale < ZERO_FLOOR else diff / scale


def numerical_grad(fn, arr, h=STEP, coords=None):
    """Central differences of scalar ``fn()`` w.r.t. ``arr`` (perturbed in place and restored)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx) if coords is not None else flat.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        out[k] = (up - down) / (2 * h)
    return out if coords is not None else out.reshape(arr.shape)


def check_model(model, x, y, loss_kind, mode=TRAIN, dropout_seed=0, fused=True, coords_per_tensor=None, seed=0):
    """Relative errors ``{tensor name: error}`` for every parameter tensor and the input.

    Dropout masks are replayed from ``dropout_seed`` on every evaluation so
    the function being differentiated is deterministic.  With
    ``coords_per_tensor`` only that many random entries per tensor are
    probed (for large models).
    """
    model.set_mode(mode)
    x = np.array(x, dtype=np.float64)

    def run():
        return model.forward(x, prng=Prng(dropout_seed))

    def objective():
        return F.loss(loss_kind, y, run())

    out = run()
    if fused:
        _, grad, from_logits = loss_and_grad(model, y, out, loss_kind)
    else:
        grad, from_logits = F.loss_grad(loss_kind, y, out), False
    dx = model.backward(grad, from_logits=from_logits)
    analytic = [g.copy() for g in model.grads()]

    pick = Prng(seed)
    errors = {}
    tensors = [(f"param{i}", p, a) for i, (p, a) in enumerate(zip(model.params(), analytic))]
    tensors.append(("input", x, dx))
    for name, arr, a in tensors:
        coords = None
        if coords_per_tensor is not None and arr.size > coords_per_tensor:
            coords = sorted(set(int(c) for c in pick.integers(arr.size, coords_per_tensor)))
        n = numerical_grad(objective, arr, coords=coords)
        errors[name] = relative_error(a.reshape(-1)[coords] if coords is not None else a, n)
    model.set_mode(INFER)
    return errors


# ---------------------------------------------------------------------------
# the suite


def _layer_cases():
    """name -> (specs, per-sample input shape, mode)."""
    return {
        "Conv2D": ([Conv2D(3, 3, padding="same", activation="elu"), Conv2D(2, (3, 2), stride=(2, 1)), Flatten(), Dense(3)], (2, 6, 6), TRAIN),
        "Dense": ([Flatten(), Dense(5, activation="elu"), Dense(3)], (2, 3, 3), TRAIN),
        "MaxPool": ([Conv2D(2, 3, padding="same"), MaxPool(2), Flatten(), Dense(3)], (2, 7, 7), TRAIN),
        "MaxPoolOverlap": ([Conv2D(2, 3, padding="same"), MaxPool(3, stride=2), Flatten(), Dense(3)], (2, 7, 7), TRAIN),
        "Dropout": ([Conv2D(2, 3, padding="same"), Dropout(0.3), Flatten(), Dense(3)], (2, 5, 5), TRAIN),
        "DropoutOff": ([Conv2D(2, 3, padding="same"), Dropout(0.5), Flatten(), Dense(3)], (2, 5, 5), INFER),
        "BatchNorm": ([Conv2D(3, 3, padding="same"), BatchNorm(), Flatten(), Dense(3)], (2, 5, 5), TRAIN),
        "BatchNormDense": ([Flatten(), Dense(4), BatchNorm(), Dense(3)], (2, 3, 3), TRAIN),
        "BatchNormInfer": ([Conv2D(3, 3, padding="same"), BatchNorm(), Flatten(), Dense(3)], (2, 5, 5), INFER),
        "Flatten": ([Conv2D(2, 3), Flatten(), Dense(3)], (2, 5, 5), TRAIN),
        "GlobalAvgPool": ([Conv2D(4, 3, padding="same"), GlobalAvgPool(), Dense(3)], (2, 5, 5), TRAIN),
        "Activation:linear": ([Flatten(), Dense(5), Activation("linear"), Dense(3)], (2, 3, 3), TRAIN),
        "Activation:sigmoid": ([Flatten(), Dense(5), Activation("sigmoid"), Dense(3)], (2, 3, 3), TRAIN),
        "Activation:relu": ([Flatten(), Dense(5), Activation("relu"), Dense(3)], (2, 3, 3), TRAIN),
        "Activation:elu": ([Flatten(), Dense(5), Activation("elu", alpha=0.7), Dense(3)], (2, 3, 3), TRAIN),
        "Activation:softmax": ([Flatten(), Dense(5), Activation("softmax"), Dense(3)], (2, 3, 3), TRAIN),
        "Upsample": ([Conv2D(2, 3, padding="same"), Upsample(2), Conv2D(2, 3, stride=2), Flatten(), Dense(3)], (2, 4, 4), TRAIN),
        "Upsample3": ([Conv2D(2, 1), Upsample(3), Flatten(), Dense(3)], (1, 3, 3), TRAIN),
        "ConcatMerge": (
            [Conv2D(3, 3, padding="same", tap="skip"), MaxPool(2), Conv2D(2, 3, padding="same"), Upsample(2),
             ConcatMerge("skip"), Conv2D(2, 3), Flatten(), Dense(3)],
            (2, 6, 6),
            TRAIN,
        ),
    }


def _loss_cases():
    """name -> (output activation, loss kind, target kind, fused)."""
    cases = {}
    for kind, act, target in (
        ("mse", "linear", "real"),
        ("categorical_ce", "softmax", "onehot"),
        ("cross_entropy", "softmax", "soft"),
        ("binary_ce", "sigmoid", "binary"),
    ):
        for fused in (True, False):
            cases[f"loss:{kind}" + ("" if fused else ":unfused")] = (act, kind, target, fused)
    return cases


def _targets(prng, target, shape):
    if target == "real":
        return prng.normal(shape)
    if target == "onehot":
        y = np.zeros(shape)
        y[np.arange(shape[0]), prng.integers(shape[1], shape[0])] = 1.0
        return y
    if target == "soft":
        return F.softmax(prng.normal(shape))
    return (prng.random(shape) < 0.5).astype(np.float64)


def _direct_loss_error(kind, target, prng):
    """loss_grad against finite differences of loss on y_pred itself."""
    shape = (3, 4)
    y = _targets(prng, target, shape)
    pred = F.softmax(prng.normal(shape)) if kind != "mse" else prng.normal(shape)
    if kind == "binary_ce":
        pred = prng.uniform(0.1, 0.9, shape)
    n = numerical_grad(lambda: F.loss(kind, y, pred), pred)
    return relative_error(F.loss_grad(kind, y, pred), n)


def run_case(name, seed, batch=4):
    """Max relative error of one named case for one seed."""
    prng = Prng(seed * 7919 + 17)
    layers = _layer_cases()
    if name in layers:
        specs, shape, mode = layers[name]
        model = Model(specs, shape, seed=prng.next_u64())
        for p in model.params():
            p += 0.1 * prng.normal(p.shape)
        x = prng.normal((batch,) + shape)
        y = prng.normal((batch,) + model.output_shape)
        return max(check_model(model, x, y, "mse", mode=mode, dropout_seed=prng.next_u64()).values())
    act, kind, target, fused = _loss_cases()[name]
    model = Model([Flatten(), Dense(4, activation="elu"), Dense(3, activation=act)], (2, 2, 2), seed=prng.next_u64())
    x = prng.normal((batch, 2, 2, 2))
    y = _targets(prng, target, (batch, 3))
    err = max(check_model(model, x, y, kind, fused=fused).values())
    return max(err, _direct_loss_error(kind, target, prng))


def case_names():
    return list(_layer_cases()) + list(_loss_cases())


def run_suite(seeds=range(20), names=None, report=None):
    """``{case: max error over seeds}``; ``report(name, err)`` is called per case."""
    results = {}
    for name in names or case_names():
        worst = max(run_case(name, s) for s in seeds)
        results[name] = worst
        if report is not None:
            report(name, worst)
    return results
