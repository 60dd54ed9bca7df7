"""Layer specifications and their forward/backward implementations.

A :class:`LayerSpec` is plain data (what the checkpoint stores); calling
:func:`make_layer` turns it into a runnable layer.  Activations move in
batches: ``N x C x H x W`` for feature maps, ``N x F`` after flattening.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import tensor_core as tc
from ..errors import DimensionError, ParameterError
from . import functional as F

KINDS = (
    "Conv2D",
    "Dense",
    "MaxPool",
    "Dropout",
    "BatchNorm",
    "Flatten",
    "GlobalAvgPool",
    "Activation",
    "Upsample",
    "ConcatMerge",
)


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)
    tap: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        p = self.params
        if self.kind == "Dropout" and not 0 <= p.get("rate", 0.0) < 1:
            raise ParameterError(f"dropout rate must be in [0, 1), got {p.get('rate')}")
        if self.kind == "BatchNorm" and not p.get("eps", 1e-5) > 0:
            raise ParameterError("batch-norm epsilon must be positive")
        act = p.get("activation", "linear")
        if act not in F.ACTIVATIONS:
            raise ParameterError(f"unknown activation {act!r}")
        if act == "elu" and not p.get("alpha", 1.0) > 0:
            raise ParameterError("ELU alpha must be positive")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "tap": self.tap}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})), d.get("tap"))


def Conv2D(filters, kernel, stride=1, padding="valid", activation="linear", alpha=1.0, tap=None):
    k = [kernel, kernel] if isinstance(kernel, int) else list(kernel)
    s = [stride, stride] if isinstance(stride, int) else list(stride)
    return LayerSpec("Conv2D", dict(filters=filters, kernel=k, stride=s, padding=padding, activation=activation, alpha=alpha), tap)


def Dense(units, activation="linear", alpha=1.0, tap=None):
    return LayerSpec("Dense", dict(units=units, activation=activation, alpha=alpha), tap)


def MaxPool(window=2, stride=None, tap=None):
    w = [window, window] if isinstance(window, int) else list(window)
    s = w if stride is None else ([stride, stride] if isinstance(stride, int) else list(stride))
    return LayerSpec("MaxPool", dict(window=w, stride=s), tap)


def Dropout(rate, tap=None):
    return LayerSpec("Dropout", dict(rate=rate), tap)


def BatchNorm(momentum=0.9, eps=1e-5, tap=None):
    return LayerSpec("BatchNorm", dict(momentum=momentum, eps=eps), tap)


def Flatten(tap=None):
    return LayerSpec("Flatten", {}, tap)


def GlobalAvgPool(tap=None):
    return LayerSpec("GlobalAvgPool", {}, tap)


def Activation(kind, alpha=1.0, tap=None):
    return LayerSpec("Activation", dict(activation=kind, alpha=alpha), tap)


def Upsample(factor, tap=None):
    return LayerSpec("Upsample", dict(factor=factor), tap)


def ConcatMerge(source, tap=None):
    return LayerSpec("ConcatMerge", dict(source=source), tap)


# ---------------------------------------------------------------------------


def he_normal(prng, shape, fan_in):
    return prng.normal(shape, std=np.sqrt(2.0 / fan_in))


def glorot_uniform(prng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return prng.uniform(-limit, limit, shape)


def init_weight(prng, shape, fan_in, fan_out, activation):
    if activation in ("relu", "elu"):
        return he_normal(prng, shape, fan_in)
    return glorot_uniform(prng, shape, fan_in, fan_out)


class Layer:
    """Base layer: no parameters, identity shape."""

    def __init__(self, spec):
        self.spec = spec
        self.params = []
        self.grads = []
        self.buffers = []
        self.in_shape = None
        self.out_shape = None

    def build(self, in_shape, prng):
        self.in_shape = tuple(in_shape)
        self.out_shape = self._out_shape(self.in_shape)
        self._init(prng)
        self.grads = [np.zeros_like(p) for p in self.params]
        return self.out_shape

    def _out_shape(self, in_shape):
        return in_shape

    def _init(self, prng):
        pass

    @property
    def activation(self):
        return self.spec.params.get("activation", "linear")

    def forward(self, x, train=False, prng=None, taps=None):
        raise NotImplementedError

    def backward(self, dout, skip_activation=False):
        raise NotImplementedError


class _Activated(Layer):
    """Helper for layers followed by an optional activation."""

    def _activate(self, z):
        self._z = z
        self._a = F.activation(self.activation, z, self.spec.params.get("alpha", 1.0))
        return self._a

    def _deactivate(self, dout, skip_activation):
        if skip_activation:
            return dout
        return F.activation_backward(self.activation, dout, self._z, self._a, self.spec.params.get("alpha", 1.0))


class Conv2DLayer(_Activated):
    def _out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"Conv2D expects C x H x W input, got {in_shape}")
        p = self.spec.params
        c, h, w = in_shape
        kh, kw = p["kernel"]
        sh, sw = p["stride"]
        if p["padding"] == "same":
            pads_h, pads_w = tc.same_padding(h, kh, sh), tc.same_padding(w, kw, sw)
        else:
            pads_h = pads_w = (0, 0)
        hp, wp = h + sum(pads_h), w + sum(pads_w)
        if kh > hp or kw > wp:
            raise DimensionError(f"kernel {kh}x{kw} larger than input {hp}x{wp}")
        return (p["filters"], (hp - kh) // sh + 1, (wp - kw) // sw + 1)

    def _init(self, prng):
        p = self.spec.params
        c = self.in_shape[0]
        kh, kw = p["kernel"]
        fan_in, fan_out = c * kh * kw, p["filters"] * kh * kw
        self.params = [
            init_weight(prng, (p["filters"], c, kh, kw), fan_in, fan_out, self.activation),
            np.zeros(p["filters"]),
        ]

    def forward(self, x, train=False, prng=None, taps=None):
        p = self.spec.params
        self._x = x
        return self._activate(tc.conv2d(x, self.params[0], p["stride"], p["padding"], bias=self.params[1]))

    def backward(self, dout, skip_activation=False):
        p = self.spec.params
        dz = self._deactivate(dout, skip_activation)
        dx, dk, db = tc.conv2d_backward(dz, self._x, self.params[0], p["stride"], p["padding"])
        self.grads = [dk, db]
        return dx


class DenseLayer(_Activated):
    def _out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise DimensionError(f"Dense expects a flat input, got {in_shape}; add Flatten")
        return (self.spec.params["units"],)

    def _init(self, prng):
        n_in, n_out = self.in_shape[0], self.spec.params["units"]
        self.params = [init_weight(prng, (n_in, n_out), n_in, n_out, self.activation), np.zeros(n_out)]

    def forward(self, x, train=False, prng=None, taps=None):
        self._x = x
        return self._activate(x @ self.params[0] + self.params[1])

    def backward(self, dout, skip_activation=False):
        dz = self._deactivate(dout, skip_activation)
        # written in place: the weight gradient can be hundreds of MB
        np.matmul(self._x.T, dz, out=self.grads[0])
        np.sum(dz, axis=0, out=self.grads[1])
        return dz @ self.params[0].T


class MaxPoolLayer(Layer):
    def _out_shape(self, in_shape):
        c, h, w = in_shape
        (kh, kw), (sh, sw) = self.spec.params["window"], self.spec.params["stride"]
        if kh > h or kw > w:
            raise DimensionError(f"pool window {kh}x{kw} larger than input {h}x{w}")
        return (c, (h - kh) // sh + 1, (w - kw) // sw + 1)

    def forward(self, x, train=False, prng=None, taps=None):
        p = self.spec.params
        self._x_shape = x.shape
        out, self._idx = tc.maxpool2d(x, p["window"], p["stride"])
        return out

    def backward(self, dout, skip_activation=False):
        p = self.spec.params
        return tc.maxpool2d_backward(dout, self._idx, self._x_shape, p["window"], p["stride"])


def dropout_forward(x, rate, train, prng):
    """Inverted dropout; returns ``(out, mask)`` where ``mask`` already carries the 1/(1-rate) scale."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, None
    if prng is None:
        raise ParameterError("train-mode dropout needs a Prng")
    mask = (prng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


class DropoutLayer(Layer):
    def forward(self, x, train=False, prng=None, taps=None):
        out, self._mask = dropout_forward(x, self.spec.params["rate"], train, prng)
        return out

    def backward(self, dout, skip_activation=False):
        return dout if self._mask is None else dout * self._mask


def batchnorm_forward(x, gamma, beta, running, momentum, eps, train):
    """Per-channel normalisation; updates ``running = [mean, var]`` in place when training.

    Returns ``(out, cache)``; running stats follow
    ``r <- momentum * r + (1 - momentum) * batch`` with the biased batch variance.
    """
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    if train:
        if x.shape[0] < 2:
            raise ParameterError("batch norm needs a batch of at least 2 in train mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running[0] *= momentum
        running[0] += (1.0 - momentum) * mean
        running[1] *= momentum
        running[1] += (1.0 - momentum) * var
    else:
        mean, var = running
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, (xhat, inv_std, axes, shape, train)


def batchnorm_backward(dout, gamma, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, axes, shape, train = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = dout.size // dbeta.size
    dx = (
        inv_std.reshape(shape)
        / m
        * (m * dxhat - dxhat.sum(axis=axes).reshape(shape) - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape))
    )
    return dx, dgamma, dbeta


class BatchNormLayer(Layer):
    def _init(self, prng):
        c = self.in_shape[0]
        self.params = [np.ones(c), np.zeros(c)]
        self.buffers = [np.zeros(c), np.ones(c)]

    def forward(self, x, train=False, prng=None, taps=None):
        p = self.spec.params
        out, self._cache = batchnorm_forward(
            x, self.params[0], self.params[1], self.buffers, p.get("momentum", 0.9), p.get("eps", 1e-5), train
        )
        return out

    def backward(self, dout, skip_activation=False):
        dx, dg, db = batchnorm_backward(dout, self.params[0], self._cache)
        self.grads = [dg, db]
        return dx


class FlattenLayer(Layer):
    def _out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, prng=None, taps=None):
        self._x_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, skip_activation=False):
        return dout.reshape(self._x_shape)


class GlobalAvgPoolLayer(Layer):
    def _out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"GlobalAvgPool expects C x H x W input, got {in_shape}")
        return (in_shape[0],)

    def forward(self, x, train=False, prng=None, taps=None):
        self._x_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout, skip_activation=False):
        n, c, h, w = self._x_shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), self._x_shape).copy()


class ActivationLayer(_Activated):
    def forward(self, x, train=False, prng=None, taps=None):
        return self._activate(x)

    def backward(self, dout, skip_activation=False):
        return self._deactivate(dout, skip_activation)


class UpsampleLayer(Layer):
    def _out_shape(self, in_shape):
        f = self.spec.params["factor"]
        c, h, w = in_shape
        return (c, h * f, w * f)

    def forward(self, x, train=False, prng=None, taps=None):
        self._hw = x.shape[-2:]
        return tc.bilinear_upsample(x, self.spec.params["factor"])

    def backward(self, dout, skip_activation=False):
        return tc.resize_bilinear_backward(dout, *self._hw)


class ConcatMergeLayer(Layer):
    """Concatenates the running activation with an earlier tapped output (running first)."""

    source_shape = None

    def _out_shape(self, in_shape):
        src = self.source_shape
        if src is None or src[1:] != in_shape[1:]:
            raise DimensionError(f"cannot merge {in_shape} with tap {self.spec.params['source']!r} of shape {src}")
        return (in_shape[0] + src[0],) + in_shape[1:]

    def forward(self, x, train=False, prng=None, taps=None):
        self._split = x.shape[1]
        return tc.concat_channels(x, taps[self.spec.params["source"]])

    def backward(self, dout, skip_activation=False):
        self.tap_grad = dout[:, self._split :]
        return dout[:, : self._split]


_CLASSES = {
    "Conv2D": Conv2DLayer,
    "Dense": DenseLayer,
    "MaxPool": MaxPoolLayer,
    "Dropout": DropoutLayer,
    "BatchNorm": BatchNormLayer,
    "Flatten": FlattenLayer,
    "GlobalAvgPool": GlobalAvgPoolLayer,
    "Activation": ActivationLayer,
    "Upsample": UpsampleLayer,
    "ConcatMerge": ConcatMergeLayer,
}


def make_layer(spec):
    return _CLASSES[spec.kind](spec)
