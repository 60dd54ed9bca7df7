"""Ordered layer graphs with named taps for skip connections."""

import numpy as np

from ..errors import DimensionError, ParameterError
from ..tensor_core import Prng
from .layers import ConcatMergeLayer, LayerSpec, make_layer

TRAIN = "train"
INFER = "infer"


class Model:
    """A sequential stack of layers; ``ConcatMerge`` layers may pull in any earlier tap.

    Parameters are initialised from ``seed``.  ``mode`` is ``"train"`` or
    ``"infer"`` and decides how Dropout and BatchNorm behave.
    """

    def __init__(self, specs, input_shape, seed=0, name="model"):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.name = name
        self.mode = INFER
        self.layers = []
        prng = Prng(seed)
        shape = self.input_shape
        tap_shapes = {}
        for i, spec in enumerate(self.specs):
            layer = make_layer(spec)
            if isinstance(layer, ConcatMergeLayer):
                src = spec.params.get("source")
                if src not in tap_shapes:
                    raise DimensionError(f"layer {i} (ConcatMerge) references unknown or later tap {src!r}")
                layer.source_shape = tap_shapes[src]
            try:
                shape = layer.build(shape, prng)
            except DimensionError as exc:
                raise DimensionError(f"layer {i} ({spec.kind}): {exc}") from exc
            if spec.tap is not None:
                if spec.tap in tap_shapes:
                    raise ParameterError(f"tap name {spec.tap!r} used twice")
                tap_shapes[spec.tap] = shape
            self.layers.append(layer)
        self.output_shape = shape

    def __repr__(self):
        return f"Model({self.name!r}, input={self.input_shape}, layers={len(self.layers)}, params={self.param_count()})"

    # -- parameters ---------------------------------------------------------

    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers]

    def param_count(self):
        return int(sum(p.size for p in self.params()))

    def shape_trace(self):
        """``(kind, output shape)`` per layer, starting with the input."""
        return [("Input", self.input_shape)] + [(l.spec.kind, l.out_shape) for l in self.layers]

    @property
    def output_activation(self):
        """Activation applied by the final layer, or ``"linear"``."""
        if self.layers and self.layers[-1].spec.kind in ("Dense", "Conv2D", "Activation"):
            return self.layers[-1].activation
        return "linear"

    def set_mode(self, mode):
        if mode not in (TRAIN, INFER):
            raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
        self.mode = mode
        return self

    # -- propagation --------------------------------------------------------

    def forward(self, x, prng=None):
        """Run a batch ``N x input_shape`` through the graph."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(f"input shape {x.shape[1:]} does not match model input {self.input_shape}")
        train = self.mode == TRAIN
        taps = {}
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train, prng=prng, taps=taps)
            except DimensionError as exc:
                raise DimensionError(f"layer {i} ({layer.spec.kind}): {exc}") from exc
            if layer.spec.tap is not None:
                taps[layer.spec.tap] = x
        return x

    def backward(self, grad, from_logits=False):
        """Propagate ``dL/d(output)`` back; fills each layer's ``grads``.

        With ``from_logits`` the incoming gradient is taken w.r.t. the
        pre-activation of the final layer, whose activation is skipped.
        Returns the gradient w.r.t. the input batch.
        """
        tap_grads = {}
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            layer = self.layers[i]
            tap = layer.spec.tap
            if tap is not None and tap in tap_grads:
                grad = grad + tap_grads.pop(tap)
            grad = layer.backward(grad, skip_activation=from_logits and i == last)
            if isinstance(layer, ConcatMergeLayer):
                src = layer.spec.params["source"]
                tap_grads[src] = tap_grads[src] + layer.tap_grad if src in tap_grads else layer.tap_grad
        return grad

    def copy_state_from(self, other):
        for a, b in zip(self.params() + self.buffers(), other.params() + other.buffers()):
            a[...] = b
