"""SGD, RMSprop and Adam updates applied in place to lists of parameter arrays.

RMSprop and Adam both put epsilon inside the square root::

    rmsprop:  v <- beta v + (1 - beta) g^2
              w <- w - lr g / sqrt(v + eps)
    adam:     m <- b1 m + (1 - b1) g
              v <- b2 v + (1 - b2) g^2
              w <- w - lr (m / (1 - b1^t)) / sqrt(v / (1 - b2^t) + eps)
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ParameterError

OPTIMIZERS = ("sgd", "rmsprop", "adam")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 0.001
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    scratch: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ParameterError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ParameterError("learning rate must be non-negative")

    def _moments(self, params, need_m):
        if not self.v:
            self.v = [np.zeros_like(p) for p in params]
            if need_m:
                self.m = [np.zeros_like(p) for p in params]
        if len(self.v) != len(params):
            raise DimensionError("optimizer state was built for a different parameter list")


def _check(params, grads):
    if len(params) != len(grads):
        raise DimensionError("one gradient per parameter is required")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")


def sgd_step(state, params, grads):
    _check(params, grads)
    for p, g in zip(params, grads):
        p -= state.lr * g
    state.t += 1


CHUNK = 1 << 15


def _chunks(*arrays):
    """Matching flat views of ``arrays`` in cache-sized pieces.

    Running every elementwise update on one piece at a time keeps large
    parameter tensors from streaming through memory once per operation.
    """
    flat = [a.reshape(-1) for a in arrays]
    for lo in range(0, flat[0].size, CHUNK):
        yield [f[lo : lo + CHUNK] for f in flat]


def _scratch(state):
    if state.scratch is None:
        state.scratch = np.empty(CHUNK)
    return state.scratch


def rmsprop_step(state, params, grads):
    _check(params, grads)
    state._moments(params, need_m=False)
    buf = _scratch(state)
    for p, g, v in zip(params, grads, state.v):
        for pc, gc, vc in _chunks(p, g, v):
            s = buf[: pc.size]
            vc *= state.beta
            np.multiply(gc, gc, out=s)
            s *= 1.0 - state.beta
            vc += s
            np.add(vc, state.eps, out=s)
            np.sqrt(s, out=s)
            np.divide(gc, s, out=s)
            s *= state.lr
            pc -= s
    state.t += 1


def adam_step(state, params, grads):
    _check(params, grads)
    state._moments(params, need_m=True)
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    buf = _scratch(state)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for pc, gc, mc, vc in _chunks(p, g, m, v):
            s = buf[: pc.size]
            mc *= state.beta1
            np.multiply(gc, 1.0 - state.beta1, out=s)
            mc += s
            vc *= state.beta2
            np.multiply(gc, gc, out=s)
            s *= 1.0 - state.beta2
            vc += s
            np.divide(vc, c2, out=s)
            s += state.eps
            np.sqrt(s, out=s)
            np.divide(mc, s, out=s)
            s *= state.lr / c1
            pc -= s


_STEPS = {"sgd": sgd_step, "rmsprop": rmsprop_step, "adam": adam_step}


def step(state, params, grads):
    _STEPS[state.kind](state, params, grads)
