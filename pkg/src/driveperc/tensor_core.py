"""Float64 array kernels and the seeded generator used across the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, laid out
channels-first (``C, H, W`` or ``N, C, H, W``) in row-major order.  The
spatial kernels below accept either a single ``C x H x W`` tensor or a
batch with a leading ``N`` axis.

Convolution follows the cross-correlation convention (the kernel is not
flipped).  ``"same"`` padding pads with zeros so that the output has
``ceil(H / stride)`` rows; when the total padding is odd the extra row
(column) goes to the bottom (right).
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

__all__ = [
    "Prng",
    "as_tensor",
    "conv2d",
    "conv2d_backward",
    "same_padding",
    "maxpool2d",
    "maxpool2d_backward",
    "resize_bilinear",
    "resize_bilinear_backward",
    "bilinear_upsample",
    "concat_channels",
    "matmul",
    "elementwise",
    "reduce",
    "argmax",
    "reshape",
    "pad",
]

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Prng:
    """SplitMix64 generator.

    The n-th output is ``mix(seed + n * 0x9E3779B97F4A7C15)`` (mod 2**64),
    where ``mix`` is the standard SplitMix64 finaliser, so a whole block of
    outputs can be produced at once with wrapping uint64 arithmetic.  Floats
    use the top 53 bits: ``(x >> 11) * 2**-53``.  Normal deviates come from
    Box-Muller on consecutive pairs of floats.

    A generator is single-owner.  Independent streams for parallel workers
    are derived with :meth:`split`, which seeds a child from the next output.
    """

    def __init__(self, seed=0):
        self.state = int(seed) & _MASK64

    def __repr__(self):
        return f"Prng(state=0x{self.state:016x})"

    def _block(self, n):
        n = int(n)
        if n < 0:
            raise ParameterError("block length must be non-negative")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & _MASK64
        return z

    def next_u64(self):
        return int(self._block(1)[0])

    def random(self, size=None):
        """Uniform floats in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._block(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low, high, size=None):
        return low + (high - low) * self.random(size)

    def integers(self, high, size=None):
        """Integers in [0, high) by scaling a uniform float."""
        if high <= 0:
            raise ParameterError("high must be positive")
        u = self.random(size)
        return int(u * high) if size is None else np.floor(u * high).astype(np.int64)

    def normal(self, size, mean=0.0, std=1.0):
        n = int(np.prod(size))
        m = (n + 1) // 2
        u = self.random(2 * m).reshape(2, m)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        phi = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(phi), r * np.sin(phi)])[:n]
        return mean + std * z.reshape(size)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top down."""
        perm = list(range(n))
        if n < 2:
            return perm
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def split(self):
        return Prng(self.next_u64())


def as_tensor(x):
    return np.asarray(x, dtype=np.float64)


def _pair(v, name):
    if isinstance(v, (int, np.integer)):
        v = (int(v), int(v))
    v = tuple(int(a) for a in v)
    if len(v) != 2:
        raise ParameterError(f"{name} must be an int or a pair")
    return v


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")


def same_padding(size, kernel, stride):
    """(before, after) zero padding so the output has ceil(size / stride) cells."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _conv_padding(h, w, kh, kw, stride, padding):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding == "same":
        return same_padding(h, kh, stride[0]), same_padding(w, kw, stride[1])
    raise ParameterError(f"padding must be 'valid' or 'same', got {padding!r}")


def _im2col(xp, kh, kw, stride, out_h, out_w):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride[0] * (out_h - 1) + 1 : stride[0], : stride[1] * (out_w - 1) + 1 : stride[1]]
    n, c = xp.shape[:2]
    # rows ordered (n, oy, ox); columns ordered (c, ky, kx) to match kernel layout
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)


def _conv_geometry(x_shape, k_shape, stride, padding):
    n, c, h, w = x_shape
    if len(k_shape) != 4:
        raise DimensionError(f"kernels must be C_out x C_in x K_h x K_w, got {k_shape}")
    f, kc, kh, kw = k_shape
    if kc != c:
        raise DimensionError(f"input has {c} channels but kernels expect {kc}")
    if kh < 1 or kw < 1:
        raise DimensionError("kernel dimensions must be positive")
    (pt, pb), (pl, pr) = _conv_padding(h, w, kh, kw, stride, padding)
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    out_h = (hp - kh) // stride[0] + 1
    out_w = (wp - kw) // stride[1] + 1
    return (pt, pb, pl, pr), out_h, out_w


def conv2d(x, kernels, stride=1, padding="valid", bias=None):
    """2D cross-correlation of ``x`` with ``kernels`` (C_out x C_in x K_h x K_w)."""
    xb, squeeze = _batched(x)
    kernels = as_tensor(kernels)
    stride = _pair(stride, "stride")
    if min(stride) < 1:
        raise ParameterError("stride must be positive")
    (pt, pb, pl, pr), out_h, out_w = _conv_geometry(xb.shape, kernels.shape, stride, padding)
    xp = np.pad(xb, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else xb
    cols = _im2col(xp, kernels.shape[2], kernels.shape[3], stride, out_h, out_w)
    out = cols @ kernels.reshape(kernels.shape[0], -1).T
    if bias is not None:
        out += as_tensor(bias)
    n = xb.shape[0]
    out = np.ascontiguousarray(out.reshape(n, out_h, out_w, -1).transpose(0, 3, 1, 2))
    return out[0] if squeeze else out


def conv2d_backward(dout, x, kernels, stride=1, padding="valid"):
    """Gradients of :func:`conv2d` w.r.t. input, kernels and bias."""
    xb, squeeze = _batched(x)
    db_out, _ = _batched(dout)
    kernels = as_tensor(kernels)
    stride = _pair(stride, "stride")
    (pt, pb, pl, pr), out_h, out_w = _conv_geometry(xb.shape, kernels.shape, stride, padding)
    f, c, kh, kw = kernels.shape
    n = xb.shape[0]
    xp = np.pad(xb, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else xb
    cols = _im2col(xp, kh, kw, stride, out_h, out_w)
    dmat = db_out.transpose(0, 2, 3, 1).reshape(-1, f)
    dk = (dmat.T @ cols).reshape(kernels.shape)
    dbias = dmat.sum(axis=0)
    dcols = (dmat @ kernels.reshape(f, -1)).reshape(n, out_h, out_w, c, kh, kw)
    dxp = np.zeros(xp.shape)
    sh, sw = stride
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + sh * out_h : sh, j : j + sw * out_w : sw] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pt : pt + xb.shape[2], pl : pl + xb.shape[3]]
    return (dx[0] if squeeze else dx), dk, dbias


def maxpool2d(x, window=2, stride=None):
    """Max over each window; partial trailing windows are dropped.

    Returns ``(out, argmax)`` where ``argmax`` holds, per output cell, the
    row-major index of the winning element inside its window (ties resolve
    to the lowest index).
    """
    xb, squeeze = _batched(x)
    kh, kw = _pair(window, "window")
    if kh < 1 or kw < 1:
        raise DimensionError("pooling window must be non-empty")
    sh, sw = _pair(stride if stride is not None else (kh, kw), "stride")
    h, w = xb.shape[2:]
    if kh > h or kw > w:
        raise DimensionError(f"window {kh}x{kw} larger than input {h}x{w}")
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    win = sliding_window_view(xb, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :out_h, :out_w]
    flat = win.reshape(win.shape[:4] + (kh * kw,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool2d_backward(dout, argmax, input_shape, window=2, stride=None):
    db, squeeze = _batched(dout)
    idx = argmax[None] if squeeze else argmax
    kh, kw = _pair(window, "window")
    sh, sw = _pair(stride if stride is not None else (kh, kw), "stride")
    shape = tuple(input_shape)
    dx = np.zeros(((1,) + shape) if squeeze else shape)
    out_h, out_w = db.shape[2:]
    for i in range(kh):
        for j in range(kw):
            sel = np.where(idx == i * kw + j, db, 0.0)
            dx[:, :, i : i + sh * out_h : sh, j : j + sw * out_w : sw] += sel
    return dx[0] if squeeze else dx


def _interp_axis(n_in, n_out):
    """Source indices and weights for half-pixel bilinear resampling."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _interp_matrix(n_in, n_out):
    i0, i1, t = _interp_axis(n_in, n_out)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def resize_bilinear(x, out_h, out_w):
    """Bilinear resampling of the last two axes (align-corners = false).

    Source coordinate for output cell ``d`` is ``(d + 0.5) * in / out - 0.5``
    clamped to the valid range.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("resize needs at least two axes")
    if out_h < 1 or out_w < 1:
        raise ParameterError("output size must be positive")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x.copy()
    y0, y1, ty = _interp_axis(h, out_h)
    a = x[..., y0, :]
    rows = a + ty[:, None] * (x[..., y1, :] - a)
    x0, x1, tx = _interp_axis(w, out_w)
    b = rows[..., x0]
    out = b + tx * (rows[..., x1] - b)
    # lerp in a + t(b - a) form can overshoot by an ulp
    return np.clip(out, x.min(), x.max())


def resize_bilinear_backward(dout, in_h, in_w):
    dout = as_tensor(dout)
    out_h, out_w = dout.shape[-2:]
    ry = _interp_matrix(in_h, out_h)
    rx = _interp_matrix(in_w, out_w)
    return ry.T @ dout @ rx


def bilinear_upsample(x, factor):
    if int(factor) != factor or factor < 1:
        raise ParameterError("upsample factor must be a positive integer")
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError("upsample expects C x H x W or N x C x H x W")
    return resize_bilinear(x, x.shape[-2] * factor, x.shape[-1] * factor)


def concat_channels(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise DimensionError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    if a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise DimensionError(f"spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-3)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def elementwise(fn, *xs):
    """Apply ``fn`` to same-shaped tensors; no broadcasting."""
    xs = [as_tensor(x) for x in xs]
    if any(x.shape != xs[0].shape for x in xs):
        raise DimensionError("elementwise operands must share a shape")
    out = as_tensor(fn(*xs))
    if out.shape != xs[0].shape:
        raise DimensionError("elementwise function changed the shape")
    return out


_REDUCERS = {"sum": np.sum, "mean": np.mean, "max": np.max, "min": np.min}


def reduce(x, op, axis=None):
    x = as_tensor(x)
    if op not in _REDUCERS:
        raise ParameterError(f"unknown reduction {op!r}")
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for {x.ndim}-d tensor")
    return _REDUCERS[op](x, axis=axis)


def argmax(x, axis=None):
    """Index of the maximum; ties resolve to the lowest index."""
    return np.argmax(as_tensor(x), axis=axis)


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    return x.reshape(shape)


def pad(x, widths, value=0.0):
    x = as_tensor(x)
    if len(widths) != x.ndim:
        raise DimensionError("one (before, after) pair per axis is required")
    return np.pad(x, widths, constant_values=value)
