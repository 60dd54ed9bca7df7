"""8-bit images, netpbm I/O and pixel-level preprocessing.

Pixel coordinates put pixel centres on integers: column ``x`` runs left to
right, row ``y`` top to bottom.  Whenever floats are turned back into bytes
they are rounded half-up and clamped to [0, 255].
"""

import os
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import BoundsError, DimensionError, FormatError, ParameterError, UnsupportedFormatError

GRAY8 = "gray8"
RGB8 = "rgb8"

# BT.601 luma weights
KR, KG, KB = 0.299, 0.587, 0.114


@dataclass(frozen=True, eq=False)
class Image:
    """An 8-bit raster: ``pixels`` is ``H x W`` (gray8) or ``H x W x 3`` (rgb8, R,G,B order)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.dtype != np.uint8:
            raise ParameterError(f"pixels must be uint8, got {p.dtype}")
        if not (p.ndim == 2 or (p.ndim == 3 and p.shape[2] == 3)):
            raise DimensionError(f"pixels must be H x W or H x W x 3, got {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise DimensionError("image must be non-empty")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def format(self):
        return GRAY8 if self.pixels.ndim == 2 else RGB8

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return 1 if self.pixels.ndim == 2 else 3

    def tobytes(self):
        return self.pixels.tobytes()

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels) and self.format == other.format

    def __repr__(self):
        return f"Image({self.width}x{self.height}, {self.format})"


def to_bytes(values):
    """Round half-up and clamp floats into a uint8 array."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def from_tensor(t, scale=255.0):
    """C x H x W (or H x W) tensor in [0, 1] back to an Image."""
    t = np.asarray(t, dtype=np.float64) * scale
    if t.ndim == 3:
        if t.shape[0] == 1:
            t = t[0]
        elif t.shape[0] == 3:
            t = t.transpose(1, 2, 0)
        else:
            raise DimensionError(f"cannot make an image from {t.shape[0]} channels")
    return Image(to_bytes(t))


# ---------------------------------------------------------------------------
# netpbm I/O

_WS = b" \t\n\r\v\f"


def _header_token(data, pos):
    while pos < len(data):
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos] in _WS:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WS and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated header", offset=start)
    tok = data[start:pos]
    if not tok.isdigit():
        raise FormatError(f"expected a decimal number, got {tok[:16]!r}", offset=start)
    return int(tok), pos


def decode_netpbm(data):
    """Parse binary P5/P6 bytes into an Image."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {magic!r}, expected P5 or P6", offset=0)
    pos = 2
    width, pos = _header_token(data, pos)
    height, pos = _header_token(data, pos)
    maxval_at = pos
    maxval, pos = _header_token(data, pos)
    if width < 1 or height < 1:
        raise FormatError("image dimensions must be positive", offset=2)
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} unsupported, only 255", offset=maxval_at)
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    body = data[pos : pos + need]
    if len(body) < need:
        raise FormatError(f"pixel data truncated: need {need} bytes, have {len(body)}", offset=pos + len(body))
    pixels = np.frombuffer(body, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(pixels.reshape(shape).copy())


def encode_netpbm(image):
    magic = b"P5" if image.format == GRAY8 else b"P6"
    return magic + f"\n{image.width} {image.height}\n255\n".encode("ascii") + image.tobytes()


def read_image(path):
    """Read a binary PGM/PPM (or, with Pillow installed, a PNG)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    return decode_netpbm(data)


def _read_png(path):
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise UnsupportedFormatError("PNG support requires Pillow", offset=0) from exc
    with PILImage.open(path) as im:
        mode = "L" if im.mode in ("1", "L", "I", "I;16") else "RGB"
        return Image(np.asarray(im.convert(mode), dtype=np.uint8))


def write_image(image, path):
    """Write an Image as P5 (gray8) or P6 (rgb8)."""
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(image))


# ---------------------------------------------------------------------------
# colour


def _luma(r, g, b):
    # g + kr(r - g) + kb(b - g) == 0.299r + 0.587g + 0.114b, and is exact on grays
    return g + KR * (r - g) + KB * (b - g)


def to_grayscale(image):
    if image.format == GRAY8:
        return image
    p = image.pixels.astype(np.float64)
    return Image(to_bytes(_luma(p[..., 0], p[..., 1], p[..., 2])))


def rgb_to_yuv(image):
    """Full-range BT.601 YUV as a 3 x H x W tensor: Y in [0,1], U and V in [-0.5, 0.5]."""
    if image.format != RGB8:
        raise ParameterError("rgb_to_yuv needs an rgb8 image")
    p = image.pixels.astype(np.float64) / 255.0
    r, g, b = p[..., 0], p[..., 1], p[..., 2]
    y = _luma(r, g, b)
    u = (b - y) / (2.0 * (1.0 - KB))
    v = (r - y) / (2.0 * (1.0 - KR))
    return np.stack([y, u, v])


# ---------------------------------------------------------------------------
# Gaussian blur


@dataclass(frozen=True)
class GaussianKernelSpec:
    size: int = 5
    sigma: float = 1.0

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1 or self.size % 2 == 0:
            raise ParameterError(f"kernel size must be a positive odd integer, got {self.size}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")


def gaussian_kernel(spec):
    """Sample G(x, y) = exp(-(x^2 + y^2) / 2 sigma^2) / (2 pi sigma^2) at integer offsets, normalised."""
    r = spec.size // 2
    off = np.arange(-r, r + 1, dtype=np.float64)
    d2 = off[:, None] ** 2 + off[None, :] ** 2
    g = np.exp(-d2 / (2.0 * spec.sigma**2)) / (2.0 * np.pi * spec.sigma**2)
    return g / g.sum()


def blur_tensor(t, spec):
    """Convolve the last two axes with the Gaussian kernel, replicating edge pixels."""
    t = tc.as_tensor(t)
    k = gaussian_kernel(spec)
    r = spec.size // 2
    h, w = t.shape[-2:]
    if spec.size > h or spec.size > w:
        raise DimensionError(f"{spec.size}x{spec.size} kernel larger than {h}x{w} image")
    widths = [(0, 0)] * (t.ndim - 2) + [(r, r), (r, r)]
    p = np.pad(t, widths, mode="edge")
    out = np.zeros(t.shape)
    for dy in range(spec.size):
        for dx in range(spec.size):
            out += k[dy, dx] * p[..., dy : dy + h, dx : dx + w]
    return out


def gaussian_blur(img, spec=GaussianKernelSpec()):
    """Blur an Image (returns an Image) or a tensor (returns a tensor)."""
    if isinstance(img, Image):
        p = img.pixels.astype(np.float64)
        if img.format == RGB8:
            return Image(to_bytes(blur_tensor(p.transpose(2, 0, 1), spec).transpose(1, 2, 0)))
        return Image(to_bytes(blur_tensor(p, spec)))
    return blur_tensor(img, spec)


# ---------------------------------------------------------------------------
# geometry


def _planes(image):
    p = image.pixels.astype(np.float64)
    return p[None] if p.ndim == 2 else p.transpose(2, 0, 1)


def _unplanes(planes, fmt):
    b = to_bytes(planes)
    return Image(b[0] if fmt == GRAY8 else b.transpose(1, 2, 0))


def resize_bilinear(image, out_w, out_h):
    if out_w < 1 or out_h < 1:
        raise ParameterError("target size must be positive")
    return _unplanes(tc.resize_bilinear(_planes(image), out_h, out_w), image.format)


def crop(image, rect):
    """Crop ``rect = (x, y, w, h)`` in pixels."""
    x, y, w, h = (int(v) for v in rect)
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > image.width or y + h > image.height:
        raise BoundsError(f"crop rect {rect} outside {image.width}x{image.height} image")
    return Image(image.pixels[y : y + h, x : x + w].copy())


def flip_horizontal(image):
    return Image(image.pixels[:, ::-1].copy())


def normalize(image):
    """C x H x W float tensor with values in [0, 1]."""
    return _planes(image) / 255.0


def sample_bilinear(planes, xs, ys, fill=0.0):
    """Sample ``planes`` (C x H x W) at float coordinates; outside the source gives ``fill``."""
    c, h, w = planes.shape
    eps = 1e-9
    inside = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx, ty = xs - x0, ys - y0
    top = planes[:, y0, x0] + tx * (planes[:, y0, x1] - planes[:, y0, x0])
    bot = planes[:, y1, x0] + tx * (planes[:, y1, x1] - planes[:, y1, x0])
    out = top + ty * (bot - top)
    return np.where(inside, out, fill)


def affine_warp(image, matrix, fill=0):
    """Warp with the 2 x 3 matrix mapping source (x, y) to destination.

    Each destination pixel is inverse-mapped into the source and sampled
    bilinearly; samples falling outside the source are ``fill`` (black).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (2, 3):
        raise DimensionError(f"affine matrix must be 2 x 3, got {m.shape}")
    a, t = m[:, :2], m[:, 2]
    if abs(np.linalg.det(a)) < 1e-12:
        raise ParameterError("affine matrix is singular")
    inv = np.linalg.inv(a)
    ys, xs = np.mgrid[0 : image.height, 0 : image.width].astype(np.float64)
    dx, dy = xs - t[0], ys - t[1]
    sx = inv[0, 0] * dx + inv[0, 1] * dy
    sy = inv[1, 0] * dx + inv[1, 1] * dy
    out = sample_bilinear(_planes(image), sx, sy, fill=float(fill))
    return _unplanes(out, image.format)


def list_images(directory):
    """Sorted image filenames (ppm/pgm/png) inside ``directory``."""
    exts = (".ppm", ".pgm", ".png", ".pnm")
    return sorted(f for f in os.listdir(directory) if f.lower().endswith(exts))
