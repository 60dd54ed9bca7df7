"""Synthetic scenes with known ground truth.

Every generator draws from a :class:`~driveperc.tensor_core.Prng`, so a seed
fixes the output bit for bit.
"""

import math
import os

import numpy as np

from . import imaging
from .imaging import Image
from .lanes import RoiPolygon, Segment

WHITE = (250, 250, 250)
YELLOW = (235, 200, 30)
ROAD = 90.0
SKY = (150.0, 190.0, 235.0)


def _noise(prng, shape, amp):
    return prng.uniform(-amp, amp, shape)


def _fill(canvas, mask, color):
    canvas[mask] = np.asarray(color, dtype=np.float64)


def _polygon(height, width, pts):
    return RoiPolygon(pts).mask(height, width)


def _disc(height, width, cx, cy, r):
    ys, xs = np.mgrid[0:height, 0:width]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r


def _thick_line_mask(height, width, x1, y1, x2, y2, half_width):
    """Pixels whose horizontal distance to the segment's centre line is <= half_width."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    u = (x2 - x1) / (y2 - y1)
    xc = x1 + (ys - y1) * u
    lo, hi = min(y1, y2), max(y1, y2)
    return (np.abs(xs - xc) <= half_width) & (ys >= lo) & (ys <= hi)


# ---------------------------------------------------------------------------
# lane frames


def road_frame(prng, width=320, height=180, color="white", extent=0.6, lateral=0.0):
    """Two-lane straight road.

    Returns the frame and the ground-truth lane centre lines as
    ``(left, right)`` segments running from the bottom row up to
    ``round(extent * height)``.  ``lateral`` shifts the lane bottoms in
    pixels, which is how side-camera views are simulated.
    """
    paint = YELLOW if color == "yellow" else WHITE
    horizon = 0.55 * height
    vx = prng.uniform(0.47, 0.53) * width
    lb = prng.uniform(0.20, 0.30) * width + lateral
    rb = prng.uniform(0.70, 0.80) * width + lateral
    canvas = np.empty((height, width, 3))
    canvas[:] = ROAD
    canvas[: int(math.ceil(horizon))] = SKY
    canvas += _noise(prng, (height, width, 1), 6.0)
    y_bottom = float(height - 1)
    y_top = float(round(extent * height))
    stop = horizon + 0.02 * height
    truth = []
    for xb in (lb, rb):
        u = (vx - xb) / (horizon - y_bottom)
        x_at = lambda y: xb + (y - y_bottom) * u  # noqa: E731
        mask = _thick_line_mask(height, width, x_at(height + 2.0), height + 2.0, x_at(stop), stop, 2.0)
        _fill(canvas, mask, paint)
        truth.append(Segment(x_at(y_bottom), y_bottom, x_at(y_top), y_top))
    return Image(imaging.to_bytes(canvas)), tuple(truth)


def driving_frame(prng, width=320, height=160, lateral=0.0):
    """Road frame plus a steering value tied to where the road converges."""
    state = prng.state
    img, (left, right) = road_frame(prng, width, height, lateral=lateral)
    mid_top = 0.5 * (left.x2 + right.x2)
    steering = float(np.clip((mid_top - 0.5 * width) / (0.05 * width), -1.0, 1.0))
    return img, steering, state


# ---------------------------------------------------------------------------
# traffic-sign glyphs

_PALETTE = [
    (220, 30, 30),
    (30, 60, 220),
    (240, 200, 20),
    (30, 160, 60),
    (240, 240, 240),
    (140, 40, 170),
    (240, 120, 20),
    (20, 190, 200),
    (60, 60, 60),
]
_SHAPES = ("circle", "triangle", "square", "diamond", "yield")


def _shape_mask(shape, size, cx, cy, r):
    if shape == "circle":
        return _disc(size, size, cx, cy, r)
    if shape == "triangle":
        pts = [(cx, cy - r), (cx + r * 0.95, cy + r * 0.8), (cx - r * 0.95, cy + r * 0.8)]
    elif shape == "square":
        pts = [(cx - r * 0.85, cy - r * 0.85), (cx + r * 0.85, cy - r * 0.85), (cx + r * 0.85, cy + r * 0.85), (cx - r * 0.85, cy + r * 0.85)]
    elif shape == "diamond":
        pts = [(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)]
    else:
        pts = [(cx - r * 0.95, cy - r * 0.8), (cx + r * 0.95, cy - r * 0.8), (cx, cy + r)]
    return _polygon(size, size, pts)


def sign_image(label, prng, size=32):
    """Glyph for class ``label``: shape from ``label % 5``, colour from ``label // 5``, a bar for odd rows."""
    shape = _SHAPES[label % len(_SHAPES)]
    color = np.array(_PALETTE[(label // len(_SHAPES)) % len(_PALETTE)], dtype=np.float64)
    bg = prng.uniform(40, 200, 3)
    canvas = np.empty((size, size, 3))
    canvas[:] = bg
    cx = size / 2 + prng.uniform(-2.5, 2.5)
    cy = size / 2 + prng.uniform(-2.5, 2.5)
    r = size * prng.uniform(0.30, 0.40)
    _fill(canvas, _shape_mask(shape, size, cx, cy, r), color * prng.uniform(0.85, 1.0))
    if (label // (len(_SHAPES) * len(_PALETTE))) % 2 == 1:
        ys, xs = np.mgrid[0:size, 0:size]
        _fill(canvas, (np.abs(ys - cy) <= 1.5) & (np.abs(xs - cx) <= r * 0.5), (255, 255, 255))
    canvas += _noise(prng, canvas.shape, 10.0)
    return Image(imaging.to_bytes(canvas))


# ---------------------------------------------------------------------------
# vehicles


def vehicle_image(label, prng, size=32):
    """``label`` 1 draws a car body with two wheels, 0 draws random clutter."""
    canvas = np.empty((size, size, 3))
    canvas[:] = prng.uniform(60, 190, 3)
    canvas += _noise(prng, canvas.shape, 12.0)
    if label:
        w = prng.uniform(0.55, 0.8) * size
        h = prng.uniform(0.25, 0.35) * size
        x0 = prng.uniform(1, size - w - 1)
        y0 = prng.uniform(size * 0.25, size * 0.55)
        body = _polygon(size, size, [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])
        roof = _polygon(size, size, [(x0 + 0.25 * w, y0 - 0.5 * h), (x0 + 0.75 * w, y0 - 0.5 * h), (x0 + 0.85 * w, y0), (x0 + 0.15 * w, y0)])
        _fill(canvas, body | roof, prng.uniform(0, 255, 3))
        wr = 0.18 * w
        for fx in (0.22, 0.78):
            _fill(canvas, _disc(size, size, x0 + fx * w, y0 + h, wr), (15, 15, 15))
    else:
        for _ in range(3):
            if prng.random() < 0.5:
                cx, cy = prng.uniform(0, size, 2)
                _fill(canvas, _disc(size, size, cx, cy, prng.uniform(2, 7)), prng.uniform(0, 255, 3))
            else:
                x1, y1, x2, y2 = prng.uniform(0, size, 4)
                if abs(y2 - y1) > 1:
                    _fill(canvas, _thick_line_mask(size, size, x1, y1, x2, y2, 1.0), prng.uniform(0, 255, 3))
    return Image(imaging.to_bytes(canvas))


# ---------------------------------------------------------------------------
# road segmentation


def segmentation_pair(prng, size=128):
    """Road scene and its exact binary road mask (Gray8, 0/255)."""
    horizon = prng.uniform(0.35, 0.55) * size
    top_c = prng.uniform(0.35, 0.65) * size
    top_w = prng.uniform(0.05, 0.2) * size
    bl = prng.uniform(-0.3, 0.25) * size
    br = prng.uniform(0.75, 1.3) * size
    road = _polygon(
        size,
        size,
        [(max(bl, 0.0), size - 1.0), (top_c - top_w / 2, horizon), (top_c + top_w / 2, horizon), (min(br, size - 1.0), size - 1.0)],
    )
    canvas = np.empty((size, size, 3))
    canvas[:] = prng.uniform(40, 110, 3) * np.array([0.6, 1.2, 0.5])
    canvas[: int(horizon)] = np.array(SKY) * prng.uniform(0.8, 1.05)
    canvas[road] = prng.uniform(70, 120)
    canvas += _noise(prng, canvas.shape, 15.0)
    mask = Image(np.where(road, 255, 0).astype(np.uint8))
    return Image(imaging.to_bytes(canvas)), mask


# ---------------------------------------------------------------------------
# corpus writer

TASKS = ("signs", "vehicles", "segmentation", "lanes", "driving")


def synth_generate(task, n, seed, out_dir, classes=10):
    """Write ``n`` synthetic samples for ``task`` under ``out_dir``; returns written paths."""
    from .errors import ParameterError
    from .tensor_core import Prng

    if n <= 0:
        raise ParameterError("n must be positive")
    if task not in TASKS:
        raise ParameterError(f"unknown synth task {task!r}; choose from {', '.join(TASKS)}")
    prng = Prng(seed)
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(img, *parts):
        path = os.path.join(out_dir, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        imaging.write_image(img, path)
        written.append(path)

    if task in ("signs", "vehicles"):
        k = classes if task == "signs" else 2
        for i in range(n):
            label = i % k
            img = sign_image(label, prng) if task == "signs" else vehicle_image(label, prng)
            put(img, str(label), f"{i:05d}.ppm")
    elif task == "segmentation":
        for i in range(n):
            img, mask = segmentation_pair(prng)
            put(img, "images", f"{i:05d}.ppm")
            put(mask, "masks", f"{i:05d}.pgm")
    elif task == "lanes":
        rows = []
        for i in range(n):
            color = "yellow" if i % 2 else "white"
            img, (left, right) = road_frame(prng, color=color)
            stem = f"frame_{i:05d}"
            put(img, f"{stem}.ppm")
            coords = " ".join(f"{v:.4f}" for v in left.as_tuple() + right.as_tuple())
            rows.append(f"{stem} {coords}\n")
        path = os.path.join(out_dir, "lanes.txt")
        with open(path, "w") as fh:
            fh.writelines(rows)
        written.append(path)
    else:
        rows = ["center,left,right,steering,throttle,reverse,speed\n"]
        for i in range(n):
            stem = f"{i:05d}"
            sub = Prng(prng.next_u64())
            speed = 20.0 + 5.0 * sub.random()
            names = []
            steering = 0.0
            for cam, lateral in (("center", 0.0), ("left", 20.0), ("right", -20.0)):
                scene = Prng(sub.state)
                img, steer, _ = driving_frame(scene, lateral=lateral)
                if cam == "center":
                    steering = steer
                name = f"IMG/{cam}_{stem}.ppm"
                put(img, *name.split("/"))
                names.append(name)
            rows.append(f"{names[0]},{names[1]},{names[2]},{steering:.6f},1.0,0,{speed:.5f}\n")
        path = os.path.join(out_dir, "driving_log.csv")
        with open(path, "w") as fh:
            fh.writelines(rows)
        written.append(path)
    return written


def read_lane_truth(path):
    """Parse a lane sidecar into ``{stem: (left, right)}``."""
    truth = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 9:
                continue
            v = [float(p) for p in parts[1:]]
            truth[parts[0]] = (Segment(*v[:4]), Segment(*v[4:]))
    return truth
