"""Classical lane detection: colour selection, Canny, ROI masking, Hough voting.

Edge maps are ``H x W`` uint8 arrays holding 0/1.  Lane lines are kept in the
form ``x = u * y + c`` (image coordinates, ``y`` pointing down) so that steep
lines never produce an infinite slope; the usual slope is ``dy/dx = 1 / u``.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import imaging
from .errors import ParameterError, StageError
from .imaging import GaussianKernelSpec, Image

STAGES = ("gray", "blur", "canny", "roi", "hough", "overlay")
RED = (255, 0, 0)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class HoughPeak:
    r: float
    theta: float
    votes: int
    r_index: int = -1
    theta_index: int = -1


@dataclass(frozen=True)
class Segment:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def slope(self):
        return (self.y2 - self.y1) / (self.x2 - self.x1) if self.x2 != self.x1 else math.copysign(math.inf, self.y2 - self.y1)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class LaneLines:
    left: Optional[Segment] = None
    right: Optional[Segment] = None


DEFAULT_ROI = ((0.1, 1.0), (0.45, 0.6), (0.55, 0.6), (0.9, 1.0))


@dataclass
class PipelineConfig:
    blur: GaussianKernelSpec = field(default_factory=GaussianKernelSpec)
    canny_low: float = 50.0
    canny_high: float = 150.0
    roi: tuple = DEFAULT_ROI
    r_res: float = 1.0
    theta_res: float = math.pi / 180
    hough_threshold: int = 20
    slope_min: float = 0.3
    side_vote_fraction: float = 0.75
    extent: float = 0.6
    thickness: int = 3
    color_threshold: Optional[tuple] = None

    def validate(self):
        if not 0 < self.canny_low < self.canny_high <= 255 * 4:
            raise ParameterError(f"need 0 < canny_low < canny_high <= 1020, got {self.canny_low}, {self.canny_high}")
        if self.r_res <= 0 or self.theta_res <= 0:
            raise ParameterError("Hough resolutions must be positive")
        if self.hough_threshold < 0:
            raise ParameterError("Hough vote threshold must be non-negative")
        if not 0 <= self.extent <= 1:
            raise ParameterError("overlay extent must be a fraction of the height")
        if len(self.roi) < 3:
            raise ParameterError("ROI needs at least three vertices")
        return self

    def roi_polygon(self, width, height):
        return RoiPolygon([(fx * (width - 1), fy * (height - 1)) for fx, fy in self.roi])


# ---------------------------------------------------------------------------
# colour and gradients


def color_select(image, r_min, g_min, b_min):
    """Black out every pixel with any channel below its threshold."""
    p = image.pixels
    keep = (p[..., 0] >= r_min) & (p[..., 1] >= g_min) & (p[..., 2] >= b_min)
    return Image(np.where(keep[..., None], p, 0).astype(np.uint8))


def _as_gray_array(gray):
    if isinstance(gray, Image):
        if gray.format != imaging.GRAY8:
            raise ParameterError("expected a gray8 image")
        return gray.pixels.astype(np.float64)
    return np.asarray(gray, dtype=np.float64)


def _filter3(a, k):
    p = np.pad(a, 1, mode="edge")
    h, w = a.shape
    out = np.zeros_like(a)
    for dy in range(3):
        for dx in range(3):
            if k[dy, dx]:
                out += k[dy, dx] * p[dy : dy + h, dx : dx + w]
    return out


def sobel_gradients(gray):
    """Gradient magnitude and direction (radians, ``atan2(gy, gx)``) from 3x3 Sobel."""
    a = _as_gray_array(gray)
    gx = _filter3(a, SOBEL_X)
    gy = _filter3(a, SOBEL_Y)
    return np.hypot(gx, gy), np.arctan2(gy, gx)


_NEIGHBOURS = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}  # (dy, dx) per 45-degree bin


def non_max_suppression(mag, direction):
    """Thin edges along the gradient direction, quantised to 0/45/90/135 degrees.

    A pixel survives if it is strictly greater than its neighbour behind and
    at least its neighbour ahead, which leaves plateaus one pixel wide.
    """
    deg = np.rad2deg(direction) % 180.0
    bins = (np.floor((deg + 22.5) / 45.0).astype(np.int64)) % 4
    h, w = mag.shape
    p = np.pad(mag, 1)
    out = np.zeros_like(mag)
    for b, (dy, dx) in _NEIGHBOURS.items():
        ahead = p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        behind = p[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        keep = (bins == b) & (mag > behind) & (mag >= ahead) & (mag > 0)
        out[keep] = mag[keep]
    return out


def hysteresis(mag, low, high):
    """Keep pixels >= low that are 8-connected (transitively) to a pixel >= high."""
    weak = mag >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    strong_labels = np.unique(labels[mag >= high])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels).astype(np.uint8)


def canny(gray, low, high, blur=GaussianKernelSpec()):
    """Edge map (uint8 0/1) by blur, Sobel, NMS, double threshold and hysteresis.

    Pass ``blur=None`` when the input has already been smoothed.
    """
    if not 0 < low < high:
        raise ParameterError(f"canny thresholds need 0 < low < high, got {low}, {high}")
    a = _as_gray_array(gray)
    if blur is not None:
        a = imaging.blur_tensor(a, blur)
    mag, direction = sobel_gradients(a)
    return hysteresis(non_max_suppression(mag, direction), low, high)


# ---------------------------------------------------------------------------
# region of interest


def _on_segment(px, py, ax, ay, bx, by, tol=1e-9):
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    within = (
        (px >= min(ax, bx) - tol) & (px <= max(ax, bx) + tol) & (py >= min(ay, by) - tol) & (py <= max(ay, by) + tol)
    )
    scale = max(math.hypot(bx - ax, by - ay), 1.0)
    return within & (np.abs(cross) <= tol * scale)


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 1e-12) - (v < -1e-12)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 * o2 < 0 and o3 * o4 < 0


class RoiPolygon:
    """Simple polygon in pixel coordinates, at least three distinct vertices."""

    def __init__(self, vertices):
        pts = []
        for x, y in vertices:
            pt = (float(x), float(y))
            if not pts or pt != pts[-1]:
                pts.append(pt)
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts.pop()
        if len(pts) < 3:
            raise ParameterError("ROI polygon needs at least three distinct vertices")
        area = 0.5 * sum(pts[i][0] * pts[i - 1][1] - pts[i - 1][0] * pts[i][1] for i in range(len(pts)))
        if abs(area) < 1e-12:
            raise ParameterError("ROI polygon has zero area")
        n = len(pts)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                    raise ParameterError("ROI polygon is self-intersecting")
        self.vertices = tuple(pts)

    def __repr__(self):
        return f"RoiPolygon({list(self.vertices)})"

    def check_bounds(self, width, height):
        for x, y in self.vertices:
            if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                raise ParameterError(f"ROI vertex ({x}, {y}) outside {width}x{height} image")

    def mask(self, height, width):
        """Boolean mask of pixel centres inside (even-odd rule) or on the boundary."""
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        inside = np.zeros((height, width), dtype=bool)
        on_edge = np.zeros((height, width), dtype=bool)
        n = len(self.vertices)
        for i in range(n):
            ax, ay = self.vertices[i - 1]
            bx, by = self.vertices[i]
            if ay != by:
                straddles = (ay > ys) != (by > ys)
                x_cross = ax + (ys - ay) * (bx - ax) / (by - ay)
                inside ^= straddles & (xs < x_cross)
            on_edge |= _on_segment(xs, ys, ax, ay, bx, by)
        return inside | on_edge


def roi_mask(data, polygon):
    """Zero everything outside ``polygon``; works on edge maps, arrays and Images."""
    if isinstance(data, Image):
        m = polygon.mask(data.height, data.width)
        if data.format == imaging.RGB8:
            m = m[..., None]
        return Image(np.where(m, data.pixels, 0).astype(np.uint8))
    a = np.asarray(data)
    return np.where(polygon.mask(*a.shape[:2]), a, 0).astype(a.dtype)


# ---------------------------------------------------------------------------
# Hough transform


def hough_bins(width, height, r_res, theta_res):
    if r_res <= 0 or theta_res <= 0:
        raise ParameterError("Hough resolutions must be positive")
    diag = math.hypot(width, height)
    n_theta = math.ceil(math.pi / theta_res - 1e-9)
    thetas = np.arange(n_theta) * theta_res
    n_r = int(math.floor(2 * diag / r_res)) + 1
    rs = -diag + np.arange(n_r) * r_res
    return rs, thetas


def r_bin(r, diag, r_res):
    """Nearest accumulator row for distance ``r`` (ties round up)."""
    return np.floor((r + diag) / r_res + 0.5).astype(np.int64)


def hough_accumulator(edges, r_res=1.0, theta_res=math.pi / 180):
    """Vote counts indexed ``[r_bin, theta_bin]`` plus the bin centres."""
    edges = np.asarray(edges)
    h, w = edges.shape
    rs, thetas = hough_bins(w, h, r_res, theta_res)
    diag = -rs[0]
    acc = np.zeros((len(rs), len(thetas)), dtype=np.int64)
    ys, xs = np.nonzero(edges)
    if len(xs) == 0:
        return acc, rs, thetas
    cos, sin = np.cos(thetas), np.sin(thetas)
    r = xs[:, None] * cos[None, :] + ys[:, None] * sin[None, :]
    ri = r_bin(r, diag, r_res)
    flat = ri * len(thetas) + np.arange(len(thetas))[None, :]
    acc += np.bincount(flat.ravel(), minlength=acc.size).reshape(acc.shape)
    return acc, rs, thetas


def find_peaks(acc, threshold):
    """(r_index, theta_index) of cells >= threshold that are maximal in their 8-neighbourhood."""
    padded = np.pad(acc, 1, constant_values=-1)
    nb = ndimage.maximum_filter(padded, size=3, mode="constant", cval=-1)[1:-1, 1:-1]
    hit = (acc >= nb) & (acc >= max(threshold, 1))
    ri, ti = np.nonzero(hit)
    votes = acc[ri, ti]
    order = np.lexsort((ri, ti, -votes))
    return ri[order], ti[order]


def hough_transform(edges, r_res=1.0, theta_res=math.pi / 180, threshold=20):
    """Peaks of the (r, theta) accumulator, most votes first."""
    acc, rs, thetas = hough_accumulator(edges, r_res, theta_res)
    ri, ti = find_peaks(acc, threshold)
    return [HoughPeak(float(rs[a]), float(thetas[b]), int(acc[a, b]), int(a), int(b)) for a, b in zip(ri, ti)]


# ---------------------------------------------------------------------------
# lanes


def peak_to_xy_line(peak):
    """``(u, c)`` with ``x = u * y + c``, or None for a horizontal line."""
    cos, sin = math.cos(peak.theta), math.sin(peak.theta)
    if abs(cos) < 1e-12:
        return None
    return -sin / cos, peak.r / cos


def peaks_to_lanes(peaks, width, height, config=None):
    """Average the Hough lines on each side into one left and one right lane.

    Lines flatter than ``slope_min`` are dropped and the rest split by slope
    sign.  On each side, lines with fewer than ``side_vote_fraction`` of the
    side's best vote count are dropped (these are the off-angle maxima that
    flank every true peak); the survivors are combined with vote weights and
    drawn from the bottom row up to ``extent * height``.
    """
    config = config or PipelineConfig()
    sides = {"left": [], "right": []}
    for p in peaks:
        line = peak_to_xy_line(p)
        if line is None:
            continue
        u, c = line
        if abs(u) < 1e-12 or abs(u) > 1.0 / config.slope_min:
            continue
        sides["left" if u < 0 else "right"].append((u, c, p.votes))
    y_bottom = float(height - 1)
    y_top = float(round(config.extent * height))
    out = {}
    for side, lines in sides.items():
        if not lines:
            out[side] = None
            continue
        arr = np.array(lines, dtype=np.float64)
        arr = arr[arr[:, 2] >= config.side_vote_fraction * arr[:, 2].max()]
        wts = arr[:, 2]
        u = float(np.dot(arr[:, 0], wts) / wts.sum())
        c = float(np.dot(arr[:, 1], wts) / wts.sum())
        out[side] = Segment(u * y_bottom + c, y_bottom, u * y_top + c, y_top)
    return LaneLines(**out)


def bresenham(x1, y1, x2, y2):
    """Integer pixels of the segment between two integer points."""
    x1, y1, x2, y2 = int(x1), int(y1), int(x2), int(y2)
    dx, dy = abs(x2 - x1), -abs(y2 - y1)
    sx, sy = (1 if x1 < x2 else -1), (1 if y1 < y2 else -1)
    err = dx + dy
    pts = []
    while True:
        pts.append((x1, y1))
        if x1 == x2 and y1 == y2:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x1 += sx
        if e2 <= dx:
            err += dx
            y1 += sy


def rasterize_segment(seg, width, height, thickness=1):
    """Boolean mask of the segment's Bresenham pixels dilated by a square of side ``thickness``."""
    mask = np.zeros((height, width), dtype=bool)
    pts = bresenham(*(math.floor(v + 0.5) for v in seg.as_tuple()))
    lo = -(thickness // 2)
    hi = lo + max(int(thickness), 1)
    for x, y in pts:
        x0, x1 = max(x + lo, 0), min(x + hi, width)
        y0, y1 = max(y + lo, 0), min(y + hi, height)
        if x0 < x1 and y0 < y1:
            mask[y0:y1, x0:x1] = True
    return mask


def overlay_lanes(image, lanes, thickness=3):
    """Copy of ``image`` with the present lane segments drawn in pure red."""
    if image.format != imaging.RGB8:
        image = Image(np.repeat(image.pixels[..., None], 3, axis=2))
    out = image.pixels.copy()
    for seg in (lanes.left, lanes.right):
        if seg is not None:
            out[rasterize_segment(seg, image.width, image.height, thickness)] = RED
    return Image(out)


def accumulator_image(acc):
    top = acc.max()
    scaled = acc * (255.0 / top) if top > 0 else acc.astype(np.float64)
    return Image(imaging.to_bytes(scaled))


@dataclass
class PipelineResult:
    lanes: LaneLines
    annotated: Image
    stages: dict


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(image, config=None, dump_dir=None, stem="frame"):
    """Grayscale, blur, Canny, ROI, Hough, lane averaging and overlay on one frame.

    With ``dump_dir`` set, every intermediate is written as
    ``<stem>.<stage>.pgm`` (``.ppm`` for the overlay).
    """
    config = (config or PipelineConfig()).validate()
    src = image
    if config.color_threshold is not None:
        src = _stage("gray", color_select, src, *config.color_threshold)
    gray = _stage("gray", imaging.to_grayscale, src)
    blurred = _stage("blur", imaging.gaussian_blur, gray, config.blur)
    edges = _stage("canny", canny, blurred, config.canny_low, config.canny_high, blur=None)

    def _roi():
        poly = config.roi_polygon(image.width, image.height)
        poly.check_bounds(image.width, image.height)
        return roi_mask(edges, poly)

    masked = _stage("roi", _roi)
    acc, rs, thetas = _stage("hough", hough_accumulator, masked, config.r_res, config.theta_res)

    def _peaks():
        ri, ti = find_peaks(acc, config.hough_threshold)
        return [HoughPeak(float(rs[a]), float(thetas[b]), int(acc[a, b]), int(a), int(b)) for a, b in zip(ri, ti)]

    peaks = _stage("hough", _peaks)
    lanes = _stage("hough", peaks_to_lanes, peaks, image.width, image.height, config)
    annotated = _stage("overlay", overlay_lanes, image, lanes, config.thickness)
    stages = {
        "gray": gray,
        "blur": blurred,
        "canny": Image((edges * 255).astype(np.uint8)),
        "roi": Image((masked * 255).astype(np.uint8)),
        "hough": accumulator_image(acc),
        "overlay": annotated,
    }
    if dump_dir is not None:
        write_stage_dumps(stages, dump_dir, stem)
    return PipelineResult(lanes, annotated, stages)


def write_stage_dumps(stages, out_dir, stem):
    paths = []
    for name in STAGES:
        img = stages[name]
        ext = "ppm" if img.format == imaging.RGB8 else "pgm"
        path = os.path.join(out_dir, f"{stem}.{name}.{ext}")
        imaging.write_image(img, path)
        paths.append(path)
    return paths


def format_lanes(lanes):
    """Two-line text form: ``left x1 y1 x2 y2`` / ``right ...``, or ``<side> absent``."""
    lines = []
    for side in ("left", "right"):
        seg = getattr(lanes, side)
        if seg is None:
            lines.append(f"{side} absent")
        else:
            lines.append(side + " " + " ".join(f"{v:.2f}" for v in seg.as_tuple()))
    return "\n".join(lines) + "\n"


def parse_lanes(text):
    found = {}
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        side = parts[0]
        found[side] = None if parts[1:] == ["absent"] else Segment(*map(float, parts[1:5]))
    return LaneLines(left=found.get("left"), right=found.get("right"))
