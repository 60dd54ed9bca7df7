"""Loading, splitting and augmenting the four data regimes.

Class-directory sets (signs, vehicles), paired image/mask directories
(segmentation) and simulator driving logs.  Synthetic generators live in
:mod:`driveperc.synth` and are re-exported here.
"""

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import imaging
from . import tensor_core as tc
from .errors import DrivePercError, FormatError, ParameterError
from .imaging import GaussianKernelSpec
from .synth import synth_generate  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

CAMERAS = ("center", "left", "right")


@dataclass(frozen=True)
class ClassifiedImageSet:
    samples: tuple  # ((path, class index), ...)
    classes: int

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class SegmentationPairSet:
    pairs: tuple  # ((image path, mask path), ...)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class DrivingRecord:
    center: str
    left: str
    right: str
    steering: float
    throttle: float
    reverse: int
    speed: float

    def path(self, camera):
        if camera not in CAMERAS:
            raise ParameterError(f"camera must be one of {CAMERAS}, got {camera!r}")
        return getattr(self, camera)


@dataclass(frozen=True)
class AugmentConfig:
    """Random flip / shear / zoom for classification plus the driving preprocessing geometry.

    ``crop`` is (top, bottom) as fractions of the height removed;
    ``target`` is (height, width).
    """

    flip_prob: float = 0.5
    shear: float = 0.2
    zoom: float = 0.2
    crop: tuple = (0.375, 0.156)
    blur: GaussianKernelSpec = GaussianKernelSpec(3, 0.8)
    target: tuple = (66, 200)
    side_correction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ParameterError("flip probability must lie in [0, 1]")
        if self.shear < 0 or self.zoom < 0 or self.zoom >= 1:
            raise ParameterError("shear must be >= 0 and zoom in [0, 1)")
        top, bottom = self.crop
        if top < 0 or bottom < 0 or top + bottom >= 1:
            raise ParameterError(f"crop fractions {self.crop} leave no image")
        if min(self.target) < 1:
            raise ParameterError("target size must be positive")


# ---------------------------------------------------------------------------
# loaders


def load_class_dirs(root):
    """Samples from numeric class directories ``root/0``, ``root/1``, ...

    Non-numeric directories are skipped and empty classes only warn, but the
    class indices must be contiguous from 0.
    """
    indices = {}
    for name in sorted(os.listdir(root)):
        full = os.path.join(root, name)
        if not os.path.isdir(full):
            continue
        if not name.isdigit():
            log.warning("skipping non-numeric directory %s", full)
            continue
        indices[int(name)] = full
    if not indices:
        raise ParameterError(f"no class directories under {root}")
    missing = sorted(set(range(max(indices) + 1)) - set(indices))
    if missing:
        raise ParameterError(f"non-contiguous class indices: missing {missing}")
    samples = []
    for k in sorted(indices):
        files = imaging.list_images(indices[k])
        if not files:
            log.warning("class directory %s is empty", indices[k])
        samples += [(os.path.join(indices[k], f), k) for f in files]
    return ClassifiedImageSet(tuple(samples), len(indices))


def load_seg_pairs(images_dir, masks_dir):
    """Pair images with masks by filename stem; every unmatched file is named in one error."""
    images = {os.path.splitext(f)[0]: f for f in imaging.list_images(images_dir)}
    masks = {os.path.splitext(f)[0]: f for f in imaging.list_images(masks_dir)}
    problems = [f"image without mask: {s}" for s in sorted(set(images) - set(masks))]
    problems += [f"mask without image: {s}" for s in sorted(set(masks) - set(images))]
    if problems:
        raise ParameterError("unmatched segmentation files: " + "; ".join(problems))
    pairs = tuple((os.path.join(images_dir, images[s]), os.path.join(masks_dir, masks[s])) for s in sorted(images))
    return SegmentationPairSet(pairs)


def binarize_mask(image, threshold=128):
    """1 x H x W float mask: 1 where the gray level is ``>= threshold``."""
    gray = imaging.to_grayscale(image).pixels
    return (gray >= threshold).astype(np.float64)[None]


def _number(field, line, name):
    try:
        return float(field)
    except ValueError:
        raise FormatError(f"line {line}: {name} {field!r} is not a number") from None


def parse_driving_log(csv_path):
    """Records from a 7-column simulator log; a header is recognised by a non-numeric steering field."""
    records = []
    with open(csv_path) as fh:
        for line, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            fields = [f.strip() for f in text.split(",")]
            if len(fields) != 7:
                raise FormatError(f"line {line}: expected 7 fields, found {len(fields)}")
            if line == 1:
                try:
                    float(fields[3])
                except ValueError:
                    continue
            steering, throttle, reverse, speed = (
                _number(v, line, n) for v, n in zip(fields[3:], ("steering", "throttle", "reverse", "speed"))
            )
            if reverse not in (0.0, 1.0):
                raise FormatError(f"line {line}: reverse must be 0 or 1, got {fields[5]!r}")
            records.append(DrivingRecord(fields[0], fields[1], fields[2], steering, throttle, int(reverse), speed))
    return records


def driving_counts(records):
    """Raw record count and the count after expanding each record to its three cameras."""
    return {"records": len(records), "expanded": 3 * len(records)}


def split_train_test(samples, ratio=0.8, seed=0):
    """Seeded Fisher-Yates shuffle; the first ``floor(ratio * n)`` go to train."""
    n = len(samples)
    if n == 0:
        raise ParameterError("cannot split an empty sample list")
    if not 0.0 < ratio < 1.0:
        raise ParameterError("ratio must lie in (0, 1)")
    order = tc.Prng(seed).permutation(n)
    cut = math.floor(ratio * n)
    return [samples[i] for i in order[:cut]], [samples[i] for i in order[cut:]]


# ---------------------------------------------------------------------------
# augmentation and preprocessing


def augment_classification(image, config, prng):
    """Random horizontal flip, then one affine warp combining shear and zoom about the centre.

    Always draws the same number of values from ``prng`` regardless of the
    outcome, so sample streams stay aligned.
    """
    flip, shear_u, zoom_u = prng.random(3)
    if flip < config.flip_prob:
        image = imaging.flip_horizontal(image)
    shear = (2.0 * shear_u - 1.0) * config.shear
    zoom = 1.0 + (2.0 * zoom_u - 1.0) * config.zoom
    if shear == 0.0 and zoom == 1.0:
        return image
    a = np.array([[zoom, zoom * math.tan(shear)], [0.0, zoom]])
    centre = np.array([(image.width - 1) / 2.0, (image.height - 1) / 2.0])
    t = centre - a @ centre
    return imaging.affine_warp(image, np.column_stack([a, t]))


def crop_rows(height, crop):
    """First row kept and number of rows kept for (top, bottom) crop fractions."""
    top = int(round(crop[0] * height))
    bottom = int(round(crop[1] * height))
    return top, height - top - bottom


def preprocess_driving_image(image, config=AugmentConfig()):
    """Crop sky and hood, convert to YUV, blur, resize to ``config.target``: a 3 x H x W tensor."""
    top, rows = crop_rows(image.height, config.crop)
    image = imaging.crop(image, (0, top, image.width, rows))
    yuv = imaging.rgb_to_yuv(image)
    yuv = imaging.blur_tensor(yuv, config.blur)
    return tc.resize_bilinear(yuv, config.target[0], config.target[1])


def preprocess_driving(record, camera, prng=None, augment=False, images_dir=None, config=AugmentConfig()):
    """``(tensor, steering)`` for one camera of a record.

    Side cameras shift the steering by ``config.side_correction`` (left
    positive).  When augmenting, a coin flip mirrors the image and negates
    the steering; without augmentation ``prng`` is never touched.
    """
    path = record.path(camera)
    if images_dir is not None and not os.path.isabs(path):
        path = os.path.join(images_dir, path)
    try:
        image = imaging.read_image(path)
    except (OSError, DrivePercError) as exc:
        raise FormatError(f"cannot load sample image {path}: {exc}") from exc
    if image.format != imaging.RGB8:
        raise FormatError(f"sample image {path} is not rgb8")
    steering = record.steering + {"center": 0.0, "left": config.side_correction, "right": -config.side_correction}[camera]
    if augment and prng.random() < 0.5:
        image = imaging.flip_horizontal(image)
        steering = -steering
    return preprocess_driving_image(image, config), steering


def load_classification_arrays(image_set, classes=None):
    """``(x, y)``: stacked normalised images and one-hot targets."""
    k = classes or image_set.classes
    x = np.stack([imaging.normalize(imaging.read_image(p)) for p, _ in image_set.samples])
    y = np.zeros((len(image_set), k))
    y[np.arange(len(image_set)), [c for _, c in image_set.samples]] = 1.0
    return x, y


def load_segmentation_arrays(pair_set):
    """``(x, masks)``: normalised images and binarised 1 x H x W masks."""
    x = np.stack([imaging.normalize(imaging.read_image(i)) for i, _ in pair_set.pairs])
    m = np.stack([binarize_mask(imaging.read_image(k)) for _, k in pair_set.pairs])
    return x, m
