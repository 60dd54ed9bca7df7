import hashlib
import logging
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driveperc import datasets, imaging, synth
from driveperc.datasets import AugmentConfig, DrivingRecord
from driveperc.errors import FormatError, ParameterError
from driveperc.imaging import Image
from driveperc.tensor_core import Prng

LOG_ROWS = """center,left,right,steering,throttle,reverse,speed
center_2022_04_10_12_44_27_913.jpg,left_2022_04_10_12_44_27_913.jpg,right_2022_04_10_12_44_27_913.jpg,0.00,1.0,0,21.69468
center_2022_04_10_12_44_27_983.jpg,left_2022_04_10_12_44_27_983.jpg,right_2022_04_10_12_44_27_983.jpg,0.00,1.0,0,22.50011
center_2022_04_10_12_44_28_191.jpg,left_2022_04_10_12_44_28_191.jpg,right_2022_04_10_12_44_28_191.jpg,0.05,1.0,0,24.46815
"""


def _write_rgb(path, pixels):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    imaging.write_image(Image(np.asarray(pixels, dtype=np.uint8)), path)


# -- class directories ---------------------------------------------------------


def test_load_class_dirs_counts_and_order(tmp_path):
    for c in (0, 1):
        for name in ("b.ppm", "a.ppm"):
            _write_rgb(tmp_path / str(c) / name, np.zeros((2, 2, 3)))
    s = datasets.load_class_dirs(tmp_path)
    assert len(s) == 4 and s.classes == 2
    assert [os.path.basename(p) for p, _ in s.samples] == ["a.ppm", "b.ppm", "a.ppm", "b.ppm"]
    assert [c for _, c in s.samples] == [0, 0, 1, 1]
    assert datasets.load_class_dirs(tmp_path) == s


def test_load_class_dirs_noncontiguous(tmp_path):
    for c in (0, 2):
        _write_rgb(tmp_path / str(c) / "a.ppm", np.zeros((2, 2, 3)))
    with pytest.raises(ParameterError, match="non-contiguous"):
        datasets.load_class_dirs(tmp_path)


def test_load_class_dirs_warnings(tmp_path, caplog):
    _write_rgb(tmp_path / "0" / "a.ppm", np.zeros((2, 2, 3)))
    (tmp_path / "1").mkdir()
    (tmp_path / "notes").mkdir()
    with caplog.at_level(logging.WARNING):
        s = datasets.load_class_dirs(tmp_path)
    assert s.classes == 2 and len(s) == 1
    assert "empty" in caplog.text and "non-numeric" in caplog.text


# -- segmentation pairs ----------------------------------------------------------


def test_load_seg_pairs(tmp_path):
    (tmp_path / "masks").mkdir()
    for stem in ("a", "b", "c"):
        _write_rgb(tmp_path / "images" / f"{stem}.ppm", np.zeros((2, 2, 3)))
        imaging.write_image(Image(np.zeros((2, 2), dtype=np.uint8)), tmp_path / "masks" / f"{stem}.pgm")
    pairs = datasets.load_seg_pairs(tmp_path / "images", tmp_path / "masks")
    assert len(pairs) == 3
    _write_rgb(tmp_path / "images" / "d.ppm", np.zeros((2, 2, 3)))
    _write_rgb(tmp_path / "masks" / "e.ppm", np.zeros((2, 2, 3)))
    with pytest.raises(ParameterError) as info:
        datasets.load_seg_pairs(tmp_path / "images", tmp_path / "masks")
    assert "d" in str(info.value) and "e" in str(info.value)


def test_binarize_mask():
    m = datasets.binarize_mask(Image(np.array([[0, 255], [127, 128]], dtype=np.uint8)))
    assert m.shape == (1, 2, 2)
    assert m[0].tolist() == [[0, 1], [0, 1]]


# -- driving log -----------------------------------------------------------------


def test_parse_driving_log_table_rows(tmp_path):
    path = tmp_path / "log.csv"
    path.write_text(LOG_ROWS)
    recs = datasets.parse_driving_log(path)
    assert len(recs) == 3
    first = recs[0]
    assert first.center == "center_2022_04_10_12_44_27_913.jpg"
    assert first.right == "right_2022_04_10_12_44_27_913.jpg"
    assert (first.steering, first.throttle, first.reverse, first.speed) == (0.0, 1.0, 0, 21.69468)
    assert recs[2].steering == 0.05
    assert datasets.driving_counts(recs) == {"records": 3, "expanded": 9}


def test_parse_driving_log_without_header_and_empty(tmp_path):
    path = tmp_path / "log.csv"
    path.write_text(LOG_ROWS.split("\n", 1)[1])
    assert len(datasets.parse_driving_log(path)) == 3
    path.write_text("")
    assert datasets.parse_driving_log(path) == []


def test_parse_driving_log_row_errors(tmp_path):
    path = tmp_path / "log.csv"
    path.write_text(LOG_ROWS + "a.jpg,b.jpg,c.jpg,0.1,1.0,0\n")
    with pytest.raises(FormatError, match="line 5"):
        datasets.parse_driving_log(path)
    path.write_text(LOG_ROWS + "a.jpg,b.jpg,c.jpg,0.1,fast,0,3\n")
    with pytest.raises(FormatError, match="line 5"):
        datasets.parse_driving_log(path)


# -- split -----------------------------------------------------------------------


def test_split_vehicle_counts():
    train, test = datasets.split_train_test(list(range(17760)), 0.8, seed=0)
    assert (len(train), len(test)) == (14208, 3552)


@given(st.integers(1, 300), st.floats(0.05, 0.95), st.integers(0, 2**32))
@settings(max_examples=40)
def test_split_is_a_seeded_partition(n, ratio, seed):
    items = list(range(n))
    train, test = datasets.split_train_test(items, ratio, seed)
    assert sorted(train + test) == items
    assert len(train) == int(np.floor(ratio * n))
    assert datasets.split_train_test(items, ratio, seed) == (train, test)


def test_split_errors():
    with pytest.raises(ParameterError):
        datasets.split_train_test([], 0.8)
    with pytest.raises(ParameterError):
        datasets.split_train_test([1, 2], 1.0)


# -- augmentation ------------------------------------------------------------------


def test_augment_identity_and_forced_flip():
    img = synth.sign_image(3, Prng(1))
    ident = AugmentConfig(flip_prob=0.0, shear=0.0, zoom=0.0)
    assert datasets.augment_classification(img, ident, Prng(2)) == img
    flip = AugmentConfig(flip_prob=1.0, shear=0.0, zoom=0.0)
    assert datasets.augment_classification(img, flip, Prng(2)) == imaging.flip_horizontal(img)


def test_augment_reproducible_and_size_preserving():
    img = synth.sign_image(0, Prng(3))
    a = datasets.augment_classification(img, AugmentConfig(), Prng(4))
    b = datasets.augment_classification(img, AugmentConfig(), Prng(4))
    assert a == b and (a.width, a.height) == (img.width, img.height)


def test_augment_config_validation():
    with pytest.raises(ParameterError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ParameterError):
        AugmentConfig(zoom=-0.1)
    with pytest.raises(ParameterError):
        AugmentConfig(crop=(0.6, 0.5))


# -- driving preprocessing -----------------------------------------------------------


@pytest.fixture(scope="module")
def driving_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("drive")
    synth.synth_generate("driving", 6, 7, d)
    return d


def test_preprocess_shape_and_side_cameras(driving_dir):
    recs = datasets.parse_driving_log(driving_dir / "driving_log.csv")
    assert len(recs) == 6
    for r in recs[:2]:
        xc, sc = datasets.preprocess_driving(r, "center", images_dir=driving_dir)
        xl, sl = datasets.preprocess_driving(r, "left", images_dir=driving_dir)
        xr, sr = datasets.preprocess_driving(r, "right", images_dir=driving_dir)
        assert xc.shape == xl.shape == (3, 66, 200)
        assert sc == r.steering and sl == r.steering + 0.2 and sr == r.steering - 0.2


def test_preprocess_without_augment_ignores_prng(driving_dir):
    r = datasets.parse_driving_log(driving_dir / "driving_log.csv")[0]
    a = datasets.preprocess_driving(r, "center", prng=Prng(1), images_dir=driving_dir)
    b = datasets.preprocess_driving(r, "center", prng=Prng(99), images_dir=driving_dir)
    assert a[0].tobytes() == b[0].tobytes() and a[1] == b[1]


def test_flip_negates_steering_on_every_sample(driving_dir):
    recs = datasets.parse_driving_log(driving_dir / "driving_log.csv")
    flips = 0
    for i, r in enumerate(recs):
        for cam in ("center", "left", "right"):
            plain, s0 = datasets.preprocess_driving(r, cam, images_dir=driving_dir)
            x, s = datasets.preprocess_driving(r, cam, prng=Prng(i), augment=True, images_dir=driving_dir)
            if s == s0 and x.tobytes() == plain.tobytes():
                continue
            flips += 1
            assert s + s0 == 0.0
            img = imaging.read_image(driving_dir / r.path(cam))
            ref = datasets.preprocess_driving_image(imaging.flip_horizontal(img))
            assert x.tobytes() == ref.tobytes()
    assert flips > 0


def test_preprocess_pipeline_steps_by_hand():
    px = Prng(5).integers(256, (80, 120, 3)).astype(np.uint8)
    img = Image(px)
    top, rows = datasets.crop_rows(80, (0.375, 0.156))
    assert (top, rows) == (30, 38)
    out = datasets.preprocess_driving_image(img)
    cropped = Image(px[30:68])
    yuv = imaging.blur_tensor(imaging.rgb_to_yuv(cropped), imaging.GaussianKernelSpec(3, 0.8))
    from driveperc import tensor_core as tc

    np.testing.assert_array_equal(out, tc.resize_bilinear(yuv, 66, 200))


def test_preprocess_bad_image(tmp_path):
    r = DrivingRecord("missing.ppm", "l.ppm", "r.ppm", 0.0, 1.0, 0, 20.0)
    with pytest.raises(FormatError, match="missing.ppm"):
        datasets.preprocess_driving(r, "center", images_dir=tmp_path)
    with pytest.raises(ParameterError):
        r.path("rear")


# -- synthetic corpora ----------------------------------------------------------------


def _digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


@pytest.mark.parametrize("task", synth.TASKS)
def test_synth_same_seed_byte_identical(tmp_path, task):
    synth.synth_generate(task, 4, 11, tmp_path / "a")
    synth.synth_generate(task, 4, 11, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_synth_signs_layout(tmp_path):
    synth.synth_generate("signs", 20, 1, tmp_path, classes=10)
    s = datasets.load_class_dirs(tmp_path)
    assert s.classes == 10 and len(s) == 20


def test_synth_segmentation_mask_is_road_polygon(tmp_path):
    synth.synth_generate("segmentation", 3, 2, tmp_path)
    pairs = datasets.load_seg_pairs(tmp_path / "images", tmp_path / "masks")
    x, m = datasets.load_segmentation_arrays(pairs)
    assert x.shape == (3, 3, 128, 128) and m.shape == (3, 1, 128, 128)
    assert set(np.unique(m)) <= {0.0, 1.0}
    # the road is the only gray region below the horizon: its mean differs from the verge
    for xi, mi in zip(x, m):
        road = xi[:, mi[0] == 1]
        assert road.size > 0 and np.abs(road[0] - road[2]).mean() < 0.1


def test_synth_lane_sidecar_on_drawn_lines(tmp_path):
    synth.synth_generate("lanes", 4, 3, tmp_path)
    truth = synth.read_lane_truth(tmp_path / "lanes.txt")
    assert len(truth) == 4
    for stem, segs in truth.items():
        img = imaging.read_image(tmp_path / f"{stem}.ppm").pixels.astype(int)
        for seg in segs:
            for x, y in ((seg.x1, seg.y1), (seg.x2, seg.y2)):
                xi, yi = int(round(x)), int(round(y))
                patch = img[yi - 1 : yi + 2, xi - 1 : xi + 2]
                # paint is far brighter in red than the gray road
                assert patch[..., 0].max() > 200


def test_synth_errors(tmp_path):
    with pytest.raises(ParameterError):
        synth.synth_generate("signs", 0, 0, tmp_path)
    with pytest.raises(ParameterError):
        synth.synth_generate("faces", 1, 0, tmp_path)
