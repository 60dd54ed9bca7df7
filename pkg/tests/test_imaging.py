import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from driveperc import imaging
from driveperc.errors import BoundsError, DimensionError, FormatError, ParameterError, UnsupportedFormatError
from driveperc.imaging import GaussianKernelSpec, Image

gray_pixels = arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9)))
rgb_pixels = arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3)))


def rgb(*px):
    return Image(np.array([px], dtype=np.uint8))


# -- Image and netpbm ----------------------------------------------------------


def test_image_rejects_bad_buffers():
    with pytest.raises(ParameterError):
        Image(np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        Image(np.zeros((2, 2, 4), dtype=np.uint8))
    with pytest.raises(DimensionError):
        Image(np.zeros((0, 2), dtype=np.uint8))


def test_image_is_read_only():
    img = Image(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1


def test_decode_single_gray_pixel():
    img = imaging.decode_netpbm(b"P5\n1 1\n255\n\x80")
    assert img.format == imaging.GRAY8
    assert img.pixels.tolist() == [[128]]


def test_decode_header_with_comments():
    img = imaging.decode_netpbm(b"P6 # rgb\n2 # w\n1\n255\n" + bytes(range(6)))
    assert img.pixels.tolist() == [[[0, 1, 2], [3, 4, 5]]]


def test_decode_maxval_65535_is_unsupported():
    with pytest.raises(UnsupportedFormatError):
        imaging.decode_netpbm(b"P6\n1 1\n65535\n" + bytes(6))


def test_decode_bad_magic_reports_offset_zero():
    with pytest.raises(FormatError, match="offset 0"):
        imaging.decode_netpbm(b"P3\n1 1\n255\n0 0 0")


def test_decode_truncated_body():
    with pytest.raises(FormatError, match="truncated"):
        imaging.decode_netpbm(b"P5\n2 2\n255\n\x00\x00")


def test_decode_garbage_header_token():
    with pytest.raises(FormatError, match="offset 3"):
        imaging.decode_netpbm(b"P5\nab 1\n255\n\x00")


@given(gray_pixels)
@settings(max_examples=30)
def test_pgm_round_trip(tmp_path_factory, px):
    path = tmp_path_factory.mktemp("pgm") / "a.pgm"
    img = Image(px)
    imaging.write_image(img, path)
    back = imaging.read_image(path)
    assert back == img
    assert path.read_bytes() == imaging.encode_netpbm(back)


@given(rgb_pixels)
@settings(max_examples=30)
def test_ppm_round_trip(px):
    img = Image(px)
    assert imaging.decode_netpbm(imaging.encode_netpbm(img)) == img


def test_png_read(tmp_path):
    pil = pytest.importorskip("PIL.Image")
    px = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    pil.fromarray(px).save(tmp_path / "a.png")
    assert imaging.read_image(tmp_path / "a.png").pixels.tolist() == px.tolist()


# -- colour ------------------------------------------------------------------


def test_grayscale_known_values():
    assert imaging.to_grayscale(rgb((255, 255, 255))).pixels.tolist() == [[255]]
    assert imaging.to_grayscale(rgb((255, 0, 0))).pixels.tolist() == [[76]]
    assert imaging.to_grayscale(rgb((0, 255, 0))).pixels.tolist() == [[150]]


@given(st.integers(0, 255))
def test_grayscale_fixed_on_gray_diagonal(g):
    assert imaging.to_grayscale(rgb((g, g, g))).pixels.tolist() == [[g]]


@given(rgb_pixels)
@settings(max_examples=30)
def test_grayscale_matches_weighted_sum(px):
    out = imaging.to_grayscale(Image(px)).pixels.astype(int)
    ref = np.floor(px[..., 0] * 0.299 + px[..., 1] * 0.587 + px[..., 2] * 0.114 + 0.5)
    assert np.all(np.abs(out - ref) <= 1)


def test_yuv_black_gray_red():
    assert np.all(imaging.rgb_to_yuv(rgb((0, 0, 0))) == 0)
    yuv = imaging.rgb_to_yuv(rgb((90, 90, 90)))
    assert abs(yuv[1, 0, 0]) < 1e-15 and abs(yuv[2, 0, 0]) < 1e-15
    assert abs(yuv[0, 0, 0] - 90 / 255) < 1e-15
    # BT.601 full range, matrix form
    m = np.array([[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]])
    y, u, v = imaging.rgb_to_yuv(rgb((255, 0, 0)))[:, 0, 0]
    np.testing.assert_allclose([y, u, v], m @ [1.0, 0.0, 0.0], atol=1e-6)


@given(rgb_pixels)
@settings(max_examples=30)
def test_yuv_ranges(px):
    yuv = imaging.rgb_to_yuv(Image(px))
    assert yuv[0].min() >= 0 and yuv[0].max() <= 1 + 1e-12
    assert np.abs(yuv[1:]).max() <= 0.5 + 1e-12


# -- Gaussian ----------------------------------------------------------------


def test_kernel_spec_validation():
    with pytest.raises(ParameterError):
        GaussianKernelSpec(4, 1.0)
    with pytest.raises(ParameterError):
        GaussianKernelSpec(3, 0.0)


def test_kernel_matches_high_precision_oracle():
    mpmath.mp.dps = 40
    sigma = mpmath.mpf(1)
    raw = [[mpmath.exp(-(x * x + y * y) / (2 * sigma**2)) / (2 * mpmath.pi * sigma**2) for x in (-1, 0, 1)] for y in (-1, 0, 1)]
    total = sum(sum(r) for r in raw)
    ref = np.array([[float(v / total) for v in r] for r in raw])
    k = imaging.gaussian_kernel(GaussianKernelSpec(3, 1.0))
    assert np.max(np.abs(k - ref)) < 1e-12
    # unnormalised centre is 1 / (2 pi sigma^2)
    assert abs(float(raw[1][1]) - 1 / (2 * np.pi)) < 1e-15


@given(st.sampled_from([1, 3, 5, 7, 9]), st.floats(0.2, 5.0))
@settings(max_examples=30)
def test_kernel_sums_to_one_and_is_symmetric(size, sigma):
    k = imaging.gaussian_kernel(GaussianKernelSpec(size, sigma))
    assert abs(k.sum() - 1) < 1e-12
    for t in (k[::-1], k[:, ::-1], k.T):
        np.testing.assert_allclose(t, k, rtol=0, atol=1e-18)


def test_blur_constant_image():
    img = Image(np.full((6, 7), 123, dtype=np.uint8))
    assert imaging.gaussian_blur(img) == img


def test_blur_impulse_response_is_kernel():
    t = np.zeros((5, 5))
    t[2, 2] = 1.0
    spec = GaussianKernelSpec(3, 1.0)
    out = imaging.gaussian_blur(t, spec)
    np.testing.assert_allclose(out[1:4, 1:4], imaging.gaussian_kernel(spec), atol=1e-16)


def test_blur_preserves_interior_mean():
    t = np.zeros((20, 20))
    t[8:12, 8:12] = np.arange(16.0).reshape(4, 4)
    out = imaging.gaussian_blur(t, GaussianKernelSpec(5, 1.0))
    assert abs(out.sum() - t.sum()) < 1e-9


def test_blur_replicates_edges():
    t = np.zeros((5, 5))
    t[:, 0] = 10.0
    out = imaging.gaussian_blur(t, GaussianKernelSpec(3, 1.0))
    # column 0 sees itself twice (replicated) plus column 1
    k = imaging.gaussian_kernel(GaussianKernelSpec(3, 1.0))
    assert abs(out[2, 0] - 10.0 * (k[:, 0].sum() + k[:, 1].sum())) < 1e-12


def test_blur_kernel_larger_than_image():
    with pytest.raises(DimensionError):
        imaging.gaussian_blur(np.zeros((3, 3)), GaussianKernelSpec(5, 1.0))


# -- geometry ----------------------------------------------------------------


def test_flip_small_and_involution():
    img = Image(np.array([[1, 2]], dtype=np.uint8))
    assert imaging.flip_horizontal(img).pixels.tolist() == [[2, 1]]


@given(rgb_pixels)
@settings(max_examples=30)
def test_flip_twice_is_identity(px):
    img = Image(px)
    assert imaging.flip_horizontal(imaging.flip_horizontal(img)) == img


def test_crop_identity_and_bounds():
    img = Image(np.arange(12, dtype=np.uint8).reshape(3, 4))
    assert imaging.crop(img, (0, 0, 4, 3)) == img
    assert imaging.crop(img, (1, 1, 2, 2)).pixels.tolist() == [[5, 6], [9, 10]]
    with pytest.raises(BoundsError):
        imaging.crop(img, (2, 0, 3, 1))


def test_resize_uses_tensor_convention():
    img = Image(np.array([[0, 100], [200, 250]], dtype=np.uint8))
    out = imaging.resize_bilinear(img, 4, 4)
    assert (out.width, out.height) == (4, 4)
    assert out.pixels[0].tolist() == [0, 25, 75, 100]


@given(gray_pixels)
@settings(max_examples=30)
def test_normalize_range(px):
    t = imaging.normalize(Image(px))
    assert t.shape == (1,) + px.shape
    assert t.min() >= 0 and t.max() <= 1


def test_affine_identity():
    px = np.arange(27, dtype=np.uint8).reshape(3, 3, 3)
    img = Image(px)
    assert imaging.affine_warp(img, [[1, 0, 0], [0, 1, 0]]) == img


def test_affine_translation_fills_black():
    img = Image(np.array([[10, 20, 30]], dtype=np.uint8))
    out = imaging.affine_warp(img, [[1, 0, 1], [0, 1, 0]])
    assert out.pixels.tolist() == [[0, 10, 20]]


def test_affine_zoom_about_centre_matches_hand_evaluation():
    px = np.array([[0, 40, 80], [120, 160, 200], [240, 250, 255]], dtype=np.uint8)
    out = imaging.affine_warp(Image(px), [[2, 0, -1], [0, 2, -1]])
    # destination d maps back to source (d + 1) / 2
    f = px.astype(float)

    def sample(x, y):
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        x1, y1 = min(x0 + 1, 2), min(y0 + 1, 2)
        tx, ty = x - x0, y - y0
        top = f[y0, x0] * (1 - tx) + f[y0, x1] * tx
        bot = f[y1, x0] * (1 - tx) + f[y1, x1] * tx
        return top * (1 - ty) + bot * ty

    ref = [[int(np.floor(sample((i + 1) / 2, (j + 1) / 2) + 0.5)) for i in range(3)] for j in range(3)]
    assert out.pixels.tolist() == ref


def test_affine_singular():
    with pytest.raises(ParameterError):
        imaging.affine_warp(Image(np.zeros((2, 2), dtype=np.uint8)), [[1, 2, 0], [2, 4, 0]])


def test_to_bytes_rounds_half_up_and_clamps():
    assert imaging.to_bytes([0.5, 1.49, 2.5, -3, 300]).tolist() == [1, 1, 3, 0, 255]


def test_list_images_sorted(tmp_path):
    for name in ("b.ppm", "a.pgm", "c.txt", "d.png"):
        (tmp_path / name).write_bytes(b"")
    assert imaging.list_images(tmp_path) == ["a.pgm", "b.ppm", "d.png"]
