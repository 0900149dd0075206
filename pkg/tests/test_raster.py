import math

import numpy as np
import pytest

from irissr import raster


# --- independent scalar oracles -------------------------------------------

def bilinear_oracle(img, out_w, out_h):
    """Direct evaluation of the bilinear weight formula at each output pixel."""
    in_h, in_w = img.shape
    out = np.empty((out_h, out_w))
    for oy in range(out_h):
        sy = (oy + 0.5) * in_h / out_h - 0.5
        y0 = math.floor(sy)
        fy = sy - y0
        for ox in range(out_w):
            sx = (ox + 0.5) * in_w / out_w - 0.5
            x0 = math.floor(sx)
            fx = sx - x0

            def px(y, x):
                return img[min(max(y, 0), in_h - 1), min(max(x, 0), in_w - 1)]

            out[oy, ox] = ((1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1))
                           + fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)))
    return out


def test_bilinear_constant():
    img = np.full((5, 7), 0.42)
    out = raster.resize_bilinear(img, 13, 3)
    assert out.shape == (3, 13)
    assert np.allclose(out, 0.42, atol=1e-12)


def test_bilinear_identity_resize():
    img = np.random.default_rng(0).uniform(size=(9, 11))
    out = raster.resize_bilinear(img, 11, 9)
    assert np.array_equal(out, img)


def test_bilinear_checker_2x2_to_4x4_matches_hand_values():
    img = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = raster.resize_bilinear(img, 4, 4)
    # hand evaluation of the half-pixel-center formula at the 2x2 center block
    assert np.allclose(out[1:3, 1:3], [[0.375, 0.625], [0.625, 0.375]], atol=1e-15)
    assert np.allclose(out, bilinear_oracle(img, 4, 4), atol=1e-12)


def test_bilinear_matches_oracle_random():
    rng = np.random.default_rng(7)
    for _ in range(5):
        img = rng.uniform(size=(6, 9))
        out_w, out_h = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        got = raster.resize_bilinear(img, out_w, out_h)
        assert np.allclose(got, bilinear_oracle(img, out_w, out_h), atol=1e-12)


def test_bilinear_zero_target_rejected():
    img = np.zeros((4, 4))
    with pytest.raises(raster.RasterError):
        raster.resize_bilinear(img, 0, 4)
    with pytest.raises(raster.RasterError):
        raster.resize_bilinear(img, 4, 0)


def test_bicubic_constant_and_identity():
    img = np.full((6, 6), 0.3)
    assert np.allclose(raster.resize_bicubic(img, 17, 5), 0.3, atol=1e-12)
    img = np.random.default_rng(1).uniform(size=(8, 8))
    assert np.array_equal(raster.resize_bicubic(img, 8, 8), img)


def test_bicubic_reproduces_linear_ramp():
    # cubic convolution reproduces linear functions away from the borders
    ramp = np.tile(np.linspace(0.1, 0.9, 16), (16, 1))
    up = raster.resize_bicubic(ramp, 32, 32)
    xs = (np.arange(32) + 0.5) * 0.5 - 0.5
    expected = 0.1 + (0.9 - 0.1) * xs / 15.0
    assert np.abs(up[10, 4:28] - expected[4:28]).max() < 1e-6


def test_bicubic_clamps_overshoot():
    img = np.zeros((8, 8))
    img[:, 4:] = 1.0  # step edge: unclamped cubic overshoots
    up = raster.resize_bicubic(img, 32, 32)
    assert up.min() >= 0.0 and up.max() <= 1.0
    over = raster.resize_bicubic_unclamped(img, 32, 32)
    assert over.min() < 0.0 and over.max() > 1.0


def test_gaussian_blur_constant():
    img = np.full((16, 16), 0.77)
    assert np.allclose(raster.gaussian_blur(img, 2.0), 0.77, atol=1e-12)


def test_gaussian_blur_impulse_is_tap_product():
    sigma = 1.2
    kern = raster.BlurKernel.make(sigma)
    assert kern.radius == math.ceil(3 * sigma)
    assert abs(kern.taps.sum() - 1.0) < 1e-9
    assert np.allclose(kern.taps, kern.taps[::-1])
    img = np.zeros((21, 21))
    img[10, 10] = 1.0
    out = raster.gaussian_blur(img, sigma)
    r = kern.radius
    # independent evaluation of the separable kernel product
    expected = np.empty((2 * r + 1, 2 * r + 1))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            expected[dy + r, dx + r] = kern.taps[dy + r] * kern.taps[dx + r]
    assert np.allclose(out[10 - r:10 + r + 1, 10 - r:10 + r + 1], expected,
                       atol=1e-12)


def test_gaussian_blur_subtap_sigma_near_identity():
    # sigma 0.3: single-tap kernel mass concentrates at the center; on a smooth
    # image the blur is within 1e-3 of the identity
    ys, xs = np.mgrid[0:32, 0:32] / 31.0
    img = 0.2 + 0.3 * xs + 0.3 * ys
    out = raster.gaussian_blur(img, 0.3)
    assert np.abs(out - img).max() < 1e-3


def test_gaussian_blur_rejects_nonpositive_sigma():
    with pytest.raises(raster.RasterError):
        raster.gaussian_blur(np.zeros((4, 4)), 0.0)
    with pytest.raises(raster.RasterError):
        raster.BlurKernel.make(-1.0)


def test_blur_linearity():
    rng = np.random.default_rng(3)
    i1 = rng.uniform(size=(12, 12))
    i2 = rng.uniform(size=(12, 12))
    a, b = 0.6, 0.3
    lhs = raster.gaussian_blur(a * i1 + b * i2, 1.5)
    rhs = a * raster.gaussian_blur(i1, 1.5) + b * raster.gaussian_blur(i2, 1.5)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_degrade_constant_any_size_and_sigma():
    img = np.full((31, 31), 0.5)
    for size, sigma in [(15, 1.0), (7, 3.3), (31, 0.4), (2, 7.7)]:
        out = raster.degrade(img, size, size, sigma)
        assert out.shape == (size, size)
        assert np.allclose(out, 0.5, atol=1e-12)


def test_degrade_sizes_match_configuration():
    img = np.zeros((231, 231))
    out = raster.degrade(img, 115, 115, 1.0)
    assert out.shape == (115, 115)
    with pytest.raises(raster.RasterError):
        raster.degrade(img, 232, 231, 1.0)


def test_degrade_roundtrip_close_with_zero_sigma():
    from irissr import dataset
    diffs = []
    for seed in range(5):
        big, _ = dataset.synth_iris(seed, 128)
        x = raster.degrade(big, 32, 32, 0.0)
        y_star = raster.resize_bicubic(x, 128, 128)
        back = raster.degrade(y_star, 32, 32, 0.0)
        diffs.append(np.abs(back - x).mean())
    assert max(diffs) < 0.02


def test_upsample_contracts():
    img = np.random.default_rng(2).uniform(size=(13, 13))
    out = raster.upsample(img, 319, 319)
    assert out.shape == (319, 319)
    same = raster.upsample(img, 13, 13)
    assert np.array_equal(same, img)
    assert np.allclose(raster.upsample(np.full((4, 4), 0.9), 9, 9), 0.9, atol=1e-12)
    with pytest.raises(raster.RasterError):
        raster.upsample(img, 12, 13)


def test_resamplers_preserve_unit_range():
    rng = np.random.default_rng(11)
    for _ in range(5):
        img = rng.uniform(size=(10, 14))
        for fn in (raster.resize_bilinear, raster.resize_bicubic):
            out = fn(img, 23, 5)
            assert out.min() >= 0.0 and out.max() <= 1.0


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(17, 23))
    path = tmp_path / "img.pgm"
    raster.write_pgm(path, img)
    back = raster.read_pgm(path)
    assert back.shape == img.shape
    # 8-bit quantization: exact at the quantized grid
    assert np.abs(back - np.rint(img * 255) / 255.0).max() < 1e-12
    # quantized values round-trip bit-exactly
    raster.write_pgm(path, back)
    assert np.array_equal(raster.read_pgm(path), back)


def test_pgm_header_with_comments(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes([0, 128, 255, 64])
    path.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + body)
    img = raster.read_pgm(path)
    assert img.shape == (2, 2)
    assert np.allclose(img.ravel(), np.array([0, 128, 255, 64]) / 255.0)


def test_pgm_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(raster.RasterError):
        raster.read_pgm(p)
    p.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(raster.RasterError):
        raster.read_pgm(p)


def test_png_roundtrip_and_luma(tmp_path):
    pil = pytest.importorskip("PIL.Image")
    img = np.random.default_rng(5).uniform(size=(9, 9))
    path = tmp_path / "img.png"
    raster.write_png(path, img)
    back = raster.read_png(path)
    assert np.abs(back - np.rint(img * 255) / 255.0).max() < 1e-12
    # color to luma via BT.601
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    pil.fromarray(rgb, mode="RGB").save(tmp_path / "red.png")
    red = raster.read_png(tmp_path / "red.png")
    assert np.allclose(red, 0.299, atol=1e-12)


def test_determinism_bit_identical():
    img = np.random.default_rng(6).uniform(size=(33, 29))
    a = raster.degrade(img, 11, 13, 1.7)
    b = raster.degrade(img, 11, 13, 1.7)
    assert np.array_equal(a, b)
