import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glucolens import imagecore as ic

unit_images = arrays(
    np.float64,
    st.tuples(st.integers(1, 9), st.integers(1, 9)),
    elements=st.floats(0.0, 1.0, allow_nan=False),
)


def test_resize_constant_stays_constant():
    out = ic.resize_bilinear(np.full((5, 7), 0.3), 11, 4)
    assert out.shape == (4, 11)
    np.testing.assert_allclose(out, 0.3, rtol=0, atol=1e-15)


def test_resize_identity():
    img = np.random.default_rng(0).random((6, 9))
    np.testing.assert_allclose(ic.resize_bilinear(img, 9, 6), img, atol=1e-12)


def test_resize_hand_example():
    out = ic.resize_bilinear(np.array([[0.0, 1.0]]), 3, 1)
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]], atol=1e-15)


def test_resize_rejects_zero():
    with pytest.raises(ValueError):
        ic.resize_bilinear(np.ones((2, 2)), 0, 3)


@given(unit_images, st.integers(1, 12), st.integers(1, 12))
def test_resize_stays_within_input_range(img, w, h):
    out = ic.resize_bilinear(img, w, h)
    assert out.shape == (h, w)
    assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


def test_normalize_examples():
    np.testing.assert_allclose(ic.normalize_unit([[0, 128, 255]]), [[0, 128 / 255, 1]], rtol=1e-15)
    assert ic.normalize_unit([[0, 128, 255]])[0, 1] == pytest.approx(0.50196, abs=1e-5)
    np.testing.assert_array_equal(ic.normalize_unit([[7, 7, 7]]), [[0, 0, 0]])
    x = np.array([[0.0, 0.3, 1.0]])
    np.testing.assert_array_equal(ic.normalize_unit(x), x)


def test_quantize_examples():
    assert ic.quantize([[0.0, 1.0]], 8).codes.tolist() == [[0, 7]]
    assert ic.quantize([[0.49, 0.5]], 2).codes.tolist() == [[0, 1]]
    assert ic.quantize([[0.5]], 32).codes.tolist() == [[16]]


def test_quantize_rejects_unnormalized():
    with pytest.raises(ValueError):
        ic.quantize([[1.2]], 8)
    with pytest.raises(ValueError):
        ic.quantize([[-0.1]], 8)
    with pytest.raises(ValueError):
        ic.quantize([[0.5]], 1)


@given(unit_images, st.integers(2, 64))
def test_quantize_codes_in_range(img, g):
    q = ic.quantize(img, g)
    assert q.codes.min() >= 0 and q.codes.max() <= g - 1
    assert q.codes.shape == img.shape


def test_quantized_image_validates():
    with pytest.raises(ValueError):
        ic.QuantizedImage(np.array([[0, 4]]), 4)


def test_contrast_examples():
    img = np.array([[0.0, 1.0]])
    np.testing.assert_array_equal(ic.aug_contrast(img, 1.0), img)
    np.testing.assert_allclose(ic.aug_contrast(img, 0.5), [[0.25, 0.75]])
    np.testing.assert_array_equal(ic.aug_contrast(img, 2.0), [[0.0, 1.0]])
    with pytest.raises(ValueError):
        ic.aug_contrast(img, 0.0)


def test_rotate_examples():
    img = np.array([[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_allclose(ic.aug_rotate(img, 0.0), img, atol=1e-12)
    np.testing.assert_allclose(ic.aug_rotate(img, 180.0), [[0.4, 0.3], [0.2, 0.1]], atol=1e-12)
    np.testing.assert_allclose(ic.aug_rotate(np.full((5, 6), 0.7), 33.0), 0.7, atol=1e-12)


@given(unit_images)
def test_rotate_180_twice_is_identity(img):
    np.testing.assert_allclose(ic.aug_rotate(ic.aug_rotate(img, 180.0), 180.0), img, atol=1e-9)


def test_noise_examples():
    img = np.full((128, 128), 0.5)
    np.testing.assert_array_equal(ic.aug_noise(img, 0.0, 1), img)
    a = ic.aug_noise(img, 0.01, 3)
    assert np.array_equal(a, ic.aug_noise(img, 0.01, 3))
    # 0.5 +- 5 sigma never clamps, so this is the pre-clamp deviation
    assert abs(np.std(a - img) - 0.01) < 0.001
    with pytest.raises(ValueError):
        ic.aug_noise(img, -0.1, 0)


@settings(max_examples=50)
@given(unit_images, st.integers(0, 2**32), st.floats(0.5, 2.0), st.floats(-45, 45), st.floats(0, 0.1))
def test_augmentations_stay_in_unit_range(img, seed, gain, angle, sigma):
    for out in (ic.aug_contrast(img, gain), ic.aug_rotate(img, angle), ic.aug_noise(img, sigma, seed)):
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


@given(unit_images)
def test_identity_parameters_compose_to_identity(img):
    out = ic.aug_noise(ic.aug_rotate(ic.aug_contrast(img, 1.0), 0.0), 0.0, 0)
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_random_augment_deterministic():
    img = np.random.default_rng(1).random((16, 16))
    a = ic.random_augment(img, 5)
    assert np.array_equal(a, ic.random_augment(img, 5))
    assert not np.array_equal(a, ic.random_augment(img, 6))
