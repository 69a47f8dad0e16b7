"""Grayscale image preprocessing and augmentation.

Images are plain ``float64`` numpy arrays of shape ``(H, W)`` indexed
``img[y, x]``.  Intensities are either on an arbitrary nonnegative scale or
normalized to ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Default augmentation sampling ranges.
GAIN_RANGE = (0.8, 1.2)
ANGLE_RANGE = (-10.0, 10.0)
NOISE_SIGMA_RANGE = (0.002, 0.01)


@dataclass(frozen=True)
class QuantizedImage:
    codes: np.ndarray  # int64, shape (H, W), values in [0, levels - 1]
    levels: int

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= self.levels):
            raise ValueError("codes out of range [0, levels - 1]")

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


def as_image(pixels) -> np.ndarray:
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    return img


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional coordinates with edge clamping."""
    h, w = img.shape
    sx = np.clip(sx, 0.0, w - 1)
    sy = np.clip(sy, 0.0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def resize_bilinear(img, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize using pixel-center alignment and edge clamping."""
    img = as_image(img)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    h, w = img.shape
    if (out_w, out_h) == (w, h):
        return img.copy()
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(sx, sy)
    return _bilinear_sample(img, gx, gy)


def normalize_unit(img) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant image maps to all zeros."""
    img = as_image(img)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def quantize(img, levels: int) -> QuantizedImage:
    img = as_image(img)
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("quantize expects an image normalized to [0, 1]")
    codes = np.minimum(np.floor(img * levels), levels - 1).astype(np.int64)
    return QuantizedImage(codes, levels)


def aug_contrast(img, gain: float) -> np.ndarray:
    """Stretch (gain > 1) or compress intensities about the image mean."""
    img = as_image(img)
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    mean = img.mean()
    return np.clip(mean + gain * (img - mean), 0.0, 1.0)


def aug_rotate(img, angle_deg: float) -> np.ndarray:
    """Rotate about the image center with bilinear sampling and edge padding."""
    img = as_image(img)
    if angle_deg % 360.0 == 0.0:
        return img.copy()
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # snap to exact values so quarter turns map the grid onto itself
    cos_t = np.round(cos_t) if abs(cos_t - np.round(cos_t)) < 1e-12 else cos_t
    sin_t = np.round(sin_t) if abs(sin_t - np.round(sin_t)) < 1e-12 else sin_t
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse mapping: output pixel pulls from the source rotated by -angle
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy
    return _bilinear_sample(img, sx, sy)


def aug_noise(img, sigma: float, seed: int) -> np.ndarray:
    img = as_image(img)
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)


def random_augment(
    img,
    seed: int,
    gain_range=GAIN_RANGE,
    angle_range=ANGLE_RANGE,
    sigma_range=NOISE_SIGMA_RANGE,
) -> np.ndarray:
    """Apply contrast, rotation and noise with parameters drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    gain = rng.uniform(*gain_range)
    angle = rng.uniform(*angle_range)
    sigma = rng.uniform(*sigma_range)
    noise_seed = int(rng.integers(0, 2**63 - 1))
    out = aug_contrast(img, gain)
    out = aug_rotate(out, angle)
    return aug_noise(out, sigma, noise_seed)
