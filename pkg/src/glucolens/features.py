"""Texture (GLCM) and Fourier-domain image descriptors.

The fused vector holds contrast, energy, homogeneity and correlation for the
four GLCM orientations, followed by low-frequency energy, high-frequency
energy and spectral entropy of the power spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import QuantizedImage, as_image, normalize_unit, quantize

ANGLES = (0, 45, 90, 135)
GLCM_STATS = ("contrast", "energy", "homogeneity", "correlation")
SPECTRAL_STATS = ("low_freq_energy", "high_freq_energy", "spectral_entropy")
FEATURE_NAMES = tuple(f"{s}_{a}" for a in ANGLES for s in GLCM_STATS) + SPECTRAL_STATS
N_FEATURES = len(FEATURE_NAMES)

LOW_CUTOFF = 0.25
HIGH_CUTOFF = 0.5


@dataclass(frozen=True)
class Glcm:
    P: np.ndarray
    d: int
    theta_deg: int

    @property
    def levels(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class Spectrum:
    magnitude: np.ndarray  # shape (H, W), indexed [v, u]
    centered: bool = False


def glcm_offset(d: int, theta_deg: int) -> tuple[int, int]:
    """Pixel offset ``(dx, dy)``; ``dx`` moves along columns, ``dy`` along rows."""
    if d < 1:
        raise ValueError(f"distance must be >= 1, got {d}")
    if theta_deg not in ANGLES:
        raise ValueError(f"theta must be one of {ANGLES}, got {theta_deg}")
    t = math.radians(theta_deg)
    return int(round(d * math.cos(t))), int(round(d * math.sin(t)))


def glcm_counts(q: QuantizedImage, d: int, theta_deg: int, symmetric: bool = True) -> np.ndarray:
    """Raw (unnormalized) co-occurrence counts, int64."""
    dx, dy = glcm_offset(d, theta_deg)
    codes = q.codes
    h, w = codes.shape
    y0, x0 = max(0, -dy), max(0, -dx)
    ys = slice(y0, max(y0, min(h, h - dy)))
    xs = slice(x0, max(x0, min(w, w - dx)))
    ref = codes[ys, xs]
    nb = codes[ys.start + dy : ys.stop + dy, xs.start + dx : xs.stop + dx]
    g = q.levels
    counts = np.bincount((ref * g + nb).ravel(), minlength=g * g).reshape(g, g)
    if symmetric:
        counts = counts + counts.T
    return counts


def glcm(q: QuantizedImage, d: int = 1, theta_deg: int = 0, symmetric: bool = True) -> Glcm:
    counts = glcm_counts(q, d, theta_deg, symmetric)
    total = counts.sum()
    if total == 0:
        raise ValueError(
            f"image {q.width}x{q.height} is too small for offset d={d}, theta={theta_deg}: no pixel pairs"
        )
    return Glcm(counts / total, d, theta_deg)


def glcm_stats(g: Glcm) -> dict[str, float]:
    P = np.asarray(g.P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("GLCM must be a square matrix")
    if P.min() < 0 or abs(P.sum() - 1.0) > 1e-9:
        raise ValueError("GLCM must be normalized (nonnegative, summing to 1)")
    n = P.shape[0]
    i, j = np.indices((n, n), dtype=np.float64)
    diff = i - j
    contrast = float(np.sum(diff**2 * P))
    energy = float(np.sum(P**2))
    homogeneity = float(np.sum(P / (1.0 + np.abs(diff))))
    mu_i = np.sum(i * P)
    mu_j = np.sum(j * P)
    sd_i = math.sqrt(np.sum((i - mu_i) ** 2 * P))
    sd_j = math.sqrt(np.sum((j - mu_j) ** 2 * P))
    if sd_i < 1e-12 or sd_j < 1e-12:
        correlation = 1.0
    else:
        correlation = float(np.sum((i - mu_i) * (j - mu_j) * P) / (sd_i * sd_j))
        correlation = min(1.0, max(-1.0, correlation))
    return {
        "contrast": contrast,
        "energy": energy,
        "homogeneity": homogeneity,
        "correlation": correlation,
    }


def dft2_magnitude(img, centered: bool = False) -> Spectrum:
    """|F(u, v)| of the unnormalized forward 2-D DFT."""
    img = as_image(img)
    mag = np.abs(np.fft.fft2(img))
    if centered:
        mag = np.fft.fftshift(mag)
    return Spectrum(mag, centered)


def normalized_radius(height: int, width: int) -> np.ndarray:
    """Radial frequency in the unshifted layout; 0 at DC, 1 at the Nyquist corner."""
    fu = np.fft.fftfreq(width) / 0.5
    fv = np.fft.fftfreq(height) / 0.5
    return np.sqrt(fu[np.newaxis, :] ** 2 + fv[:, np.newaxis] ** 2) / math.sqrt(2.0)


def spectral_features(
    s: Spectrum, low_cutoff: float = LOW_CUTOFF, high_cutoff: float = HIGH_CUTOFF
) -> dict[str, float]:
    mag = np.fft.ifftshift(s.magnitude) if s.centered else s.magnitude
    mag = mag.astype(np.float64)
    peak = mag.max()
    # p is scale invariant; dividing by the peak keeps tiny spectra from underflowing
    power = (mag / peak) ** 2 if peak > 0 else mag
    total = power.sum()
    if not total > 0:
        raise ValueError("spectral features need a spectrum with nonzero energy")
    p = power / total
    rho = normalized_radius(*p.shape)
    low = float(p[rho <= low_cutoff].sum())
    high = float(p[rho > high_cutoff].sum())
    nz = p[p > 0]
    if p.size > 1:
        entropy = float(-np.sum(nz * np.log2(nz)) / math.log2(p.size))
    else:
        entropy = 0.0
    return {"low_freq_energy": low, "high_freq_energy": high, "spectral_entropy": max(0.0, entropy)}


def fuse_features(q: QuantizedImage, img, low_cutoff: float = LOW_CUTOFF, high_cutoff: float = HIGH_CUTOFF) -> np.ndarray:
    """Concatenate per-orientation GLCM statistics (d=1) with spectral features."""
    out = []
    for theta in ANGLES:
        stats = glcm_stats(glcm(q, 1, theta, symmetric=True))
        out.extend(stats[k] for k in GLCM_STATS)
    spec = spectral_features(dft2_magnitude(img), low_cutoff, high_cutoff)
    out.extend(spec[k] for k in SPECTRAL_STATS)
    return np.array(out, dtype=np.float64)


def extract(
    img,
    levels: int = 32,
    glcm_on_spectrum: bool = False,
    low_cutoff: float = LOW_CUTOFF,
    high_cutoff: float = HIGH_CUTOFF,
) -> np.ndarray:
    """Feature vector for an image already normalized to [0, 1].

    With ``glcm_on_spectrum`` the GLCM is taken over the quantized, min-max
    scaled log-magnitude of the centered spectrum instead of the image itself.
    """
    img = as_image(img)
    if glcm_on_spectrum:
        logmag = np.log1p(dft2_magnitude(img, centered=True).magnitude)
        q = quantize(normalize_unit(logmag), levels)
    else:
        q = quantize(img, levels)
    if np.any(img):
        return fuse_features(q, img, low_cutoff, high_cutoff)
    # an all-black frame has no spectrum; report it as pure DC
    return fuse_features(q, np.ones_like(img), low_cutoff, high_cutoff)
