"""Synthetic transillumination phantom.

A Beer-Lambert attenuation model with Gaussian absorption bands stands in for
laboratory captures.  Band centers follow the published NIR absorption peaks
of glucose and water; every strength, width and scatter coefficient below is
an invented default chosen so that glucose is recoverable in the synthetic
world, not a measured tissue property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

GLUCOSE_PEAKS_NM = (1408.0, 1536.0, 1688.0, 2261.0)
WATER_PEAKS_NM = (1450.0, 1787.0, 1934.0)

# (center_nm, width_nm, strength). Glucose strengths are 1/cm per mg/dL,
# water strengths 1/cm.
DEFAULT_GLUCOSE_BANDS = tuple((c, 40.0, 2.0e-3) for c in GLUCOSE_PEAKS_NM)
DEFAULT_WATER_BANDS = ((1450.0, 60.0, 8.0), (1787.0, 50.0, 2.0), (1934.0, 60.0, 30.0))

FULL_SCALE = 1.0


@dataclass(frozen=True)
class OpticalConfig:
    wavelength_nm: float
    path_length_cm: float = 1.0
    glucose_bands: tuple = DEFAULT_GLUCOSE_BANDS
    water_bands: tuple = DEFAULT_WATER_BANDS
    scatter_coeff: float = 0.5
    glucose_scatter_slope: float = 4.0e-3
    beam_sigma_px: float = 16.0
    speckle_contrast: float = 0.2
    sensor_noise_sigma: float = 0.004
    source_kind: str = "laser"
    intensity: float = 0.9

    def __post_init__(self):
        if not 400.0 <= self.wavelength_nm <= 2500.0:
            raise ValueError(f"wavelength {self.wavelength_nm} nm outside 400-2500 nm")
        if self.path_length_cm <= 0:
            raise ValueError("path_length_cm must be positive")
        for center, width, strength in (*self.glucose_bands, *self.water_bands):
            if width <= 0 or strength < 0:
                raise ValueError(f"bad band ({center}, {width}, {strength})")
        if self.scatter_coeff < 0:
            raise ValueError("scatter_coeff must be nonnegative")
        if self.beam_sigma_px <= 0:
            raise ValueError("beam_sigma_px must be positive")
        if not 0.0 <= self.speckle_contrast <= 1.0:
            raise ValueError("speckle_contrast must lie in [0, 1]")
        if self.sensor_noise_sigma < 0:
            raise ValueError("sensor_noise_sigma must be nonnegative")
        if self.source_kind not in ("laser", "led"):
            raise ValueError(f"source_kind must be 'laser' or 'led', got {self.source_kind!r}")

    @property
    def tag(self) -> str:
        return f"{self.wavelength_nm:g}-{self.source_kind}"


@dataclass(frozen=True)
class VoltageSample:
    v_baseline: float
    v_pre: float
    v_post: float
    concentration_mgdl: float

    def features(self) -> tuple[float, float, float]:
        return (self.v_baseline, self.v_pre, self.v_post)


@dataclass(frozen=True)
class PhotodiodeConfig:
    """Electrical model of the photodiode front end."""

    optics: OpticalConfig = field(
        default_factory=lambda: OpticalConfig(
            wavelength_nm=1600.0,
            path_length_cm=0.2,
            glucose_scatter_slope=2.0e-3,
            speckle_contrast=0.0,
            source_kind="led",
        )
    )
    dark_level: float = 0.010
    dark_noise: float = 0.001
    ambient_offset: float = 0.050
    ambient_noise: float = 0.001
    gain: float = 2.0
    relative_noise: float = 0.003


# The four illumination conditions of the imaging rig. 808 nm is given the
# weakest glucose coupling so the wavelengths differ measurably.
SOURCES = {
    "650-laser": OpticalConfig(650.0, glucose_scatter_slope=4.0e-3),
    "808-laser": OpticalConfig(808.0, glucose_scatter_slope=2.5e-3),
    "850-laser": OpticalConfig(850.0, glucose_scatter_slope=3.0e-3),
    "850-led": OpticalConfig(850.0, glucose_scatter_slope=3.0e-3, speckle_contrast=0.0, source_kind="led"),
}


def _band_sum(bands, wavelength_nm: float) -> float:
    total = 0.0
    for center, width, strength in bands:
        total += strength * math.exp(-0.5 * ((wavelength_nm - center) / width) ** 2)
    return total


def absorption_coefficient(config: OpticalConfig, concentration: float) -> float:
    """Absorption coefficient in 1/cm at the configured wavelength."""
    if concentration < 0:
        raise ValueError(f"concentration must be nonnegative, got {concentration}")
    lam = config.wavelength_nm
    return _band_sum(config.water_bands, lam) + concentration * _band_sum(config.glucose_bands, lam)


def transmittance(config: OpticalConfig, concentration: float) -> float:
    mu_a = absorption_coefficient(config, concentration)
    attenuation = mu_a + config.scatter_coeff + config.glucose_scatter_slope * concentration
    if attenuation < 0:
        raise ValueError(f"negative effective attenuation {attenuation:g} 1/cm")
    return math.exp(-attenuation * config.path_length_cm)


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def beam_profile(width: int, height: int, sigma_px: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma_px**2))


def gen_image(config: OpticalConfig, concentration: float, width: int, height: int, seed: int) -> np.ndarray:
    """Render one transillumination frame, intensities in full-scale units [0, 1]."""
    if width < 8 or height < 8:
        raise ValueError(f"image must be at least 8x8, got {width}x{height}")
    rng = np.random.default_rng(seed)
    clean = config.intensity * beam_profile(width, height, config.beam_sigma_px)
    clean *= transmittance(config, concentration)
    c = config.speckle_contrast
    if config.source_kind == "laser" and c > 0:
        # fully developed speckle: Gamma with unit mean and std/mean = c
        shape = 1.0 / c**2
        clean = clean * rng.gamma(shape, 1.0 / shape, size=clean.shape)
    if config.sensor_noise_sigma > 0:
        clean = clean + rng.normal(0.0, config.sensor_noise_sigma, size=clean.shape)
    return np.clip(clean, 0.0, FULL_SCALE)


def gen_voltage_sample(pd: PhotodiodeConfig, concentration: float, seed: int) -> VoltageSample:
    if concentration < 0:
        raise ValueError(f"concentration must be nonnegative, got {concentration}")
    rng = np.random.default_rng(seed)
    e_dark, e_amb, e_rel = rng.normal(size=3)
    v_baseline = max(0.0, pd.dark_level + pd.dark_noise * e_dark)
    v_pre = v_baseline + max(0.0, pd.ambient_offset + pd.ambient_noise * e_amb)
    t = transmittance(pd.optics, concentration)
    v_post = v_pre + max(0.0, pd.gain * t * (1.0 + pd.relative_noise * e_rel))
    return VoltageSample(v_baseline, v_pre, v_post, float(concentration))


def gen_voltage_set(pd: PhotodiodeConfig, n: int, conc_min: float = 70.0, conc_max: float = 200.0, seed: int = 42):
    """``n`` photodiode samples at concentrations drawn uniformly from [min, max]."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if not conc_min < conc_max or conc_min < 0:
        raise ValueError(f"bad concentration range [{conc_min}, {conc_max}]")
    conc = np.random.default_rng(derive_seed(seed, 5)).uniform(conc_min, conc_max, size=n)
    return [gen_voltage_sample(pd, float(c), derive_seed(seed, 6, i)) for i, c in enumerate(conc)]


def concentration_levels(conc_min: float, conc_max: float, step: float) -> np.ndarray:
    if not conc_min < conc_max:
        raise ValueError(f"conc_min ({conc_min}) must be below conc_max ({conc_max})")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    # small slack so that e.g. (200 - 70) / 2 does not lose the endpoint to rounding
    n = int(math.floor((conc_max - conc_min) / step + 1e-9)) + 1
    return conc_min + step * np.arange(n, dtype=np.float64)


@dataclass(frozen=True)
class ImageRecord:
    source: str
    source_index: int
    level_index: int
    replicate: int
    concentration_mgdl: float
    seed: int


def plan_dataset(sources, conc_min, conc_max, step, images_per_level, seed) -> list[ImageRecord]:
    """Enumerate every (source, level, replicate) frame with its derived seed."""
    levels = concentration_levels(conc_min, conc_max, step)
    records = []
    for s_idx, tag in enumerate(sources):
        for l_idx, conc in enumerate(levels):
            for rep in range(images_per_level):
                records.append(
                    ImageRecord(tag, s_idx, l_idx, rep, float(conc), derive_seed(seed, s_idx, l_idx, rep))
                )
    return records


def gen_dataset(
    out_dir,
    sources: dict[str, OpticalConfig] | None = None,
    conc_min: float = 70.0,
    conc_max: float = 200.0,
    step: float = 2.0,
    images_per_level: int = 10,
    seed: int = 42,
    size: int = 128,
):
    """Write one PGM per frame under ``out_dir/images`` plus ``out_dir/manifest.csv``.

    Returns the list of manifest rows.
    """
    from pathlib import Path

    from .dataio import ManifestRow, write_manifest, write_pgm

    sources = SOURCES if sources is None else sources
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in plan_dataset(list(sources), conc_min, conc_max, step, images_per_level, seed):
        cfg = sources[rec.source]
        img = gen_image(cfg, rec.concentration_mgdl, size, size, rec.seed)
        name = f"{rec.source}_c{rec.concentration_mgdl:g}_r{rec.replicate:02d}.pgm"
        write_pgm(img, img_dir / name)
        rows.append(
            ManifestRow(
                path=f"images/{name}",
                wavelength_nm=cfg.wavelength_nm,
                source_kind=cfg.source_kind,
                concentration_mgdl=rec.concentration_mgdl,
            )
        )
    write_manifest(rows, out_dir / "manifest.csv")
    return rows


def with_overrides(config: OpticalConfig, **overrides) -> OpticalConfig:
    """``dataclasses.replace`` that ignores ``None`` values."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
