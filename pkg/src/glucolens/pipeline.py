"""Dataset-level glue shared by the command line and the end-to-end tests."""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio, evaluation, features, forest, imagecore, nn
from .phantom import derive_seed

log = logging.getLogger(__name__)

VOLTAGE_COLUMNS = ["sample_id", "v_baseline", "v_pre", "v_post", "concentration_mgdl"]
PRED_COLUMNS = ["id", "mode", "model", "wavelength", "reference_mgdl", "predicted_mgdl"]
METRIC_COLUMNS = ["mode", "model", "wavelength", "n", "rmse", "mae", "mape"] + [
    f"zone_{z}" for z in evaluation.ZONES
]
VOLTAGE_MODELS = ("LR", "MLR", "RFR")
DEFAULT_VOLTAGE_FEATURES = {"LR": "ratio", "MLR": "triple", "RFR": "triple"}


def fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ images


def load_image(path, size: int | None = None, normalize: str = "fullscale") -> np.ndarray:
    """Read a frame, resize to ``size`` x ``size`` and normalize to [0, 1].

    ``fullscale`` keeps intensities relative to the sensor maximum (the PGM
    maxval); ``minmax`` stretches each frame to its own range.
    """
    img = dataio.read_pgm(path)
    if size is not None:
        img = imagecore.resize_bilinear(img, size, size)
    if normalize == "minmax":
        img = imagecore.normalize_unit(img)
    elif normalize != "fullscale":
        raise ValueError(f"unknown normalization {normalize!r}")
    return np.clip(img, 0.0, 1.0)


def augment_dataset(
    rows,
    base_dir,
    out_dir,
    multiplier: float = 1.5,
    seed: int = 42,
    gain_range=imagecore.GAIN_RANGE,
    angle_range=imagecore.ANGLE_RANGE,
    sigma_range=imagecore.NOISE_SIGMA_RANGE,
):
    """Write ``round(multiplier * n_raw)`` augmented frames next to a new manifest.

    Every raw frame gets ``floor(multiplier)`` copies; the remainder is spread
    over a seeded subset.  Raw rows are kept, with paths rebased to ``out_dir``.
    """
    if multiplier < 0:
        raise ValueError(f"augmentation multiplier must be nonnegative, got {multiplier}")
    base_dir, out_dir = Path(base_dir), Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    raw = [r for r in rows if r.is_raw]
    total = int(np.floor(multiplier * len(raw) + 0.5))
    whole = int(np.floor(multiplier))
    extra = max(0, total - whole * len(raw))
    bonus = set(np.random.default_rng(derive_seed(seed, 3)).permutation(len(raw))[:extra].tolist())
    out = []
    for i, row in enumerate(raw):
        rebased = replace(row, path=_rebase(row.path, base_dir, out_dir))
        out.append(rebased)
        img = dataio.read_pgm(base_dir / row.path)
        for k in range(whole + (1 if i in bonus else 0)):
            aug = imagecore.random_augment(
                img, derive_seed(seed, 4, i, k), gain_range, angle_range, sigma_range
            )
            name = f"aug_{Path(row.path).stem}_k{k}.pgm"
            dataio.write_pgm(aug, img_dir / name)
            out.append(replace(row, path=f"images/{name}", augmented_from=rebased.path))
    dataio.write_manifest(out, out_dir / "manifest.csv")
    return out


def _rebase(path: str, base_dir: Path, out_dir: Path) -> str:
    return Path(os.path.relpath((base_dir / path).resolve(), out_dir.resolve())).as_posix()


def assign_splits(rows, ratio: float = 0.7, seed: int = 42):
    """Label rows train/test without leaking augmented copies across the split.

    Raw frames are split per illumination source (sorted by path, then a
    seeded shuffle); augmented frames inherit the label of their parent.
    Rows that already carry a label keep it.
    """
    by_source = defaultdict(list)
    for r in rows:
        if r.is_raw and r.split == "none":
            by_source[r.source].append(r.path)
    label = {}
    for source in sorted(by_source):
        paths = sorted(by_source[source])
        if len(paths) < 2:
            raise ValueError(f"source {source} has fewer than 2 raw frames; cannot split")
        train, test = evaluation.split_train_test(paths, ratio, seed)
        label.update({p: "train" for p in train})
        label.update({p: "test" for p in test})
    for r in rows:
        if r.is_raw and r.split != "none":
            label[r.path] = r.split
    out = []
    for r in rows:
        if r.split != "none":
            out.append(r)
        elif r.is_raw:
            out.append(replace(r, split=label[r.path]))
        else:
            out.append(replace(r, split=label.get(r.augmented_from, "none")))
    return out


def source_tag(wavelength: float, source_kind: str) -> str:
    return f"{float(wavelength):g}-{source_kind}"


def select_rows(rows, source: str, split: str):
    """Rows of one source; test (and all) selections use raw frames only."""
    rows = [r for r in rows if r.source == source]
    if split == "train":
        return [r for r in rows if r.split == "train"]
    if split == "test":
        return [r for r in rows if r.split == "test" and r.is_raw]
    return [r for r in rows if r.is_raw]


def featurize_rows(
    rows,
    base_dir,
    size: int = 128,
    levels: int = 32,
    glcm_on_spectrum: bool = False,
    normalize: str = "fullscale",
    low_cutoff: float = features.LOW_CUTOFF,
    high_cutoff: float = features.HIGH_CUTOFF,
) -> np.ndarray:
    base_dir = Path(base_dir)
    out = np.empty((len(rows), features.N_FEATURES))
    for i, r in enumerate(rows):
        img = load_image(base_dir / r.path, size, normalize)
        out[i] = features.extract(img, levels, glcm_on_spectrum, low_cutoff, high_cutoff)
    return out


def image_tensor(rows, base_dir, size: int, normalize: str = "fullscale") -> np.ndarray:
    base_dir = Path(base_dir)
    return np.stack([load_image(base_dir / r.path, size, normalize) for r in rows])[:, None, :, :]


# ----------------------------------------------------------------- voltage


def write_voltages(samples, path) -> None:
    dataio.write_table(
        path,
        VOLTAGE_COLUMNS,
        [[i, fmt(s.v_baseline), fmt(s.v_pre), fmt(s.v_post), fmt(s.concentration_mgdl)] for i, s in enumerate(samples)],
    )


def read_voltages(path):
    recs = dataio.read_table(path, VOLTAGE_COLUMNS)
    ids = [r["sample_id"] for r in recs]
    X = np.array([[float(r["v_baseline"]), float(r["v_pre"]), float(r["v_post"])] for r in recs]).reshape(-1, 3)
    y = np.array([float(r["concentration_mgdl"]) for r in recs])
    return ids, X, y


def voltage_features(X, kind: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if kind == "triple":
        return X
    if kind == "ratio":
        return (X[:, 2] / X[:, 1])[:, None]
    raise ValueError(f"unknown voltage feature set {kind!r}")


def fit_voltage_model(model_name: str, X, y, feature_set: str | None = None, **forest_kw):
    if model_name not in VOLTAGE_MODELS:
        raise ValueError(f"unknown voltage model {model_name!r}; expected one of {VOLTAGE_MODELS}")
    feature_set = feature_set or DEFAULT_VOLTAGE_FEATURES[model_name]
    F = voltage_features(X, feature_set)
    if model_name in ("LR", "MLR"):
        model = forest.fit_ols(F, y)
    else:
        model = forest.fit_forest(F, y, **forest_kw)
    model.meta = {"mode": "voltage", "model": model_name, "wavelength": "1600-led", "feature_set": feature_set}
    return model


# ---------------------------------------------------------------- training


def train_image_model(
    rows,
    base_dir,
    model_id: str,
    source: str,
    size: int = 128,
    levels: int = 32,
    glcm_on_spectrum: bool = False,
    normalize: str = "fullscale",
    training: nn.TrainConfig | None = None,
    feature_cache=None,
    epoch_log=None,
):
    """Fit one network on the training frames of a single source."""
    train_rows = select_rows(rows, source, "train")
    if not train_rows:
        raise ValueError(f"no training frames for source {source}")
    y = np.array([r.concentration_mgdl for r in train_rows])
    if model_id == "M4":
        x = image_tensor(train_rows, base_dir, size, normalize)
        spec = nn.build_model("M4", (1, size, size), training)
    else:
        x = feature_cache(train_rows) if feature_cache else featurize_rows(
            train_rows, base_dir, size, levels, glcm_on_spectrum, normalize
        )
        spec = nn.build_model(model_id, (features.N_FEATURES,), training)
    log.info("training %s on %d frames of %s", model_id, len(train_rows), source)
    model = nn.fit(spec, x, y, log=epoch_log)
    model.meta = {
        "mode": "image",
        "model": model_id,
        "wavelength": source,
        "size": size,
        "levels": levels,
        "glcm_on_spectrum": glcm_on_spectrum,
        "normalize": normalize,
    }
    return model


def predict_image_rows(model, rows, base_dir, feature_cache=None) -> np.ndarray:
    meta = model.meta
    if meta["model"] == "M4":
        x = image_tensor(rows, base_dir, meta["size"], meta["normalize"])
    elif feature_cache:
        x = feature_cache(rows)
    else:
        x = featurize_rows(rows, base_dir, meta["size"], meta["levels"], meta["glcm_on_spectrum"], meta["normalize"])
    return model.predict(x)


def feature_lookup(path):
    """Callable mapping manifest rows to cached feature vectors (keyed by path)."""
    rows, mat = dataio.read_features(path, features.FEATURE_NAMES)
    index = {r.path: i for i, r in enumerate(rows)}

    def lookup(wanted):
        missing = [r.path for r in wanted if r.path not in index]
        if missing:
            raise ValueError(f"{len(missing)} frame(s) missing from feature cache, e.g. {missing[0]}")
        return mat[[index[r.path] for r in wanted]]

    return rows, lookup


# -------------------------------------------------------------- reporting


def prediction_records(meta, ids, refs, preds):
    return [
        [i, meta["mode"], meta["model"], meta["wavelength"], fmt(r), fmt(p)]
        for i, r, p in zip(ids, refs, preds)
    ]


def metrics_rows(pred_records):
    """Group prediction rows by (mode, model, wavelength) into metric rows."""
    groups = defaultdict(lambda: ([], []))
    order = []
    for rec in pred_records:
        key = (rec["mode"], rec["model"], rec["wavelength"])
        if key not in groups:
            order.append(key)
        groups[key][0].append(float(rec["reference_mgdl"]))
        groups[key][1].append(float(rec["predicted_mgdl"]))
    out = []
    for key in order:
        refs, preds = groups[key]
        m = evaluation.compute_metrics(refs, preds)
        clipped = np.clip(preds, 0.0, evaluation.CEG_MAX)
        ceg = evaluation.ceg_report(refs, clipped)
        out.append(
            {
                "mode": key[0],
                "model": key[1],
                "wavelength": key[2],
                "n": m.n,
                "rmse": m.rmse,
                "mae": m.mae,
                "mape": m.mape,
                **{f"zone_{z}": ceg.percentages[z] for z in evaluation.ZONES},
            }
        )
    return out


def write_metrics(rows, path) -> None:
    dataio.write_table(
        path,
        METRIC_COLUMNS,
        [[r[c] if c in ("mode", "model", "wavelength") else (int(r[c]) if c == "n" else fmt(r[c])) for c in METRIC_COLUMNS] for r in rows],
    )


def with_850_average(rows):
    """Append an ``850-avg`` row wherever both 850 nm sources are present."""
    rows = list(rows)
    keyed = {(r["mode"], r["model"], r["wavelength"]): r for r in rows}
    pairs = sorted(
        {
            (mode, model)
            for mode, model, _ in keyed
            if (mode, model, "850-laser") in keyed
            and (mode, model, "850-led") in keyed
            and (mode, model, "850-avg") not in keyed
        }
    )
    for mode, model in pairs:
        laser, led = keyed[(mode, model, "850-laser")], keyed[(mode, model, "850-led")]
        avg = {"mode": mode, "model": model, "wavelength": "850-avg", "n": int(laser["n"]) + int(led["n"])}
        for c in METRIC_COLUMNS[4:]:
            avg[c] = 0.5 * (float(laser[c]) + float(led[c]))
        rows.append(avg)
    return rows


_MODEL_ORDER = {m: i for i, m in enumerate(("M1", "M2", "M3", "M4", "LR", "MLR", "RFR"))}
_WAVE_ORDER = {w: i for i, w in enumerate(("650-laser", "808-laser", "850-laser", "850-led", "850-avg", "1600-led"))}


def report_rows(rows):
    rows = with_850_average(rows)
    return sorted(
        rows,
        key=lambda r: (
            r["mode"] != "image",
            _MODEL_ORDER.get(r["model"], 99),
            r["model"],
            _WAVE_ORDER.get(r["wavelength"], 99),
            r["wavelength"],
        ),
    )


def format_report(rows) -> str:
    lines = [f"{'Mode':<8} {'Model':<6} {'Wavelength':<11} {'RMSE':>8} {'MAE':>8} {'MAPE':>8} {'ZoneA':>7}"]
    for r in rows:
        lines.append(
            f"{r['mode']:<8} {r['model']:<6} {r['wavelength']:<11} {float(r['rmse']):8.2f} "
            f"{float(r['mae']):8.2f} {float(r['mape']):7.2f}% {float(r['zone_A']):6.1f}%"
        )
    return "\n".join(lines)
