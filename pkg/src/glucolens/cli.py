"""Command-line entry point: ``glucolens <subcommand> [flags]``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 validation.  Failures print one
line ``glucolens: error[<code>]: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, evaluation, features, imagecore, nn, phantom, pipeline

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 2, 3, 4
SEED_ENV = "GLUCOLENS_SEED"
DEFAULT_SEED = 42

log = logging.getLogger("glucolens")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sub = self.prog.partition(" ")[2]
        raise CliError(EXIT_USAGE, f"{sub}: {message}" if sub else message)


def _fail(code: int, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"glucolens: error[{code}]: {text}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="key = value file; explicit flags win")
    p.add_argument("--seed", type=int, help=f"run seed (default: ${SEED_ENV} or {DEFAULT_SEED})")
    p.add_argument("-v", "--verbose", action="store_true")


def _phantom_flags(p):
    g = p.add_argument_group("phantom overrides (apply to every source)")
    g.add_argument("--path-length", type=float, dest="path_length_cm")
    g.add_argument("--scatter-coeff", type=float)
    g.add_argument("--glucose-scatter-slope", type=float)
    g.add_argument("--beam-sigma", type=float, dest="beam_sigma_px")
    g.add_argument("--speckle-contrast", type=float)
    g.add_argument("--sensor-noise", type=float, dest="sensor_noise_sigma")
    g.add_argument("--intensity", type=float)


def _image_flags(p):
    p.add_argument("--size", type=int, default=128, help="square working resolution")
    p.add_argument("--levels", type=int, default=32, help="GLCM gray levels")
    p.add_argument("--glcm-on-spectrum", action="store_true", help="texture on the log-magnitude spectrum")
    p.add_argument("--normalize", choices=("fullscale", "minmax"), default="fullscale")
    p.add_argument("--low-cutoff", type=float, default=features.LOW_CUTOFF)
    p.add_argument("--high-cutoff", type=float, default=features.HIGH_CUTOFF)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glucolens", description="Synthetic glucose estimation pipeline")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-images", help="render phantom frames and a manifest")
    _common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--min", type=float, default=70.0, dest="conc_min")
    p.add_argument("--max", type=float, default=200.0, dest="conc_max")
    p.add_argument("--step", type=float, default=2.0)
    p.add_argument("--per-level", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--sources", default=",".join(phantom.SOURCES), help="comma-separated source tags")
    _phantom_flags(p)

    p = sub.add_parser("gen-voltages", help="simulate photodiode voltage samples")
    _common(p)
    p.add_argument("--out", help="output CSV")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--min", type=float, default=70.0, dest="conc_min")
    p.add_argument("--max", type=float, default=200.0, dest="conc_max")
    p.add_argument("--dark-level", type=float, default=phantom.PhotodiodeConfig.dark_level)
    p.add_argument("--ambient-offset", type=float, default=phantom.PhotodiodeConfig.ambient_offset)
    p.add_argument("--gain", type=float, default=phantom.PhotodiodeConfig.gain)
    p.add_argument("--relative-noise", type=float, default=phantom.PhotodiodeConfig.relative_noise)

    p = sub.add_parser("augment", help="add augmented copies and train/test labels")
    _common(p)
    p.add_argument("--manifest", help="input manifest CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--multiplier", type=float, default=1.5, help="augmented frames per raw frame")
    p.add_argument("--train-ratio", type=float, default=0.7)
    p.add_argument("--gain-min", type=float, default=imagecore.GAIN_RANGE[0])
    p.add_argument("--gain-max", type=float, default=imagecore.GAIN_RANGE[1])
    p.add_argument("--angle-max", type=float, default=imagecore.ANGLE_RANGE[1], help="max |rotation| in degrees")
    p.add_argument("--noise-min", type=float, default=imagecore.NOISE_SIGMA_RANGE[0])
    p.add_argument("--noise-max", type=float, default=imagecore.NOISE_SIGMA_RANGE[1])

    p = sub.add_parser("featurize", help="fused GLCM + spectral features per frame")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--out", help="feature CSV")
    _image_flags(p)

    p = sub.add_parser("train", help="fit one model (one wavelength in image mode)")
    _common(p)
    p.add_argument("--mode", choices=("image", "voltage"), default="image")
    p.add_argument("--model", help="M1..M4 (image) or LR, MLR, RFR (voltage)")
    p.add_argument("--manifest", help="image manifest (image mode)")
    p.add_argument("--voltages", help="voltage CSV (voltage mode)")
    p.add_argument("--features", help="cached feature CSV for M1-M3")
    p.add_argument("--wavelength", type=float, help="nm; required in image mode")
    p.add_argument("--source", choices=("laser", "led"), default="laser")
    p.add_argument("--out", help="model file")
    p.add_argument("--log", help="per-epoch CSV log (networks only)")
    p.add_argument("--train-ratio", type=float, default=0.7)
    _image_flags(p)
    p.add_argument("--epochs", type=int, default=nn.TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=nn.TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=nn.TrainConfig.lr)
    p.add_argument("--voltage-features", choices=("ratio", "triple"), help="default: ratio for LR, triple otherwise")
    p.add_argument("--n-estimators", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=15)
    p.add_argument("--workers", type=int, default=1, help="forest worker threads")

    p = sub.add_parser("predict", help="predict the held-out (or all) samples")
    _common(p)
    p.add_argument("--model", help="model file")
    p.add_argument("--manifest")
    p.add_argument("--voltages")
    p.add_argument("--features")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--out", help="prediction CSV")

    p = sub.add_parser("evaluate", help="metrics CSV from prediction CSVs")
    _common(p)
    p.add_argument("--predictions", nargs="+")
    p.add_argument("--out", help="metrics CSV")

    p = sub.add_parser("ceg", help="Clarke Error Grid SVG and zone percentages")
    _common(p)
    p.add_argument("--predictions", nargs="+")
    p.add_argument("--out", help="SVG path (one group) or directory (several groups)")

    p = sub.add_parser("report", help="aggregate metrics, adding 850 nm averages")
    _common(p)
    p.add_argument("--metrics", nargs="+")
    p.add_argument("--out", help="optional aggregated CSV")
    return parser


# ---------------------------------------------------------------- config


def _read_config(path) -> dict:
    out = {}
    text = Path(path).read_text()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_VALIDATION, f"{path}:{n}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(action, raw: str):
    if action.nargs == 0:  # store_true
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    value = action.type(raw) if action.type else raw
    if action.choices and value not in action.choices:
        raise ValueError(f"{raw!r} not in {list(action.choices)}")
    return value


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise CliError(EXIT_USAGE, "a subcommand is required")
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            cfg = _read_config(args.config)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc.strerror}") from exc
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in cfg.items():
            if key not in actions or key in ("config", "help"):
                raise CliError(EXIT_VALIDATION, f"{args.config}: unknown key {key!r} for {args.command}")
            try:
                defaults[key] = _coerce(actions[key], raw)
            except ValueError as exc:
                raise CliError(EXIT_VALIDATION, f"{args.config}: {key}: {exc}") from exc
        # config values become defaults, so explicit flags still win
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                args.seed = int(env)
            except ValueError as exc:
                raise CliError(EXIT_VALIDATION, f"{SEED_ENV}={env!r} is not an integer") from exc
        else:
            args.seed = DEFAULT_SEED
    if args.seed < 0:
        raise CliError(EXIT_VALIDATION, f"seed must be nonnegative, got {args.seed}")
    return args


def _need(args, *names):
    for name in names:
        if getattr(args, name) in (None, []):
            raise CliError(EXIT_USAGE, f"{args.command}: --{name.replace('_', '-')} is required")


# -------------------------------------------------------------- commands


def cmd_gen_images(args):
    _need(args, "out")
    tags = [t.strip() for t in args.sources.split(",") if t.strip()]
    unknown = [t for t in tags if t not in phantom.SOURCES]
    if unknown or not tags:
        raise CliError(EXIT_VALIDATION, f"unknown source(s) {unknown}; choose from {list(phantom.SOURCES)}")
    overrides = {
        k: getattr(args, k)
        for k in ("path_length_cm", "scatter_coeff", "glucose_scatter_slope", "beam_sigma_px",
                  "speckle_contrast", "sensor_noise_sigma", "intensity")
    }
    sources = {t: phantom.with_overrides(phantom.SOURCES[t], **overrides) for t in tags}
    rows = phantom.gen_dataset(
        args.out, sources, args.conc_min, args.conc_max, args.step, args.per_level, args.seed, args.size
    )
    print(f"wrote {len(rows)} frames to {Path(args.out) / 'manifest.csv'}")


def cmd_gen_voltages(args):
    _need(args, "out")
    pd = phantom.PhotodiodeConfig(
        dark_level=args.dark_level,
        ambient_offset=args.ambient_offset,
        gain=args.gain,
        relative_noise=args.relative_noise,
    )
    samples = phantom.gen_voltage_set(pd, args.n, args.conc_min, args.conc_max, args.seed)
    pipeline.write_voltages(samples, args.out)
    print(f"wrote {len(samples)} voltage samples to {args.out}")


def cmd_augment(args):
    _need(args, "manifest", "out")
    rows = dataio.read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = pipeline.augment_dataset(
        rows, base, args.out, args.multiplier, args.seed,
        (args.gain_min, args.gain_max), (-args.angle_max, args.angle_max), (args.noise_min, args.noise_max),
    )
    out = pipeline.assign_splits(out, args.train_ratio, args.seed)
    dataio.write_manifest(out, Path(args.out) / "manifest.csv")
    n_aug = sum(not r.is_raw for r in out)
    n_train = sum(r.split == "train" for r in out)
    print(f"wrote {len(out)} rows ({n_aug} augmented, {n_train} train) to {Path(args.out) / 'manifest.csv'}")


def cmd_featurize(args):
    _need(args, "manifest", "out")
    rows = dataio.read_manifest(args.manifest)
    mat = pipeline.featurize_rows(
        rows, Path(args.manifest).parent, args.size, args.levels, args.glcm_on_spectrum,
        args.normalize, args.low_cutoff, args.high_cutoff,
    )
    dataio.write_features(rows, mat, features.FEATURE_NAMES, args.out)
    print(f"wrote {len(rows)} feature rows to {args.out}")


def _training_config(args):
    return nn.TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)


def _voltage_split(n, ratio, seed):
    return evaluation.split_train_test(list(range(n)), ratio, seed)


def cmd_train(args):
    _need(args, "model", "out")
    if args.mode == "voltage":
        _need(args, "voltages")
        if args.model not in pipeline.VOLTAGE_MODELS:
            raise CliError(EXIT_VALIDATION, f"voltage mode supports {pipeline.VOLTAGE_MODELS}, got {args.model!r}")
        _, X, y = pipeline.read_voltages(args.voltages)
        train, _ = _voltage_split(len(y), args.train_ratio, args.seed)
        forest_kw = {}
        if args.model == "RFR":
            forest_kw = dict(n_estimators=args.n_estimators, max_depth=args.max_depth, seed=args.seed,
                             workers=args.workers)
        model = pipeline.fit_voltage_model(args.model, X[train], y[train], args.voltage_features, **forest_kw)
    else:
        _need(args, "manifest", "wavelength")
        if args.model not in nn.MODEL_IDS:
            raise CliError(EXIT_VALIDATION, f"image mode supports {nn.MODEL_IDS}, got {args.model!r}")
        rows = pipeline.assign_splits(dataio.read_manifest(args.manifest), args.train_ratio, args.seed)
        source = pipeline.source_tag(args.wavelength, args.source)
        cache = pipeline.feature_lookup(args.features)[1] if args.features and args.model != "M4" else None
        epoch_rows = []
        model = pipeline.train_image_model(
            rows, Path(args.manifest).parent, args.model, source, args.size, args.levels,
            args.glcm_on_spectrum, args.normalize, _training_config(args), cache, epoch_rows.append,
        )
        if args.log:
            dataio.write_table(
                args.log, ["epoch", "mse", "mae", "mape"],
                [[e["epoch"], pipeline.fmt(e["mse"]), pipeline.fmt(e["mae"]), pipeline.fmt(e["mape"])] for e in epoch_rows],
            )
    model.meta.update({"seed": args.seed, "train_ratio": args.train_ratio})
    dataio.model_save(model, args.out)
    print(f"saved {model.meta['model']} ({model.meta['wavelength']}) to {args.out}")


def cmd_predict(args):
    _need(args, "model", "out")
    model = dataio.model_load(args.model)
    meta = model.meta
    if meta.get("mode") == "voltage":
        _need(args, "voltages")
        ids, X, y = pipeline.read_voltages(args.voltages)
        train, test = _voltage_split(len(y), meta["train_ratio"], meta["seed"])
        pick = {"train": train, "test": test, "all": list(range(len(y)))}[args.split]
        F = pipeline.voltage_features(X[pick], meta["feature_set"])
        preds = model.predict(F)
        recs = pipeline.prediction_records(meta, [ids[i] for i in pick], y[pick], preds)
    else:
        _need(args, "manifest")
        rows = pipeline.assign_splits(dataio.read_manifest(args.manifest), meta["train_ratio"], meta["seed"])
        rows = pipeline.select_rows(rows, meta["wavelength"], args.split)
        if not rows:
            raise CliError(EXIT_VALIDATION, f"no {args.split} frames for {meta['wavelength']} in {args.manifest}")
        cache = pipeline.feature_lookup(args.features)[1] if args.features and meta["model"] != "M4" else None
        preds = pipeline.predict_image_rows(model, rows, Path(args.manifest).parent, cache)
        recs = pipeline.prediction_records(meta, [r.path for r in rows], [r.concentration_mgdl for r in rows], preds)
    dataio.write_table(args.out, pipeline.PRED_COLUMNS, recs)
    print(f"wrote {len(recs)} predictions to {args.out}")


def _read_predictions(paths):
    recs = []
    for p in paths:
        recs.extend(dataio.read_table(p, pipeline.PRED_COLUMNS))
    if not recs:
        raise CliError(EXIT_VALIDATION, "prediction files contain no rows")
    return recs


def cmd_evaluate(args):
    _need(args, "predictions", "out")
    rows = pipeline.metrics_rows(_read_predictions(args.predictions))
    pipeline.write_metrics(rows, args.out)
    print(pipeline.format_report(rows))


def cmd_ceg(args):
    _need(args, "predictions", "out")
    recs = _read_predictions(args.predictions)
    groups = {}
    for r in recs:
        groups.setdefault((r["mode"], r["model"], r["wavelength"]), []).append(r)
    out = Path(args.out)
    for key, grp in groups.items():
        refs = np.array([float(r["reference_mgdl"]) for r in grp])
        preds = np.clip([float(r["predicted_mgdl"]) for r in grp], 0.0, evaluation.CEG_MAX)
        label = f"{key[1]} {key[2]}"
        if len(groups) == 1 and out.suffix == ".svg":
            path = out
            path.parent.mkdir(parents=True, exist_ok=True)
        else:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"ceg_{key[0]}_{key[1]}_{key[2]}.svg"
        path.write_text(evaluation.render_ceg_svg(refs, preds, title=f"Clarke Error Grid: {label}"))
        print(evaluation.ceg_report(refs, preds).summary(label))


def cmd_report(args):
    _need(args, "metrics")
    rows = []
    for p in args.metrics:
        rows.extend(dataio.read_table(p, pipeline.METRIC_COLUMNS))
    rows = pipeline.report_rows(rows)
    if args.out:
        pipeline.write_metrics(rows, args.out)
    print(pipeline.format_report(rows))


COMMANDS = {
    "gen-images": cmd_gen_images,
    "gen-voltages": cmd_gen_voltages,
    "augment": cmd_augment,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ceg": cmd_ceg,
    "report": cmd_report,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc.code, exc)
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        return _fail(EXIT_IO, f"I/O error{where}: {exc.strerror or exc}")
    except (ValueError, KeyError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
