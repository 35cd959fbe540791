"""Command-line entry point.

Exit codes: 0 success, 1 other failure, 2 bad flags or config, 3 I/O or
malformed file, 4 training divergence, 5 band mismatch. Diagnostics go to
standard error; data only to the files named on the command line.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data, evaluation, neural, pipeline, scenes
from .decompositions import FAMILY_ORDER, save_features
from .errors import (
    BandMismatch,
    DivergenceDetected,
    FormatError,
    IoFailure,
    MissingClassModel,
    PolsarError,
    StageError,
)
from .pipeline import PipelineConfig
from .superpixels import save_segments

log = logging.getLogger("polsarclf")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_BANDS = 0, 1, 2, 3, 4, 5

_CONFIG_FIELDS = [f for f in fields(PipelineConfig)]
_CONFIG_HELP = {
    "window": "multilook boxcar size (odd)",
    "families": "comma-separated decomposition families",
    "ae1_hidden": "comma-separated hidden widths of autoencoder 1 before the code layer",
    "u1": "code size of autoencoder 1",
    "u2": "code size of autoencoder 2",
    "alpha": "autoencoder 1 reconstruction weight",
    "beta": "autoencoder 1 L2 weight",
    "gamma": "autoencoder 1 sparsity weight",
    "rho": "autoencoder 1 target activation",
    "lambda2": "autoencoder 2 reconstruction weight",
    "beta2": "autoencoder 2 L2 weight",
    "alpha2": "autoencoder 2 sparsity weight",
    "rho2": "autoencoder 2 target activation",
    "softmax_l2": "softmax L2 weight",
    "lr": "autoencoder step size",
    "batch_size": "mini-batch size",
    "epochs": "autoencoder epochs",
    "softmax_lr": "softmax step size",
    "softmax_epochs": "softmax epochs",
    "init_scale": "weight init scale (default 1/sqrt(fan_in))",
    "slic_k": "superpixel count (default ceil(H*W/256))",
    "slic_m": "superpixel compactness m",
    "slic_iters": "superpixel iterations",
    "min_segment_frac": "minimum segment size as a fraction of s^2",
    "train_fraction": "per-class training fraction",
    "seed": "random seed",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_pipeline_flags(p):
    g = p.add_argument_group("pipeline hyperparameters")
    for f in _CONFIG_FIELDS:
        flag = "--" + f.name.replace("_", "-")
        if f.name in ("families", "ae1_hidden"):
            g.add_argument(flag, dest=f.name, type=str, default=None, help=_CONFIG_HELP[f.name])
        elif f.name in ("slic_k", "seed") or f.type in ("int", int):
            g.add_argument(flag, dest=f.name, type=int, default=None, help=_CONFIG_HELP[f.name])
        else:
            g.add_argument(flag, dest=f.name, type=float, default=None, help=_CONFIG_HELP[f.name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polsarclf", description="Multiband PolSAR classification with "
                     "stacked sparse autoencoders and superpixels.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def common(p, pipeline_flags=False):
        p.add_argument("--config", default=None, help="JSON file of flat keys mirroring flag names")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
        if pipeline_flags:
            _add_pipeline_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic scene and its label map")
    common(p)
    p.add_argument("--models", default=None, help="class-model JSON file")
    p.add_argument("--layout", default=None, help="label PGM to use as the scene layout")
    p.add_argument("--height", type=int, default=None, help="scene height when no layout is given (64)")
    p.add_argument("--width", type=int, default=None, help="scene width when no layout is given (64)")
    p.add_argument("--looks", type=int, default=None, help="looks per pixel (9)")
    p.add_argument("--seed", type=int, default=None, help="random seed (0)")
    p.add_argument("--out-image", default=None, help="output PLSR1 image")
    p.add_argument("--out-labels", default=None, help="output label PGM")

    p = sub.add_parser("fit", help="train a model")
    common(p, pipeline_flags=True)
    p.add_argument("--image", default=None, help="PLSR1 image")
    p.add_argument("--labels", default=None, help="label PGM")
    p.add_argument("--model", default=None, help="output model file")
    p.add_argument("--history-dir", default=None, help="directory for loss-history CSVs "
                   "(default: next to the model)")
    p.add_argument("--dump-dir", default=None, help="write stage intermediates here")

    p = sub.add_parser("predict", help="classify an image with a trained model")
    common(p)
    p.add_argument("--model", default=None, help="model file")
    p.add_argument("--image", default=None, help="PLSR1 image")
    p.add_argument("--out", default=None, help="output class-id PGM")
    p.add_argument("--map", default=None, help="rendered map (.png or .ppm)")
    p.add_argument("--proba", default=None, help="optional probability raster (PLSR1 features kind)")
    p.add_argument("--boundaries", default=None, help="optional superpixel boundary rendering")

    p = sub.add_parser("eval", help="score a prediction against a truth label map")
    common(p)
    p.add_argument("--pred", default=None, help="predicted class-id PGM")
    p.add_argument("--truth", default=None, help="truth label PGM")
    p.add_argument("--out", default=None, help="score CSV")
    p.add_argument("--confusion", default=None, help="optional confusion-matrix CSV")

    p = sub.add_parser("ablate-bands", help="fit/score every band subset")
    common(p, pipeline_flags=True)
    p.add_argument("--image", default=None, help="PLSR1 image")
    p.add_argument("--labels", default=None, help="label PGM")
    p.add_argument("--subset", action="append", default=None,
                   help="comma-separated bands; repeatable (default: every non-empty subset)")
    p.add_argument("--out", default=None, help="CSV with one row per subset")
    p.add_argument("--table", default=None, help="optional CSV, classes x subsets")

    p = sub.add_parser("ablate-features", help="fit/score each decomposition family")
    common(p, pipeline_flags=True)
    p.add_argument("--image", default=None, help="PLSR1 image")
    p.add_argument("--labels", default=None, help="label PGM")
    p.add_argument("--group", action="append", default=None,
                   help="comma-separated families; repeatable (default: each family alone)")
    p.add_argument("--out", default=None, help="CSV with one row per family group")
    p.add_argument("--table", default=None, help="optional CSV, classes x groups")
    return parser


_REQUIRED = {
    "synth": ("models", "out_image", "out_labels"),
    "fit": ("image", "labels", "model"),
    "predict": ("model", "image", "out"),
    "eval": ("pred", "truth", "out"),
    "ablate-bands": ("image", "labels", "out"),
    "ablate-features": ("image", "labels", "out"),
}


def _load_config_file(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _merge_config(args, parser) -> dict:
    """Explicit flags override config-file values; returns the effective settings."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions} - {"help", "config", "verbose"}
    eff = {d: getattr(args, d) for d in dests}
    if args.config:
        cfg = _load_config_file(args.config)
        unknown = sorted(set(cfg) - dests)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {unknown}")
        for k, v in cfg.items():
            if eff[k] is None:
                eff[k] = v
    missing = [k for k in _REQUIRED[args.command] if not eff.get(k)]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))
    return eff


def _pipeline_config(eff) -> PipelineConfig:
    d = {f.name: eff[f.name] for f in _CONFIG_FIELDS if eff.get(f.name) is not None}
    for key in ("families", "ae1_hidden"):
        if isinstance(d.get(key), str):
            d[key] = _csv_list(d[key])
    if "ae1_hidden" in d:
        d["ae1_hidden"] = [int(v) for v in d["ae1_hidden"]]
    for key in ("window", "u1", "u2", "batch_size", "epochs", "softmax_epochs", "slic_iters", "seed"):
        if key in d:
            if float(d[key]) != int(d[key]):
                raise ValueError(f"{key} must be an integer")
            d[key] = int(d[key])
    try:
        return PipelineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _echo(eff, path, config: PipelineConfig | None = None) -> None:
    out = {k: v for k, v in sorted(eff.items()) if k not in {f.name for f in _CONFIG_FIELDS}}
    out["command"] = eff["command"]
    if config is not None:
        out["pipeline"] = config.to_dict()
    out["polsar_threads"] = data.env_threads()
    target = f"{path}.config.json"
    try:
        Path(target).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {target}: {exc}") from exc


def _check_threads():
    raw = os.environ.get("POLSAR_THREADS")
    if raw is None:
        return
    try:
        ok = int(raw) >= 0
    except ValueError:
        ok = False
    if not ok:
        raise UsageError(f"POLSAR_THREADS must be a non-negative integer, got {raw!r}")


# --------------------------------------------------------------------------
# commands


def cmd_synth(eff) -> int:
    models_path = Path(eff["models"])
    if not models_path.is_file():
        raise UsageError(f"class-model file {models_path} not found")
    try:
        bands, models = scenes.load_class_models(models_path)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad class-model file {models_path}: {exc}") from None
    seed = int(eff["seed"] if eff["seed"] is not None else 0)
    looks = int(eff["looks"] if eff["looks"] is not None else 9)
    if eff["layout"]:
        layout = data.load_labels(eff["layout"])
    else:
        h = int(eff["height"] or 64)
        w = int(eff["width"] or 64)
        layout = scenes.patchwork_layout(h, w, len(models), seed=seed, names=[m.name for m in models])
    if looks < 1:
        raise UsageError("--looks must be >= 1")
    image, layout = data.synth_scene(models, layout, looks=looks, seed=seed, bands=bands)
    data.save_image(image, eff["out_image"])
    data.save_labels(layout, eff["out_labels"])
    _echo(eff, eff["out_image"])
    print(f"synth: {image.height}x{image.width}, bands {','.join(image.bands)}, "
          f"{layout.n_classes} classes, counts {layout.counts().tolist()}, seed {seed}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(eff) -> int:
    config = _pipeline_config(eff)
    image = data.load_image(eff["image"])
    labels = data.load_labels(eff["labels"])
    _echo(eff, eff["model"], config)
    result = pipeline.fit(image, labels, config)
    pipeline.save_model(result.model, eff["model"])
    pipeline.load_model(eff["model"])  # round-trip check
    hist_dir = Path(eff["history_dir"] or Path(eff["model"]).parent)
    hist_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(eff["model"]).name
    for stage, hist in result.histories.items():
        if hist:
            neural.write_history_csv(hist, hist_dir / f"{stem}.{stage}.history.csv")
    if eff["dump_dir"]:
        d = Path(eff["dump_dir"])
        d.mkdir(parents=True, exist_ok=True)
        inter = result.intermediates
        save_features(inter["features"], d / "features.plsr")
        data.save_raster(d / "hidden.plsr", inter["hidden"], "hidden")
        save_segments(inter["superpixels"], d / "segments.plsr")
        data.save_labels(result.train_labels, d / "train_labels.pgm")
        data.save_labels(result.test_labels, d / "test_labels.pgm")
    pred = pipeline.predict(result.model, image)
    tr = result.train_labels.grid > 0
    te = result.test_labels.grid > 0
    print(f"fit: train acc {np.mean(pred.classes[tr] == labels.grid[tr]):.4f}, "
          f"test acc {np.mean(pred.classes[te] == labels.grid[te]):.4f}, dims {result.model.dims}",
          file=sys.stderr)
    return EXIT_OK


def cmd_predict(eff) -> int:
    model = pipeline.load_model(eff["model"])
    image = data.load_image(eff["image"])
    pred = pipeline.predict(model, image)
    data.save_labels(data.LabelMap(pred.classes, model.class_names), eff["out"])
    if eff["map"]:
        evaluation.render_map(pred, eff["map"])
    if eff["proba"]:
        data.save_raster(eff["proba"], pred.probabilities, "features", dtype="f64",
                         class_names=model.class_names)
    if eff["boundaries"]:
        evaluation.render_boundaries(pred.superpixels, image, eff["boundaries"])
    _echo(eff, eff["out"])
    counts = np.bincount(pred.classes.ravel(), minlength=len(model.class_names) + 1)[1:]
    print(f"predict: {image.height}x{image.width}, class counts {counts.tolist()}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(eff) -> int:
    pred = data.load_labels(eff["pred"])
    truth = data.load_labels(eff["truth"])
    s = evaluation.score(pred, truth)
    evaluation.write_score_csv(s, eff["out"])
    if eff["confusion"]:
        evaluation.write_confusion_csv(s, eff["confusion"])
    _echo(eff, eff["out"])
    print(f"eval: OA {s.oa:.4f}, macro precision {s.oa_precision:.4f}, n {s.confusion.total}",
          file=sys.stderr)
    return EXIT_OK


def _ablation_out(result, eff) -> None:
    evaluation.write_ablation_csv(result, eff["out"])
    if eff["table"]:
        evaluation.write_ablation_table(result, eff["table"])
    for name, s in zip(result.names, result.scores):
        print(f"{result.kind} {name}: OA {s.oa:.4f}, macro precision {s.oa_precision:.4f}", file=sys.stderr)


def cmd_ablate_bands(eff) -> int:
    config = _pipeline_config(eff)
    image = data.load_image(eff["image"])
    labels = data.load_labels(eff["labels"])
    subsets = eff["subset"]
    if isinstance(subsets, str):
        subsets = [subsets]
    spec = None
    if subsets:
        try:
            spec = evaluation.AblationSpec(band_subsets=tuple(tuple(_csv_list(s)) for s in subsets))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        unknown = sorted({b for sub in spec.band_subsets for b in sub} - set(image.bands))
        if unknown:
            raise UsageError(f"bands {unknown} not in image ({','.join(image.bands)})")
    _echo(eff, eff["out"], config)
    _ablation_out(evaluation.run_band_ablation(image, labels, spec, config), eff)
    return EXIT_OK


def cmd_ablate_features(eff) -> int:
    config = _pipeline_config(eff)
    groups = eff["group"]
    if isinstance(groups, str):
        groups = [groups]
    spec = None
    if groups:
        try:
            spec = evaluation.AblationSpec(families=tuple(tuple(_csv_list(g)) for g in groups))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        unknown = sorted({f for g in spec.families for f in g} - set(FAMILY_ORDER))
        if unknown:
            raise UsageError(f"unknown families {unknown}; choose from {list(FAMILY_ORDER)}")
    image = data.load_image(eff["image"])
    labels = data.load_labels(eff["labels"])
    _echo(eff, eff["out"], config)
    _ablation_out(evaluation.run_feature_ablation(image, labels, spec, config), eff)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate-bands": cmd_ablate_bands,
    "ablate-features": cmd_ablate_features,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, DivergenceDetected):
        return EXIT_DIVERGED
    if isinstance(exc, BandMismatch):
        return EXIT_BANDS
    if isinstance(exc, MissingClassModel):
        return EXIT_USAGE
    if isinstance(exc, (IoFailure, FormatError, OSError)):
        return EXIT_IO
    return EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        _check_threads()
        eff = _merge_config(args, parser)
        eff["command"] = args.command
        return COMMANDS[args.command](eff)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, PolsarError, OSError, ValueError) as exc:
        print(f"polsarclf: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
