"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

from .classifier import load_model, save_model
from .config import DL_SCHEMES, SCHEMES, ConfigError, ExperimentConfig, load_config, save_config
from .estimators import ThresholdModel, calibrate_threshold, slice_features
from .harness import (
    SWEEP_CODES,
    TEST,
    TRAIN,
    VAL,
    ResultTable,
    TrainedSchemes,
    atomic_write_text,
    build_features,
    corr_curve_csv,
    evaluate_schemes,
    resolve_seed,
    run_corr_curve,
    run_deviation_experiment,
    run_sweep,
    scenario_hash,
    train_schemes,
    write_summary,
    write_table,
)
from .deviation import report_dict
from .matkit import NumericalError
from .scenario import batch_generate, save_pairs
from .sensing import read_feature_csv, write_feature_csv

log = logging.getLogger("covdiff")

SPLITS = {"train": TRAIN, "val": VAL, "test": TEST}


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON (defaults if omitted)")
    common.add_argument("--seed", type=int, help="root seed; overrides COVDIFF_SEED and the config")
    common.add_argument("--out-dir", type=Path, help="output directory (default results/<config hash>)")
    common.add_argument("--scheme", action="append", help="restrict schemes (repeatable or comma list)")
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="covdiff", description="Covariance-differencing stream sensing experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    gen = sub.add_parser("gen-data", parents=[common], help="build train/val/test feature sets")
    gen.add_argument("--raw-pairs", type=int, default=0, help="also store this many raw window pairs")
    for name, text in [
        ("train", "train classifiers and calibrate the threshold"),
        ("eval", "evaluate trained schemes on the test feature set"),
    ]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data-dir", type=Path, help="feature-set directory (default <out-dir>/data)")
    sub.add_parser("sweep-snr", parents=[common], help="accuracy versus SNR")
    sub.add_parser("sweep-kt", parents=[common], help="accuracy versus number of pre-existing streams")
    sub.add_parser("corr-curve", parents=[common], help="TDL-A frequency correlation curve")
    sub.add_parser("bound", parents=[common], help="covariance deviation versus the analytic bound")
    sub.add_parser("report", parents=[common], help="collect result files into summary.json")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {"root_seed": resolve_seed(cfg.root_seed, args.seed)}
    if args.scheme:
        schemes = [s for item in args.scheme for s in item.split(",") if s]
        bad = sorted(set(schemes) - set(SCHEMES))
        if bad:
            raise UsageError(f"unknown scheme(s) {bad}; choose from {list(SCHEMES)}")
        changes["schemes"] = schemes
    return dataclasses.replace(cfg, **changes)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out_dir or Path("results") / cfg.hash()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, cfg, out):
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    digest = scenario_hash(cfg.scenario)
    sizes = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    for split, purpose in SPLITS.items():
        x, y, _ = build_features([cfg.scenario], sizes[split], cfg.root_seed,
                                 (purpose, SWEEP_CODES["single"]), workers=cfg.workers)
        write_feature_csv(data / f"features_{split}.csv", x, y, digest, {"split": split})
    if args.raw_pairs:
        pairs = batch_generate(cfg.scenario, args.raw_pairs, root_seed=cfg.root_seed)
        save_pairs(data / "pairs.npz", pairs, cfg.scenario)
    atomic_write_text(data / "scenario.json", json.dumps(cfg.scenario.to_dict(), indent=2) + "\n")
    return {"data_dir": str(data), "dataset_hash": digest, "sizes": sizes}


def _read_split(data: Path, split: str):
    path = data / f"features_{split}.csv"
    if not path.exists():
        raise RuntimeFailure(f"missing {path}; run gen-data first")
    x, y, meta = read_feature_csv(path)
    return x, y, meta.get("config_hash", "")


def cmd_train(args, cfg, out):
    data = args.data_dir or out / "data"
    xt, yt, h_train = _read_split(data, "train")
    xv, yv, h_val = _read_split(data, "val")
    if h_train != h_val:
        raise RuntimeFailure(f"dataset hash mismatch: train {h_train} vs val {h_val}")
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    trained = train_schemes(cfg, (xt, yt), (xv, yv), h_train)
    for scheme, model in trained.models.items():
        save_model(model, models_dir / f"{scheme}.json")
    written = sorted(trained.models)
    if "thresholding" in cfg.schemes:
        th = calibrate_threshold(slice_features(xv, "diff_only", cfg.scenario.n_rx), yv, cfg.scenario.k_gf_max)
        th.calibration_meta["dataset_hash"] = h_train
        th.save(models_dir / "threshold.json")
        written.append("thresholding")
    return {"models_dir": str(models_dir), "dataset_hash": h_train, "trained": written}


def cmd_eval(args, cfg, out):
    data = args.data_dir or out / "data"
    x, y, h_test = _read_split(data, "test")
    models_dir = out / "models"
    expect = {"n_rx": cfg.scenario.n_rx, "k_gf_max": cfg.scenario.k_gf_max}
    models = {}
    for scheme in cfg.schemes:
        if scheme not in DL_SCHEMES:
            continue
        path = models_dir / f"{scheme}.json"
        if not path.exists():
            raise RuntimeFailure(f"missing model file {path}; run train first")
        model = load_model(path, expect)
        if model.dataset_hash != h_test:
            raise RuntimeFailure(
                f"dataset hash mismatch: model {scheme} was trained on {model.dataset_hash}, "
                f"test set has {h_test}"
            )
        models[scheme] = model
    threshold = None
    if "thresholding" in cfg.schemes:
        path = models_dir / "threshold.json"
        if not path.exists():
            raise RuntimeFailure(f"missing {path}; run train first")
        threshold = ThresholdModel.load(path)
        if threshold.calibration_meta.get("dataset_hash") != h_test:
            raise RuntimeFailure(
                f"dataset hash mismatch: threshold calibrated on "
                f"{threshold.calibration_meta.get('dataset_hash')}, test set has {h_test}"
            )
    rows = evaluate_schemes(cfg, cfg.scenario, TrainedSchemes(models, h_test), threshold, (x, y),
                            "single", cfg.scenario.snr_db)
    table = ResultTable(rows, cfg.hash())
    write_table(table, out, "eval")
    return table.to_dict()


def cmd_sweep(kind):
    def run(args, cfg, out):
        table = run_sweep(cfg, kind)
        write_table(table, out, f"{kind}_sweep")
        return table.to_dict()

    return run


def cmd_corr_curve(args, cfg, out):
    points = run_corr_curve(cfg)
    text = corr_curve_csv(points, cfg.hash())
    atomic_write_text(out / "corr_curve.csv", text)
    dat = [f"# artifact=covdiff-{__version__} config_hash={cfg.hash()}", "# delta_f rho_abs_mc rho_abs_closed_form"]
    dat += [f"{p.delta_f} {p.mc_abs!r} {p.closed_form_abs!r}" for p in points]
    atomic_write_text(out / "corr_curve.dat", "\n".join(dat) + "\n")
    return {"config_hash": cfg.hash(), "points": [dataclasses.asdict(p) for p in points]}


def cmd_bound(args, cfg, out):
    reports = run_deviation_experiment(cfg, out)
    return {"config_hash": cfg.hash(), "reports": [report_dict(r) for r in reports]}


def cmd_report(args, cfg, out):
    return write_summary(out, cfg)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-snr": cmd_sweep("snr"),
    "sweep-kt": cmd_sweep("kt"),
    "corr-curve": cmd_corr_curve,
    "bound": cmd_bound,
    "report": cmd_report,
}


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ConfigError, OSError) as exc:
        print(f"covdiff: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        out = _out_dir(args, cfg)
        save_config(cfg, out / "config.json")
        result = COMMANDS[args.command](args, cfg, out)
    except (RuntimeFailure, ConfigError, NumericalError, ValueError, OSError) as exc:
        print(f"covdiff: error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(result, indent=2, default=_jsonable))
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
