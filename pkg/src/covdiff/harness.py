"""Experiment orchestration: datasets, training, sweeps and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .channel import freq_correlation, load_tap_profile, pdp_correlation
from .classifier import ClassifierModel, init_model, predict, train
from .config import DL_SCHEMES, ExperimentConfig
from .deviation import DeviationReport, scaling_experiment, write_deviation_csv
from .estimators import (
    ThresholdModel,
    calibrate_threshold,
    mdl_estimate,
    slice_features,
    threshold_estimate,
)
from .scenario import ScenarioConfig, config_hash, draw_label, generate_pair, pair_rng
from .sensing import sense_batch

log = logging.getLogger(__name__)

# first element of every derived seed key, one per data purpose
TRAIN, VAL, TEST, CORR = 1, 2, 3, 8
SWEEP_CODES = {"snr": 1, "kt": 2, "single": 3}
CHUNK = 500


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def scenario_hash(cfg: ScenarioConfig) -> str:
    return config_hash(cfg.to_dict())


def build_features(
    scenarios: list[ScenarioConfig],
    n_pairs: int,
    root_seed: int,
    key: tuple[int, ...],
    d_distribution="uniform",
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature rows for ``n_pairs`` pairs cycling through ``scenarios``.

    Pair ``i`` uses ``scenarios[i % len(scenarios)]`` and a generator derived
    from ``(root_seed, *key, i)``, so results do not depend on chunking or
    thread scheduling.

    Returns:
        ``(features, labels, scenario_index)``.
    """
    profile = None if all(sc.channel.is_flat for sc in scenarios) else load_tap_profile()

    def chunk(start: int):
        stop = min(start + CHUNK, n_pairs)
        y_t, y_t1, labels, which = [], [], [], []
        for i in range(start, stop):
            j = i % len(scenarios)
            sc = scenarios[j]
            rng = pair_rng(root_seed, *key, i)
            pair = generate_pair(sc, draw_label(sc, d_distribution, rng), rng, profile)
            y_t.append(pair.y_t)
            y_t1.append(pair.y_t1)
            labels.append(pair.label_d)
            which.append(j)
        return sense_batch(np.stack(y_t), np.stack(y_t1)), labels, which

    starts = range(0, n_pairs, CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    feats = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts]).astype(int)
    which = np.concatenate([p[2] for p in parts]).astype(int)
    return feats, labels, which


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    sweep: str
    sweep_value: float
    accuracy: float
    n_test: int
    ci_low: float
    ci_high: float


def wilson_interval(correct: int, n: int) -> tuple[float, float]:
    ci = binomtest(int(correct), int(n)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def result_row(scheme: str, sweep: str, value: float, predictions, labels) -> ResultRow:
    labels = np.asarray(labels)
    correct = int(np.sum(np.asarray(predictions) == labels))
    n = len(labels)
    lo, hi = wilson_interval(correct, n)
    return ResultRow(scheme, sweep, float(value), correct / n, n, lo, hi)


@dataclass
class ResultTable:
    rows: list[ResultRow]
    config_hash: str = ""

    COLUMNS = ("scheme", "sweep", "sweep_value", "accuracy", "n_test", "ci_low", "ci_high")

    def accuracy(self, scheme: str, value: float) -> float:
        for r in self.rows:
            if r.scheme == scheme and r.sweep_value == value:
                return r.accuracy
        raise KeyError((scheme, value))

    def schemes(self) -> list[str]:
        return list(dict.fromkeys(r.scheme for r in self.rows))

    def values(self) -> list[float]:
        return list(dict.fromkeys(r.sweep_value for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# artifact=covdiff-{__version__} config_hash={self.config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.scheme, r.sweep, repr(r.sweep_value), repr(r.accuracy), r.n_test,
                        repr(r.ci_low), repr(r.ci_high)])
        return buf.getvalue()

    def to_dat(self) -> str:
        """Gnuplot-style wide table: sweep value then one accuracy column per scheme."""
        schemes = self.schemes()
        lines = [f"# artifact=covdiff-{__version__} config_hash={self.config_hash}",
                 "# sweep_value " + " ".join(schemes)]
        for v in self.values():
            lines.append(" ".join([repr(v)] + [repr(self.accuracy(s, v)) for s in schemes]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "artifact": f"covdiff-{__version__}",
            "config_hash": self.config_hash,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        lines = text.splitlines()
        digest = ""
        if lines and lines[0].startswith("#"):
            for tok in lines[0][1:].split():
                k, _, v = tok.partition("=")
                if k == "config_hash":
                    digest = v
            lines = lines[1:]
        rows = []
        for rec in csv.DictReader(lines):
            rows.append(ResultRow(rec["scheme"], rec["sweep"], float(rec["sweep_value"]),
                                  float(rec["accuracy"]), int(rec["n_test"]),
                                  float(rec["ci_low"]), float(rec["ci_high"])))
        return cls(rows, digest)


@dataclass
class TrainedSchemes:
    """Trained classifiers per DL scheme, plus the dataset they were fit on."""

    models: dict[str, ClassifierModel]
    dataset_hash: str


def train_schemes(
    cfg: ExperimentConfig,
    train_xy: tuple[np.ndarray, np.ndarray],
    val_xy: tuple[np.ndarray, np.ndarray],
    dataset_hash: str,
) -> TrainedSchemes:
    models = {}
    n_rx = cfg.scenario.n_rx
    for scheme in cfg.schemes:
        variant = DL_SCHEMES.get(scheme)
        if variant is None:
            continue
        model = init_model(n_rx, cfg.scenario.k_gf_max, cfg.train.seed, variant)
        model, history = train(
            model,
            (slice_features(train_xy[0], variant, n_rx), train_xy[1]),
            (slice_features(val_xy[0], variant, n_rx), val_xy[1]),
            cfg.train,
        )
        model.dataset_hash = dataset_hash
        best = max((h.get("val_accuracy", 0.0) for h in history), default=0.0)
        log.info("trained %s: best validation accuracy %.4f", scheme, best)
        models[scheme] = model
    return TrainedSchemes(models, dataset_hash)


def evaluate_schemes(
    cfg: ExperimentConfig,
    scenario: ScenarioConfig,
    trained: TrainedSchemes,
    threshold: ThresholdModel | None,
    test_xy: tuple[np.ndarray, np.ndarray],
    sweep: str,
    value: float,
) -> list[ResultRow]:
    x, y = test_xy
    n_rx = scenario.n_rx
    k_max = scenario.k_gf_max
    s_d = slice_features(x, "diff_only", n_rx)
    rows = []
    for scheme in cfg.schemes:
        if scheme in DL_SCHEMES:
            model = trained.models[scheme]
            pred = predict(model, slice_features(x, DL_SCHEMES[scheme], n_rx))
        elif scheme == "thresholding":
            pred = threshold_estimate(s_d, threshold, k_max)
        else:
            pred = mdl_estimate(s_d, scenario.window_len, k_max)
        rows.append(result_row(scheme, sweep, value, pred, y))
    return rows


def _sweep_points(cfg: ExperimentConfig, kind: str) -> list[tuple[float, ScenarioConfig]]:
    base = cfg.scenario
    if kind == "snr":
        return [(float(v), replace(base, snr_db=float(v))) for v in cfg.sweep.snr_grid]
    if kind == "kt":
        return [(float(v), replace(base, k_pre=int(v))) for v in cfg.sweep.kt_grid]
    raise ValueError(f"unknown sweep {kind!r}")


def run_sweep(cfg: ExperimentConfig, kind: str) -> ResultTable:
    """Accuracy of every configured scheme at each point of an SNR or K_t sweep.

    DL models are trained once on data mixed evenly over the sweep points
    unless ``retrain_per_point`` is set. The threshold baseline is calibrated
    per point on that point's share of the validation data.
    """
    points = _sweep_points(cfg, kind)
    code = SWEEP_CODES[kind]
    scenarios = [sc for _, sc in points]
    need_dl = any(s in DL_SCHEMES for s in cfg.schemes)
    need_val = need_dl or "thresholding" in cfg.schemes
    rows = []

    shared = None
    val_shared = None
    if not cfg.retrain_per_point and need_val:
        val_shared = build_features(scenarios, cfg.n_val, cfg.root_seed, (VAL, code), workers=cfg.workers)
        if need_dl:
            tr = build_features(scenarios, cfg.n_train, cfg.root_seed, (TRAIN, code), workers=cfg.workers)
            digest = config_hash({"scenarios": [s.to_dict() for s in scenarios]})
            shared = train_schemes(cfg, tr[:2], val_shared[:2], digest)

    for j, (value, sc) in enumerate(points):
        log.info("%s sweep point %s", kind, value)
        trained = shared
        threshold = None
        if cfg.retrain_per_point and need_val:
            xv, yv, _ = build_features([sc], cfg.n_val, cfg.root_seed, (VAL, code, j), workers=cfg.workers)
            if need_dl:
                xt, yt, _ = build_features([sc], cfg.n_train, cfg.root_seed, (TRAIN, code, j), workers=cfg.workers)
                trained = train_schemes(cfg, (xt, yt), (xv, yv), scenario_hash(sc))
        elif need_val:
            mask = val_shared[2] == j
            xv, yv = val_shared[0][mask], val_shared[1][mask]
        if "thresholding" in cfg.schemes:
            threshold = calibrate_threshold(slice_features(xv, "diff_only", sc.n_rx), yv, sc.k_gf_max)
        test = build_features([sc], cfg.n_test, cfg.root_seed, (TEST, code, j), workers=cfg.workers)
        rows += evaluate_schemes(cfg, sc, trained, threshold, test[:2], kind, value)
    return ResultTable(rows, cfg.hash())


def run_snr_sweep(cfg: ExperimentConfig) -> ResultTable:
    return run_sweep(cfg, "snr")


def run_kt_sweep(cfg: ExperimentConfig) -> ResultTable:
    return run_sweep(cfg, "kt")


@dataclass(frozen=True)
class CorrPoint:
    delta_f: int
    mc_abs: float
    closed_form_abs: float
    mc_real: float


def run_corr_curve(cfg: ExperimentConfig) -> list[CorrPoint]:
    """``|rho_h(df)|`` over ``df = 0..max_delta_f`` by Monte Carlo and in closed form."""
    spec = cfg.channel
    if spec.is_flat:
        spec = replace(spec, kind="tdl_a")
    profile = load_tap_profile()
    cc = cfg.corr_curve
    closed = pdp_correlation(spec, profile, np.arange(cc.max_delta_f + 1))
    out = []
    for df in range(cc.max_delta_f + 1):
        rho = freq_correlation(spec, profile, df, cc.trials, pair_rng(cfg.root_seed, CORR, df))
        out.append(CorrPoint(df, abs(rho), float(abs(closed[df])), rho.real))
    return out


def corr_curve_csv(points: list[CorrPoint], digest: str) -> str:
    buf = io.StringIO()
    buf.write(f"# artifact=covdiff-{__version__} config_hash={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta_f", "rho_abs_mc", "rho_abs_closed_form", "rho_real_mc"])
    for p in points:
        w.writerow([p.delta_f, repr(p.mc_abs), repr(p.closed_form_abs), repr(p.mc_real)])
    return buf.getvalue()


def run_deviation_experiment(cfg: ExperimentConfig, out_dir=None) -> list[DeviationReport]:
    reports = scaling_experiment(
        cfg.channel, cfg.scenario, cfg.deviation.rho_grid, cfg.deviation.trials, root_seed=cfg.root_seed
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_deviation_csv(Path(out_dir) / "deviation_report.csv", reports, cfg.hash())
    return reports


def write_table(table: ResultTable, out_dir, stem: str) -> Path:
    out_dir = Path(out_dir)
    atomic_write_text(out_dir / f"{stem}.csv", table.to_csv())
    atomic_write_text(out_dir / f"{stem}.dat", table.to_dat())
    return out_dir / f"{stem}.csv"


def write_summary(out_dir, cfg: ExperimentConfig) -> dict:
    """Collect whatever result files exist in ``out_dir`` into ``summary.json``."""
    out_dir = Path(out_dir)
    summary = {
        "artifact": f"covdiff-{__version__}",
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "results": {},
    }
    for stem in ("snr_sweep", "kt_sweep", "eval"):
        path = out_dir / f"{stem}.csv"
        if path.exists():
            summary["results"][stem] = ResultTable.from_csv(path.read_text()).to_dict()["rows"]
    for stem in ("corr_curve", "deviation_report"):
        path = out_dir / f"{stem}.csv"
        if path.exists():
            lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
            summary["results"][stem] = list(csv.DictReader(lines))
    atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    return summary


def resolve_seed(cfg_seed: int, cli_seed: int | None) -> int:
    """CLI flag beats the ``COVDIFF_SEED`` environment variable beats the config."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("COVDIFF_SEED")
    if env:
        return int(env)
    return cfg_seed
