"""Non-learned baselines and feature slicing for the ablation classifiers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

LOG_FLOOR = 1e-12
THRESHOLD_GRID_POINTS = 200


def mdl_scores(spectrum, l: int) -> np.ndarray:
    """Wax-Kailath MDL objective for ``k = 0..N-1`` hypothesized sources.

    ``spectrum`` has shape ``(..., N)`` sorted descending. Entries are floored
    at ``LOG_FLOOR`` before taking logs.
    """
    lam = np.maximum(np.asarray(spectrum, dtype=float), LOG_FLOOR)
    n = lam.shape[-1]
    if l < n:
        raise ValueError(f"sample count {l} must be at least the spectrum length {n}")
    scores = np.empty(lam.shape[:-1] + (n,))
    for k in range(n):
        tail = lam[..., k:]
        log_geo = np.mean(np.log(tail), axis=-1)
        log_arith = np.log(np.mean(tail, axis=-1))
        scores[..., k] = -l * (n - k) * (log_geo - log_arith) + 0.5 * k * (2 * n - k) * np.log(l)
    return scores


def mdl_estimate(spectrum, l: int, k_max: int | None = None):
    """Number of sources minimizing MDL; all-zero spectra give 0.

    With ``k_max`` the estimate is clamped to ``[0, k_max]``.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    est = np.argmin(mdl_scores(spectrum, l), axis=-1)
    est = np.where(np.all(spectrum <= 0, axis=-1), 0, est)
    if k_max is not None:
        est = np.minimum(est, k_max)
    return int(est) if est.ndim == 0 else est


@dataclass
class ThresholdModel:
    tau: float
    calibration_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def to_dict(self) -> dict:
        return {"artifact": f"covdiff-{__version__}", "tau": self.tau, "calibration_meta": self.calibration_meta}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ThresholdModel":
        doc = json.loads(Path(path).read_text())
        return cls(doc["tau"], doc.get("calibration_meta", {}))


def threshold_estimate(s_d, model: ThresholdModel | float, k_max: int | None = None):
    """Count of difference singular values strictly above ``tau``, clamped to ``k_max``."""
    tau = model.tau if isinstance(model, ThresholdModel) else float(model)
    count = np.sum(np.asarray(s_d, dtype=float) > tau, axis=-1)
    if k_max is not None:
        count = np.minimum(count, k_max)
    return int(count) if np.ndim(count) == 0 else count


def calibrate_threshold(s_d, labels, k_max: int | None = None) -> ThresholdModel:
    """Pick ``tau`` on a log grid maximizing exact-match accuracy (smallest on ties).

    The grid spans ``[1e-3 max, max]`` of all validation ``s_d`` entries.
    """
    s_d = np.atleast_2d(np.asarray(s_d, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if s_d.shape[0] == 0:
        raise ValueError("validation set is empty")
    top = float(s_d.max())
    if top <= 0:
        return ThresholdModel(LOG_FLOOR, {"grid": [LOG_FLOOR], "accuracy": float(np.mean(labels == 0))})
    grid = np.logspace(np.log10(1e-3 * top), np.log10(top), THRESHOLD_GRID_POINTS)
    # counts for every grid point at once: (points, samples)
    counts = np.sum(s_d[None, :, :] > grid[:, None, None], axis=-1)
    if k_max is not None:
        counts = np.minimum(counts, k_max)
    acc = np.mean(counts == labels[None, :], axis=1)
    best = int(np.argmax(acc))
    meta = {
        "grid_min": float(grid[0]),
        "grid_max": float(grid[-1]),
        "grid_points": THRESHOLD_GRID_POINTS,
        "accuracy": float(acc[best]),
    }
    return ThresholdModel(float(grid[best]), meta)


def slice_features(v, variant: str, n_rx: int | None = None) -> np.ndarray:
    """Select the inputs an ablation sees from full ``[s_t; s_t1; s_d]`` rows."""
    v = np.asarray(v, dtype=float)
    n = n_rx if n_rx is not None else v.shape[-1] // 3
    if variant == "full":
        return v
    if variant == "raw_only":
        return v[..., : 2 * n]
    if variant == "diff_only":
        return v[..., 2 * n : 3 * n]
    raise ValueError(f"unknown variant {variant!r}")
