"""Spectral features from two consecutive sensing windows.

For each window the sample covariance is formed; their difference cancels
the contribution of streams that were already active. The singular values
of the two covariances and of the difference are concatenated into one
``3 * n_rx`` feature vector ``[s_t, s_t1, s_d]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .matkit import hermitian_eig, scm, singular_values_hermitian
from .scenario import SensingWindowPair


@dataclass(frozen=True)
class FeatureVector:
    s_t: np.ndarray
    s_t1: np.ndarray
    s_d: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.s_t, self.s_t1, self.s_d])

    @classmethod
    def from_array(cls, v) -> "FeatureVector":
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size % 3:
            raise ValueError(f"feature vector length must be a multiple of 3, got {v.shape}")
        n = v.size // 3
        return cls(v[:n], v[n : 2 * n], v[2 * n :])


def covariance_features(r_t: np.ndarray, r_t1: np.ndarray) -> np.ndarray:
    """Feature rows from (stacks of) window covariances, shape ``(..., 3N)``."""
    s_t = hermitian_eig(r_t).eigenvalues
    s_t1 = hermitian_eig(r_t1).eigenvalues
    s_d = singular_values_hermitian(r_t1 - r_t)
    # PSD inputs: clip eigensolver round-off below zero
    return np.concatenate([np.maximum(s_t, 0.0), np.maximum(s_t1, 0.0), s_d], axis=-1)


def sense_batch(y_t: np.ndarray, y_t1: np.ndarray) -> np.ndarray:
    """Features for stacked windows of shape ``(B, N, L)``; returns ``(B, 3N)``."""
    y_t = np.asarray(y_t)
    y_t1 = np.asarray(y_t1)
    if y_t.shape != y_t1.shape:
        raise ValueError(f"window shapes differ: {y_t.shape} vs {y_t1.shape}")
    return covariance_features(scm(y_t), scm(y_t1))


def sense_features(pair: SensingWindowPair) -> FeatureVector:
    """Covariance differencing features for one window pair."""
    if pair.y_t.shape != pair.y_t1.shape:
        raise ValueError(f"window shapes differ: {pair.y_t.shape} vs {pair.y_t1.shape}")
    return FeatureVector.from_array(sense_batch(pair.y_t, pair.y_t1))


def ideal_difference(h_new: np.ndarray, noise_delta: float = 0.0) -> np.ndarray:
    """Population covariance difference when ``h_new`` columns switch on.

    ``sum_k h_k h_k^H + noise_delta * I``; with no new streams pass an
    ``N x 0`` array.
    """
    h_new = np.atleast_2d(np.asarray(h_new, dtype=complex))
    n = h_new.shape[0]
    return h_new @ h_new.conj().T + noise_delta * np.eye(n)


def feature_columns(n_rx: int) -> list[str]:
    return [f"{seg}_{i}" for seg in ("s_t", "s_t1", "s_d") for i in range(n_rx)]


def write_feature_csv(path, features: np.ndarray, labels: np.ndarray, config_hash: str, extra: dict | None = None):
    """Write feature rows plus label; first line is a ``#`` metadata comment."""
    features = np.asarray(features, dtype=float)
    n_rx = features.shape[1] // 3
    meta = {"artifact": f"covdiff-{__version__}", "config_hash": config_hash, **(extra or {})}
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh)
        w.writerow(feature_columns(n_rx) + ["label"])
        for row, lab in zip(features, labels):
            w.writerow([repr(float(x)) for x in row] + [int(lab)])
    tmp.replace(path)


def read_feature_csv(path):
    """Inverse of :func:`write_feature_csv`: ``(features, labels, meta)``."""
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for tok in first[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label" or (len(header) - 1) % 3:
            raise ValueError(f"{path}: unexpected feature header {header}")
        for rec in reader:
            rows.append(rec)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return data[:, :-1], data[:, -1].astype(int), meta
