"""Labeled sensing-window pairs for the overloaded grant-free uplink.

Window ``t`` carries ``k_pre`` streams; window ``t+1`` carries the same
streams over the same (static) channel plus ``d`` newly activated ones. Both
windows cover ``n_ofdm`` OFDM symbols by ``n_subc`` subcarriers, laid out
subcarrier-major within each symbol.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import (
    ChannelModelSpec,
    ChannelRealization,
    TapProfile,
    complex_gaussian,
    draw_flat_rayleigh,
    draw_tdl_a,
    load_tap_profile,
)

GAUSSIAN = "gaussian"
QPSK = "qpsk"
CONSTELLATIONS = (GAUSSIAN, QPSK)


@dataclass(frozen=True)
class ScenarioConfig:
    n_rx: int = 4
    k_pre: int = 4
    k_gf_max: int = 3
    snr_db: float = 20.0
    n_ofdm: int = 140
    n_subc: int = 7
    channel: ChannelModelSpec = field(default_factory=ChannelModelSpec)
    constellation: str = GAUSSIAN
    # extra noise variance in window t+1 relative to window t
    noise_delta: float = 0.0

    def __post_init__(self):
        if self.n_rx < 1:
            raise ValueError("n_rx must be >= 1")
        if self.k_pre < 0 or self.k_gf_max < 0:
            raise ValueError("stream counts must be nonnegative")
        if self.n_ofdm < 1 or self.n_subc < 1:
            raise ValueError("window must contain at least one sample")
        if self.constellation not in CONSTELLATIONS:
            raise ValueError(f"unknown constellation {self.constellation!r}")
        if self.n_subc > self.channel.fft_size:
            raise ValueError("window is wider than the FFT grid")
        if self.noise_var + self.noise_delta < 0:
            raise ValueError("noise_delta makes the window t+1 noise variance negative")

    @property
    def window_len(self) -> int:
        return self.n_ofdm * self.n_subc

    @property
    def noise_var(self) -> float:
        """Per-antenna noise variance for unit-power channels and symbols."""
        return 10.0 ** (-self.snr_db / 10.0)

    @property
    def overloaded(self) -> bool:
        return self.k_pre >= self.n_rx

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        if "channel" in doc:
            doc["channel"] = ChannelModelSpec(**doc["channel"])
        return cls(**doc)


@dataclass
class PairTruth:
    k_pre: int
    noise_var: float
    noise_var_t1: float
    h_t: ChannelRealization
    h_t1: ChannelRealization


@dataclass
class SensingWindowPair:
    y_t: np.ndarray
    y_t1: np.ndarray
    label_d: int
    truth: PairTruth


def draw_symbols(k: int, l: int, constellation: str, rng: np.random.Generator) -> np.ndarray:
    """``k x l`` i.i.d. zero-mean unit-power symbols."""
    if constellation == GAUSSIAN:
        return complex_gaussian(rng, (k, l))
    if constellation == QPSK:
        bits = rng.integers(0, 2, size=(k, l, 2))
        return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / math.sqrt(2)
    raise ValueError(f"unknown constellation {constellation!r}")


def _draw_channels(cfg: ScenarioConfig, n_streams: int, rng, profile) -> ChannelRealization:
    if cfg.channel.is_flat:
        return draw_flat_rayleigh(cfg.n_rx, n_streams, rng)
    first = rng.integers(0, cfg.channel.fft_size - cfg.n_subc + 1)
    subcarriers = np.arange(first, first + cfg.n_subc)
    return draw_tdl_a(cfg.channel, profile, cfg.n_rx, n_streams, subcarriers, rng)


def _observe(cfg: ScenarioConfig, h_grid: np.ndarray, noise_var: float, rng) -> np.ndarray:
    """Y for one window given per-subcarrier channels ``(n_subc, n_rx, K)``."""
    k = h_grid.shape[-1]
    l = cfg.window_len
    noise = complex_gaussian(rng, (cfg.n_rx, l), noise_var)
    if k == 0:
        return noise
    x = draw_symbols(k, l, cfg.constellation, rng)
    if h_grid.shape[0] == 1:
        return h_grid[0] @ x + noise
    # column o * n_subc + s holds OFDM symbol o on subcarrier s
    x = x.reshape(k, cfg.n_ofdm, cfg.n_subc)
    y = np.einsum("smk,kos->mos", h_grid, x).reshape(cfg.n_rx, l)
    return y + noise


def generate_pair(
    cfg: ScenarioConfig,
    d: int,
    rng: np.random.Generator,
    profile: TapProfile | None = None,
) -> SensingWindowPair:
    """Draw one window pair with ``d`` streams activated in window ``t+1``."""
    if not 0 <= d <= cfg.k_gf_max:
        raise ValueError(f"d={d} outside [0, {cfg.k_gf_max}]")
    if not cfg.channel.is_flat and profile is None:
        profile = load_tap_profile()
    h_all = _draw_channels(cfg, cfg.k_pre + d, rng, profile)
    h_t = ChannelRealization(h_all.coeffs[..., : cfg.k_pre], h_all.subcarriers)
    grid_rows = 1 if h_all.is_flat else cfg.n_subc
    noise_t = cfg.noise_var
    noise_t1 = cfg.noise_var + cfg.noise_delta
    y_t = _observe(cfg, h_t.on_grid(grid_rows), noise_t, rng)
    y_t1 = _observe(cfg, h_all.on_grid(grid_rows), noise_t1, rng)
    return SensingWindowPair(y_t, y_t1, d, PairTruth(cfg.k_pre, noise_t, noise_t1, h_t, h_all))


def pair_rng(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the task identified by ``key`` under ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(key)))


def draw_label(cfg: ScenarioConfig, d_distribution, rng: np.random.Generator) -> int:
    if d_distribution == "uniform":
        return int(rng.integers(0, cfg.k_gf_max + 1))
    d = int(d_distribution)
    if not 0 <= d <= cfg.k_gf_max:
        raise ValueError(f"fixed d={d} outside [0, {cfg.k_gf_max}]")
    return d


def batch_generate(
    cfg: ScenarioConfig,
    n_pairs: int,
    d_distribution="uniform",
    root_seed: int = 0,
    workers: int = 1,
    profile: TapProfile | None = None,
) -> list[SensingWindowPair]:
    """Generate ``n_pairs`` pairs; pair ``i`` depends only on ``(root_seed, i)``.

    ``d_distribution`` is ``"uniform"`` over ``0..k_gf_max`` or a fixed count.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if not cfg.channel.is_flat and profile is None:
        profile = load_tap_profile()

    def one(i: int) -> SensingWindowPair:
        rng = pair_rng(root_seed, i)
        return generate_pair(cfg, draw_label(cfg, d_distribution, rng), rng, profile)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(n_pairs)))
    return [one(i) for i in range(n_pairs)]


DATASET_VERSION = 1


def config_hash(doc: dict) -> str:
    """Short stable digest of a JSON-serializable config."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_pairs(path, pairs: list[SensingWindowPair], cfg: ScenarioConfig) -> str:
    """Write raw window pairs to a compressed ``.npz`` with a versioned header.

    Returns the config hash stored in the header.
    """
    digest = config_hash(cfg.to_dict())
    header = {"dataset_version": DATASET_VERSION, "config_hash": digest, "scenario": cfg.to_dict()}
    np.savez_compressed(
        path,
        header=np.array(json.dumps(header, sort_keys=True)),
        y_t=np.stack([p.y_t for p in pairs]),
        y_t1=np.stack([p.y_t1 for p in pairs]),
        label_d=np.array([p.label_d for p in pairs]),
        k_pre=np.array([p.truth.k_pre for p in pairs]),
        noise_var=np.array([p.truth.noise_var for p in pairs]),
    )
    return digest


def load_pairs(path, expected_hash: str | None = None):
    """Read a file written by :func:`save_pairs`.

    Returns ``(header, y_t, y_t1, labels)``. Raises ``ValueError`` on a version
    or config-hash mismatch.
    """
    with np.load(path) as f:
        header = json.loads(str(f["header"]))
        if header.get("dataset_version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('dataset_version')}")
        if expected_hash is not None and header["config_hash"] != expected_hash:
            raise ValueError(
                f"dataset config hash {header['config_hash']} does not match expected {expected_hash}"
            )
        return header, f["y_t"], f["y_t1"], f["label_d"]
