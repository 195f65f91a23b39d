"""Per-stream channel generation: i.i.d. flat Rayleigh and TDL-A.

A realization holds one ``n_rx x n_streams`` coefficient matrix per
subcarrier. Fading is static for the duration of a frame, so time-domain
samples on the same subcarrier share a coefficient.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

FLAT_RAYLEIGH = "flat_rayleigh"
TDL_A = "tdl_a"
CHANNEL_KINDS = (FLAT_RAYLEIGH, TDL_A)

TAP_PROFILE_SCHEMA = {
    "type": "object",
    "required": ["name", "delays", "powers_db"],
    "properties": {
        "name": {"type": "string"},
        "source": {"type": "string"},
        "version": {"type": "integer"},
        "delays": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "powers_db": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class ChannelModelSpec:
    kind: str = FLAT_RAYLEIGH
    carrier_frequency: float = 3.5e9
    subcarrier_spacing: float = 30e3
    fft_size: int = 2048
    delay_spread: float = 100e-9

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {CHANNEL_KINDS}")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier_spacing must be positive")
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.kind == TDL_A and self.delay_spread <= 0:
            raise ValueError("delay_spread must be positive for TDL-A")

    @property
    def is_flat(self) -> bool:
        return self.kind == FLAT_RAYLEIGH

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TapProfile:
    """Power-delay profile with delays in units of the delay spread.

    Taps are stored sorted by delay; ``powers`` are linear and sum to one.
    """

    name: str
    normalized_delays: np.ndarray
    powers_db: np.ndarray
    powers: np.ndarray = field(repr=False)

    @property
    def tap_count(self) -> int:
        return len(self.normalized_delays)

    def delays(self, spec: ChannelModelSpec) -> np.ndarray:
        return self.normalized_delays * spec.delay_spread


def tap_profile_from_dict(doc: dict) -> TapProfile:
    jsonschema.validate(doc, TAP_PROFILE_SCHEMA)
    delays = np.asarray(doc["delays"], dtype=float)
    powers_db = np.asarray(doc["powers_db"], dtype=float)
    if delays.shape != powers_db.shape:
        raise ValueError("delays and powers_db must have the same length")
    if not np.all(np.isfinite(powers_db)):
        raise ValueError("tap powers must be finite")
    order = np.argsort(delays, kind="stable")
    delays, powers_db = delays[order], powers_db[order]
    lin = 10.0 ** (powers_db / 10.0)
    return TapProfile(doc["name"], delays, powers_db, lin / lin.sum())


def load_tap_profile(path: str | Path | None = None) -> TapProfile:
    """Load a tap table; the bundled TDL-A table when ``path`` is None."""
    if path is None:
        text = resources.files("covdiff.data").joinpath("tdl_a.json").read_text()
    else:
        text = Path(path).read_text()
    return tap_profile_from_dict(json.loads(text))


@dataclass
class ChannelRealization:
    """Channel coefficients indexed by subcarrier.

    ``coeffs[i]`` is the ``n_rx x n_streams`` matrix on subcarrier
    ``subcarriers[i]``. A flat realization stores a single matrix that applies
    to every subcarrier.
    """

    coeffs: np.ndarray
    subcarriers: np.ndarray | None = None

    @property
    def is_flat(self) -> bool:
        return self.subcarriers is None

    def at(self, subcarrier: int) -> np.ndarray:
        if self.is_flat:
            return self.coeffs[0]
        hit = np.flatnonzero(self.subcarriers == subcarrier)
        if hit.size == 0:
            raise KeyError(f"subcarrier {subcarrier} not in realization")
        return self.coeffs[hit[0]]

    def on_grid(self, n_subc: int) -> np.ndarray:
        """Coefficients as an ``(n_subc, n_rx, n_streams)`` array."""
        if self.is_flat:
            return np.broadcast_to(self.coeffs[0], (n_subc, *self.coeffs.shape[1:]))
        if len(self.coeffs) != n_subc:
            raise ValueError(f"realization has {len(self.coeffs)} subcarriers, need {n_subc}")
        return self.coeffs


def complex_gaussian(rng: np.random.Generator, shape: tuple, var: float | np.ndarray = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    std = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    z = rng.standard_normal((*np.atleast_1d(shape), 2))
    return std * (z[..., 0] + 1j * z[..., 1])


def draw_flat_rayleigh(n_rx: int, n_streams: int, rng: np.random.Generator) -> ChannelRealization:
    if n_rx < 1 or n_streams < 0:
        raise ValueError("n_rx must be >= 1 and n_streams >= 0")
    return ChannelRealization(complex_gaussian(rng, (1, n_rx, n_streams)))


def tdl_frequency_response(
    gains: np.ndarray, delays: np.ndarray, freqs: np.ndarray
) -> np.ndarray:
    """``H(f) = sum_p a_p exp(-j 2 pi f tau_p)``.

    Args:
        gains: Tap gains, shape ``(..., P)``.
        delays: Tap delays in seconds, shape ``(P,)``.
        freqs: Frequencies in Hz, shape ``(F,)``.

    Returns:
        Array of shape ``(F, ...)``.
    """
    steer = np.exp(-2j * np.pi * np.outer(freqs, delays))  # (F, P)
    return np.moveaxis(gains @ steer.T, -1, 0)


def draw_tdl_a(
    spec: ChannelModelSpec,
    profile: TapProfile,
    n_rx: int,
    n_streams: int,
    subcarriers,
    rng: np.random.Generator,
) -> ChannelRealization:
    subcarriers = np.asarray(subcarriers, dtype=int).ravel()
    if subcarriers.size == 0:
        raise ValueError("subcarrier list is empty")
    if subcarriers.min() < 0 or subcarriers.max() >= spec.fft_size:
        raise ValueError(f"subcarrier indices must lie in [0, {spec.fft_size})")
    gains = complex_gaussian(rng, (n_rx, n_streams, profile.tap_count), profile.powers)
    freqs = subcarriers * spec.subcarrier_spacing
    coeffs = tdl_frequency_response(gains, profile.delays(spec), freqs)
    return ChannelRealization(coeffs, subcarriers.copy())


def pdp_correlation(spec: ChannelModelSpec, profile: TapProfile, delta_f) -> np.ndarray:
    """Closed-form frequency correlation ``E[h_l h*_{l+df}]`` for a tap profile.

    Equals ``sum_p P_p exp(+j 2 pi df scs tau_p)``; the flat model gives 1.
    """
    delta_f = np.asarray(delta_f, dtype=float)
    if spec.is_flat:
        return np.ones(delta_f.shape, dtype=complex)
    phase = 2j * np.pi * np.multiply.outer(delta_f * spec.subcarrier_spacing, profile.delays(spec))
    return np.exp(phase) @ profile.powers


def freq_correlation(
    spec: ChannelModelSpec,
    profile: TapProfile | None,
    delta_f: int,
    trials: int,
    rng: np.random.Generator,
    n_rx: int = 4,
    n_streams: int = 1,
) -> complex:
    """Monte-Carlo estimate of the subcarrier-averaged correlation ``rho_h(df)``.

    Each trial draws an independent channel with a uniformly random base
    subcarrier ``l`` and pools every (antenna, stream) entry, since entries are
    identically distributed.
    """
    if trials < 1000:
        raise ValueError("freq_correlation needs at least 1000 trials")
    if delta_f == 0 or spec.is_flat:
        return 1.0 + 0.0j
    if not 0 < delta_f < spec.fft_size:
        raise ValueError(f"delta_f must lie in [0, {spec.fft_size})")
    base = rng.integers(0, spec.fft_size - delta_f, size=trials)
    gains = complex_gaussian(rng, (trials, n_rx * n_streams, profile.tap_count), profile.powers)
    tau = profile.delays(spec)
    scs = spec.subcarrier_spacing
    s0 = np.exp(-2j * np.pi * np.outer(base * scs, tau))
    s1 = np.exp(-2j * np.pi * np.outer((base + delta_f) * scs, tau))
    h0 = np.einsum("tep,tp->te", gains, s0)
    h1 = np.einsum("tep,tp->te", gains, s1)
    num = np.mean(h0 * np.conj(h1))
    den = np.sqrt(np.mean(np.abs(h0) ** 2) * np.mean(np.abs(h1) ** 2))
    return complex(num / den)


def max_coherent_span(
    spec: ChannelModelSpec,
    profile: TapProfile | None,
    rho_th: float,
    part: str = "abs",
) -> int:
    """Largest subcarrier offset whose correlation stays at or above ``rho_th``.

    ``part="abs"`` tests ``|rho_h|``; ``part="real"`` tests ``Re{rho_h}``, the
    pairwise coherence condition used for the deviation bound. The window
    spans ``span + 1`` subcarriers. A flat channel spans the whole grid.
    """
    if not 0.0 < rho_th < 1.0:
        raise ValueError(f"rho_th must lie in (0, 1), got {rho_th}")
    if part not in ("abs", "real"):
        raise ValueError(f"part must be 'abs' or 'real', got {part!r}")
    if spec.is_flat:
        return spec.fft_size - 1
    rho = pdp_correlation(spec, profile, np.arange(spec.fft_size))
    vals = np.abs(rho) if part == "abs" else rho.real
    below = np.flatnonzero(vals < rho_th)
    return int(below[0] - 1) if below.size else spec.fft_size - 1
