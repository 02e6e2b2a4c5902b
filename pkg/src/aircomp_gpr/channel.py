"""Analog multiple-access channel and the over-the-air sum protocols.

Messages are real vectors. Each element rides the real part of one complex
symbol. Nodes transmit simultaneously over flat Rayleigh fading
``sqrt(gamma_bar_i) * h_i`` and the base station (BS) receives the
superposition plus circular complex Gaussian noise of total variance
``sigma_z2`` per symbol.

Two encodings are provided:

* perfect CSI: full channel inversion with a per-round power-control
  scalar chosen by the BS from the instantaneous channels and message norms;
* statistical CSI: phase-only compensation with a power-control scalar
  fixed once from the average gains, after truncating and centering each
  message, and an unbiasing constant in the decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gp import PredictionResult
from .poe import LocalPrediction, fuse_sums

RAYLEIGH_MEAN_ABS = math.sqrt(math.pi) / 2.0
DEEP_FADE_FLOOR = 1e-6  # |h| floor inside power control
ENCODE_MIN_ABS_H = 1e-12


class DeepFadeError(ArithmeticError):
    """Channel inversion attempted on a coefficient that is effectively zero."""


def db_to_linear(db) -> float:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_mw(dbm) -> float:
    return db_to_linear(dbm)


@dataclass(frozen=True)
class ChannelParams:
    """Static link budget: average gains (linear), noise floor and power cap (mW)."""

    gamma_bar: tuple[float, ...]
    sigma_z2: float
    p_max: float

    def __post_init__(self):
        object.__setattr__(self, "gamma_bar", tuple(float(g) for g in np.atleast_1d(self.gamma_bar)))
        if any(g < 0 or not math.isfinite(g) for g in self.gamma_bar):
            raise ValueError("average gains must be finite and non-negative")
        if self.sigma_z2 < 0 or self.p_max <= 0:
            raise ValueError("need sigma_z2 >= 0 and p_max > 0")

    @property
    def M(self) -> int:
        return len(self.gamma_bar)

    @classmethod
    def from_db(cls, M: int, gamma_bar_db: float, sigma_z2_dbm: float, p_max_dbm: float) -> "ChannelParams":
        return cls((float(db_to_linear(gamma_bar_db)),) * M, float(dbm_to_mw(sigma_z2_dbm)), float(dbm_to_mw(p_max_dbm)))


@dataclass
class ChannelState:
    gamma_bar: np.ndarray
    h: np.ndarray
    sigma_z2: float
    p_max: float

    def __post_init__(self):
        self.gamma_bar = np.asarray(self.gamma_bar, dtype=float).reshape(-1)
        self.h = np.asarray(self.h, dtype=complex).reshape(-1)
        if self.gamma_bar.shape != self.h.shape:
            raise ValueError("gamma_bar and h must have one entry per node")
        if self.sigma_z2 < 0 or self.p_max <= 0:
            raise ValueError("need sigma_z2 >= 0 and p_max > 0")

    @property
    def M(self) -> int:
        return self.h.shape[0]

    @property
    def gains(self) -> np.ndarray:
        """Effective complex gains ``sqrt(gamma_bar_i) * h_i``."""
        return np.sqrt(self.gamma_bar) * self.h


@dataclass(frozen=True)
class PowerPolicy:
    rho: float = 0.0
    mode: str = "perfect"
    l_min: float | None = None
    l_max: float | None = None
    c_unbias: float = RAYLEIGH_MEAN_ABS

    def __post_init__(self):
        if self.mode not in ("perfect", "statistical"):
            raise ValueError(f"unknown power policy mode {self.mode!r}")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.c_unbias <= 0:
            raise ValueError("c_unbias must be positive")
        if self.mode == "statistical":
            if self.l_min is None or self.l_max is None or not self.l_min < self.l_max:
                raise ValueError("statistical mode needs l_min < l_max")


@dataclass
class RoundRecord:
    """What the BS logs about one over-the-air round."""

    rho: float
    tx_power: np.ndarray
    binding_node: int | None = None
    deep_fade_nodes: list[int] = field(default_factory=list)
    zero_norm_nodes: list[int] = field(default_factory=list)


def sample_fading(M: int, rng) -> np.ndarray:
    """i.i.d. CN(0, 1) coefficients."""
    rng = np.random.default_rng(rng)
    return (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / math.sqrt(2.0)


def sample_channel(M: int, gamma_bar, sigma_z2: float, p_max: float, seed=None) -> ChannelState:
    if M < 1:
        raise ValueError("need at least one node")
    gamma_bar = np.broadcast_to(np.asarray(gamma_bar, dtype=float), (M,))
    return ChannelState(gamma_bar, sample_fading(M, seed), sigma_z2, p_max)


@dataclass
class PowerPlan:
    rho: float
    binding_node: int
    deep_fade_nodes: list[int]
    zero_norm_nodes: list[int]


def perfect_power_plan(channel: ChannelState, message_norms) -> PowerPlan:
    """Largest common scaling that keeps every inverted transmission within ``p_max``."""
    norms = np.asarray(message_norms, dtype=float).reshape(-1)
    if norms.shape[0] != channel.M:
        raise ValueError("one message norm per node required")
    abs_h = np.abs(channel.h)
    deep = [int(i) for i in np.flatnonzero(abs_h < DEEP_FADE_FLOOR)]
    abs_h = np.maximum(abs_h, DEEP_FADE_FLOOR)
    zero = [int(i) for i in np.flatnonzero(norms <= 0)]
    active = norms > 0
    if not np.any(active):
        # Nothing to send; any finite scaling works.
        norms = np.full_like(norms, np.finfo(float).eps)
        active = np.ones_like(active)
    amp = np.sqrt(channel.gamma_bar) * abs_h * math.sqrt(channel.p_max)
    ratio = np.full(norms.shape, np.inf)
    ratio[active] = amp[active] / norms[active]
    k = int(np.argmin(ratio))
    return PowerPlan(float(ratio[k] ** 2), k, deep, zero)


def power_control_perfect(channel: ChannelState, message_norms) -> float:
    return perfect_power_plan(channel, message_norms).rho


def encode_perfect(s_i, rho: float, gamma_bar_i: float, h_i: complex) -> np.ndarray:
    """Invert the channel so the BS sees ``sqrt(rho) * s_i``."""
    if abs(h_i) < ENCODE_MIN_ABS_H or gamma_bar_i <= 0:
        raise DeepFadeError(f"cannot invert channel with |h|={abs(h_i):.3g}, gamma_bar={gamma_bar_i:.3g}")
    s_i = np.atleast_1d(np.asarray(s_i, dtype=float))
    return (math.sqrt(rho) / (math.sqrt(gamma_bar_i) * complex(h_i))) * s_i.astype(complex)


def aircomp_round(encoded: Sequence[np.ndarray], channel: ChannelState, seed=None) -> np.ndarray:
    """Superimpose all transmissions through the channel and add receiver noise."""
    if len(encoded) != channel.M:
        raise ValueError(f"expected {channel.M} transmissions, got {len(encoded)}")
    lengths = {np.shape(np.atleast_1d(x)) for x in encoded}
    if len(lengths) != 1:
        raise ValueError(f"transmissions differ in length: {sorted(lengths)}")
    n = lengths.pop()[0]
    y = np.zeros(n, dtype=complex)
    gains = channel.gains
    for i, x in enumerate(encoded):
        y += gains[i] * np.atleast_1d(x)
    return y + complex_noise(n, channel.sigma_z2, seed)


def complex_noise(n: int, sigma_z2: float, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return math.sqrt(sigma_z2 / 2.0) * w


def decode_perfect(y, rho: float) -> np.ndarray:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return np.real(np.asarray(y) / math.sqrt(rho))


def truncate_center(L, l_min: float, l_max: float):
    """Clip to ``[l_min, l_max]`` then shift the interval midpoint to zero."""
    if not l_min < l_max:
        raise ValueError(f"need l_min < l_max, got {l_min}, {l_max}")
    out = np.clip(L, l_min, l_max) - 0.5 * (l_max + l_min)
    return float(out) if np.ndim(out) == 0 else out


def power_control_statistical(gamma_bar, p_max: float, l_min: float, l_max: float) -> float:
    """Fixed scaling from average gains only.

    The denominator is the magnitude of the truncation midpoint; its sign is
    dropped so the scaling stays positive.
    """
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    if np.any(gamma_bar <= 0):
        raise ValueError("statistical power control needs positive average gains")
    mid = 0.5 * (l_max + l_min)
    if mid == 0:
        raise ValueError("l_max + l_min must be non-zero")
    sqrt_rho = np.min(np.sqrt(gamma_bar) * math.sqrt(p_max) / abs(mid))
    return float(sqrt_rho**2)


def encode_statistical(s_i, rho: float, gamma_bar_i: float, h_i: complex) -> np.ndarray:
    """Cancel only the phase of ``h_i``; the amplitude stays uncompensated."""
    s_i = np.atleast_1d(np.asarray(s_i, dtype=float))
    a = abs(h_i)
    phase = complex(np.conj(h_i)) / a if a >= ENCODE_MIN_ABS_H else 1.0 + 0j
    return (math.sqrt(rho) * phase / math.sqrt(gamma_bar_i)) * s_i.astype(complex)


def decode_statistical(y, rho: float, c_unbias: float) -> np.ndarray:
    if not rho > 0 or not c_unbias > 0:
        raise ValueError(f"rho and c_unbias must be positive, got {rho}, {c_unbias}")
    return np.real(np.asarray(y) / (c_unbias * math.sqrt(rho)))


def unbias_constant(channel_model: str = "rayleigh") -> float:
    if channel_model == "rayleigh":
        return RAYLEIGH_MEAN_ABS
    if channel_model == "awgn":
        return 1.0
    raise ValueError(f"unknown channel model {channel_model!r}")


def _tx_power(encoded) -> np.ndarray:
    return np.array([float(np.sum(np.abs(x) ** 2)) for x in encoded])


def _floored(h: complex) -> complex:
    # Deep-faded nodes invert a floored gain: power stays feasible, their term is attenuated.
    a = abs(h)
    if a >= DEEP_FADE_FLOOR:
        return complex(h)
    return DEEP_FADE_FLOOR * (complex(h) / a if a > 0 else 1.0)


def perfect_csi_sum(messages, params: ChannelParams, rng, fading=None) -> tuple[np.ndarray, RoundRecord]:
    """One perfect-CSI round: fresh fading, power control, inversion, decode.

    ``messages`` has one row per node. Returns the decoded sum estimate.
    """
    rng = np.random.default_rng(rng)
    S = np.atleast_2d(np.asarray(messages, dtype=float))
    if S.shape[0] != params.M:
        raise ValueError(f"expected {params.M} messages, got {S.shape[0]}")
    h = sample_fading(params.M, rng) if fading is None else np.asarray(fading, dtype=complex)
    ch = ChannelState(params.gamma_bar, h, params.sigma_z2, params.p_max)
    plan = perfect_power_plan(ch, np.linalg.norm(S, axis=1))
    encoded = [
        encode_perfect(S[i], plan.rho, ch.gamma_bar[i], _floored(ch.h[i])) for i in range(ch.M)
    ]
    y = aircomp_round(encoded, ch, rng)
    record = RoundRecord(plan.rho, _tx_power(encoded), plan.binding_node, plan.deep_fade_nodes, plan.zero_norm_nodes)
    return decode_perfect(y, plan.rho), record


def statistical_csi_sum(messages, params: ChannelParams, rho: float, c_unbias: float, rng) -> tuple[np.ndarray, RoundRecord]:
    """One statistical-CSI round with a fixed ``rho``; messages must already be centered."""
    rng = np.random.default_rng(rng)
    S = np.atleast_2d(np.asarray(messages, dtype=float))
    if S.shape[0] != params.M:
        raise ValueError(f"expected {params.M} messages, got {S.shape[0]}")
    ch = ChannelState(params.gamma_bar, sample_fading(params.M, rng), params.sigma_z2, params.p_max)
    encoded = [encode_statistical(S[i], rho, ch.gamma_bar[i], ch.h[i]) for i in range(ch.M)]
    y = aircomp_round(encoded, ch, rng)
    deep = [int(i) for i in np.flatnonzero(np.abs(ch.h) < ENCODE_MIN_ABS_H)]
    return decode_statistical(y, rho, c_unbias), RoundRecord(rho, _tx_power(encoded), None, deep)


def aircomp_predict_round(
    locals_: Sequence[LocalPrediction],
    params: ChannelParams,
    seed=None,
    precision_floor: float = 1e-12,
    records: list | None = None,
) -> PredictionResult:
    """Fuse local predictions through two perfect-CSI rounds.

    The first round carries local precisions, the second the
    precision-weighted means. The decoded precision sum is floored at
    ``precision_floor`` before inversion.
    """
    if len(locals_) != params.M:
        raise ValueError(f"expected {params.M} local predictions, got {len(locals_)}")
    rng = np.random.default_rng(seed)
    prec = np.stack([lp.precision for lp in locals_])
    wmean = np.stack([lp.precision * lp.mean for lp in locals_])
    prec_sum, rec0 = perfect_csi_sum(prec, params, rng)
    wmean_sum, rec1 = perfect_csi_sum(wmean, params, rng)
    if records is not None:
        records.extend([rec0, rec1])
    return fuse_sums(prec_sum, wmean_sum, floor=precision_floor)
