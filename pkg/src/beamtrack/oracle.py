"""Achievable rate per beam and the rate-optimal codebook beam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix, Codebook

LN2 = np.log(2.0)


@dataclass(frozen=True)
class OracleConfig:
    snr: float = 10 ** 0.5  # 5 dB

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    @classmethod
    def from_db(cls, snr_db: float) -> "OracleConfig":
        return cls(10 ** (snr_db / 10))


@dataclass(frozen=True)
class BeamLabel:
    user: int
    time_index: int
    beam_index: int  # 1-based
    rate: float


def _h(h) -> np.ndarray:
    return h.h if isinstance(h, ChannelMatrix) else np.asarray(h)


def beam_rate(h, f, cfg: OracleConfig) -> float:
    """Sum over subcarriers of log2(1 + SNR |h_k^T f|^2), in bits/s/Hz."""
    g = _h(h) @ np.asarray(f)
    return float(np.sum(np.log1p(cfg.snr * np.abs(g) ** 2)) / LN2)


def beam_rates(h, codebook: Codebook, cfg: OracleConfig) -> np.ndarray:
    """Rates of every codebook beam, shape (|F|,)."""
    g = _h(h) @ codebook.vectors
    return np.sum(np.log1p(cfg.snr * np.abs(g) ** 2), axis=0) / LN2


def optimal_beam(h, codebook: Codebook, cfg: OracleConfig) -> BeamLabel:
    """Exhaustive search; np.argmax keeps the lowest index on ties."""
    if codebook.size < 1:
        raise ValueError("empty codebook")
    rates = beam_rates(h, codebook, cfg)
    i = int(np.argmax(rates))
    user = h.user if isinstance(h, ChannelMatrix) else 0
    t = h.time_index if isinstance(h, ChannelMatrix) else 0
    return BeamLabel(user, t, i + 1, float(rates[i]))
