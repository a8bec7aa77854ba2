"""OFDM channel vectors, array response and the beam-steering codebook."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .propagation import PathSet
from .scene import BaseStation

UNIT_SAMPLE = "unit_sample"
RAISED_COSINE = "raised_cosine"


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class OFDMConfig:
    subcarriers: int = 64
    cyclic_prefix: int = 8
    sampling_time: float = 500e-9
    pulse: str = UNIT_SAMPLE
    rolloff: float = 0.25

    def __post_init__(self):
        if self.subcarriers < 1:
            raise ValueError("subcarriers must be >= 1")
        if not 1 <= self.cyclic_prefix <= self.subcarriers:
            raise ValueError("cyclic_prefix must lie in [1, subcarriers]")
        if not self.sampling_time > 0:
            raise ValueError("sampling_time must be positive")
        if self.pulse not in (UNIT_SAMPLE, RAISED_COSINE):
            raise ValueError(f"unknown pulse {self.pulse!r}")

    @property
    def max_delay(self) -> float:
        """Delays must stay strictly below this value."""
        return self.cyclic_prefix * self.sampling_time


@dataclass(frozen=True)
class ChannelMatrix:
    """Channel vectors for one user, shape (K, M): row k is h_{u,k}."""

    h: np.ndarray
    user: int = 0
    time_index: int = 0
    bs: int = 0

    @property
    def subcarriers(self) -> int:
        return self.h.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.h.shape[1]


@dataclass(frozen=True)
class Codebook:
    """Beam-steering vectors stored as the columns of an (M, |F|) matrix."""

    vectors: np.ndarray
    direction_cosines: np.ndarray

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    def beam(self, index: int) -> np.ndarray:
        """Beam by its 1-based catalog index."""
        if not 1 <= index <= self.size:
            raise IndexError(f"beam index {index} outside [1, {self.size}]")
        return self.vectors[:, index - 1]


@dataclass(frozen=True)
class NoiseModel:
    variance: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("noise variance must be non-negative")


def direction_cosine(theta, phi, axis=(1.0, 0.0, 0.0)):
    """Cosine between the direction (azimuth theta, zenith phi) and ``axis``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ax = np.asarray(axis, dtype=float)
    return (np.sin(phi) * np.cos(theta) * ax[0]
            + np.sin(phi) * np.sin(theta) * ax[1]
            + np.cos(phi) * ax[2])


def response_from_cosine(u, M: int, spacing: float = 0.5) -> np.ndarray:
    """ULA response for direction cosine(s) ``u``; shape (M,) or (len(u), M)."""
    m = np.arange(M)
    return np.exp(2j * np.pi * spacing * np.multiply.outer(np.asarray(u, float), m))


def array_response(theta, phi, M: int, spacing: float = 0.5,
                   axis=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Uniform linear array response; element 0 is the phase reference."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return response_from_cosine(direction_cosine(theta, phi, axis), M, spacing)


def build_codebook(M: int, size: int, spacing: float = 0.5) -> Codebook:
    """Steering beams on a uniform direction-cosine grid over [-1, 1).

    Beam i is conj(a(u_i)) / sqrt(M), so that under the h^T f convention the
    beam steered at u_i is the matched filter for a path arriving from u_i.
    With M == size and half-wavelength spacing this is a DFT basis.
    """
    if size < 1:
        raise ValueError("codebook size must be >= 1")
    u = -1.0 + 2.0 * np.arange(size) / size
    F = np.conj(response_from_cosine(u, M, spacing)).T / np.sqrt(M)
    return Codebook(F, u)


def pulse(t, sampling_time: float, kind: str = UNIT_SAMPLE, rolloff: float = 0.25):
    """Pulse shape p(t).

    ``unit_sample`` is 1 on [-T_S/2, T_S/2) and 0 elsewhere: on the sample grid
    it is the discrete unit impulse, and an off-grid delay lands on the
    nearest tap.
    """
    x = np.asarray(t, dtype=float) / sampling_time
    if kind == UNIT_SAMPLE:
        return ((x >= -0.5) & (x < 0.5)).astype(float)
    if kind == RAISED_COSINE:
        b = rolloff
        out = np.sinc(x) * np.cos(np.pi * b * x)
        den = 1.0 - (2.0 * b * x) ** 2
        sing = np.isclose(den, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(sing, np.pi / 4 * np.sinc(1 / (2 * b)) if b > 0 else 0.0, out / den)
        return out
    raise ValueError(f"unknown pulse {kind!r}")


def build_channel(paths: PathSet, ofdm: OFDMConfig, bs: BaseStation,
                  user: int = 0, time_index: int = 0, bs_index: int = 0) -> ChannelMatrix:
    """Per-subcarrier channel vectors of the geometric wideband model."""
    K, D, M = ofdm.subcarriers, ofdm.cyclic_prefix, bs.num_antennas
    if not paths.paths:
        return ChannelMatrix(np.zeros((K, M), complex), user, time_index, bs_index)
    for i, p in enumerate(paths.paths):
        if p.delay >= ofdm.max_delay:
            raise ChannelError(
                f"path {i} delay {p.delay:.4e} s is not below D*T_S = {ofdm.max_delay:.4e} s")
    alpha = np.array([p.gain for p in paths.paths])
    tau = np.array([p.delay for p in paths.paths])
    theta = np.array([p.azimuth for p in paths.paths])
    phi = np.array([p.elevation for p in paths.paths])
    d = np.arange(D)
    taps = pulse(d[None, :] * ofdm.sampling_time - tau[:, None],
                 ofdm.sampling_time, ofdm.pulse, ofdm.rolloff)            # (L, D)
    phase = np.exp(-2j * np.pi * np.outer(np.arange(K), d) / K)           # (K, D)
    freq = phase @ taps.T                                                  # (K, L)
    A = array_response(theta, phi, M, bs.antenna_spacing, bs.array_axis)   # (L, M)
    h = (freq * alpha[None, :]) @ A
    return ChannelMatrix(h, user, time_index, bs_index)


def received_symbol(h, f, x: complex, noise: NoiseModel, rng: np.random.Generator) -> complex:
    """y = h^T f x + n with circularly-symmetric complex Gaussian n."""
    h = np.asarray(h)
    f = np.asarray(f)
    if h.shape != f.shape:
        raise ValueError(f"channel shape {h.shape} does not match beam shape {f.shape}")
    s = np.sqrt(noise.variance / 2)
    n = s * (rng.standard_normal() + 1j * rng.standard_normal())
    return complex(h @ f * x + n)


# --------------------------------------------------------------------------
# binary export: int32 M, K, u, t (little endian), then K*M complex64 by row k

_HEADER = struct.Struct("<4i")


def write_channel(ch: ChannelMatrix, path) -> None:
    path = FsPath(path)
    K, M = ch.h.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(M, K, ch.user, ch.time_index))
        fh.write(np.ascontiguousarray(ch.h, dtype="<c8").tobytes())


def read_channel(path) -> ChannelMatrix:
    raw = FsPath(path).read_bytes()
    M, K, u, t = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    if body.size != K * M:
        raise ChannelError(f"{path}: expected {K * M} entries, found {body.size}")
    return ChannelMatrix(body.reshape(K, M).astype(complex), u, t)
