"""Geometric propagation between a base station and a receiver.

This is a small stand-in for a ray tracer.  It emits the line-of-sight path
when the direct segment is clear and one specular path per building facade
found with the image method.  Gains follow the free-space law with an extra
fixed loss per bounce; delays are path length over the speed of light.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import BaseStation, Scene

SPEED_OF_LIGHT = 299_792_458.0
LOS = "LOS"
REFLECTION = "reflection"


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    carrier_frequency: float = 28e9
    reflection_loss_db: float = 6.0
    max_paths: int = 5
    max_delay: float | None = None  # paths at or beyond this delay are dropped

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency


@dataclass(frozen=True)
class Path:
    gain: complex
    delay: float
    azimuth: float    # (-pi, pi], measured from +x in the horizontal plane
    elevation: float  # [0, pi], measured from +z (dipole axis)
    kind: str = LOS

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("path delay must be non-negative")
        if not np.isfinite(abs(self.gain)):
            raise ValueError("path gain must be finite")


@dataclass(frozen=True)
class PathSet:
    paths: tuple[Path, ...]
    carrier_frequency: float = 28e9

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def blocked(self) -> bool:
        return not self.paths

    def scaled(self, c: complex) -> "PathSet":
        return PathSet(tuple(Path(p.gain * c, p.delay, p.azimuth, p.elevation, p.kind)
                             for p in self.paths), self.carrier_frequency)

    def __add__(self, other: "PathSet") -> "PathSet":
        return PathSet(self.paths + other.paths, self.carrier_frequency)


# --------------------------------------------------------------------------
# blockage

def blocked_matrix(a: np.ndarray, b: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Pairwise test of open segments against open boxes.

    ``a`` and ``b`` have shape (S, 3), ``boxes`` has shape (K, 2, 3).  Returns a
    (S, K) boolean array, true where segment s passes through the interior of
    box k.  Touching a face, edge or corner does not count.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 2, 3)
    if boxes.shape[0] == 0 or a.shape[0] == 0:
        return np.zeros((a.shape[0], boxes.shape[0]), dtype=bool)
    # canonical endpoint order so that (a, b) and (b, a) round identically
    diff = b - a
    first = np.argmax(diff != 0.0, axis=1)
    swap = diff[np.arange(len(diff)), first] < 0.0
    if swap.any():
        a, b = np.where(swap[:, None], b, a), np.where(swap[:, None], a, b)
    d = (b - a)[:, None, :]            # (S, 1, 3)
    lo = boxes[None, :, 0, :] - a[:, None, :]
    hi = boxes[None, :, 1, :] - a[:, None, :]
    flat = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t0 = lo / d
        t1 = hi / d
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    # axis with no motion: either always strictly inside the slab or never
    inside = (lo < 0.0) & (hi > 0.0)
    tmin = np.where(flat, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(flat, np.where(inside, np.inf, -np.inf), tmax)
    enter = np.maximum(tmin.max(axis=2), 0.0)
    leave = np.minimum(tmax.min(axis=2), 1.0)
    return enter < leave


def segment_blocked(a, b, boxes) -> bool:
    """True iff the open segment (a, b) meets the interior of any box."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        raise ValueError("segment endpoints must differ")
    return bool(blocked_matrix(a[None], b[None], boxes).any())


# --------------------------------------------------------------------------
# paths

def departure_angles(direction: np.ndarray) -> tuple[float, float]:
    """(azimuth, elevation) of a direction vector, elevation from +z."""
    x, y, z = direction
    r = float(np.linalg.norm(direction))
    return float(np.arctan2(y, x)), float(np.arccos(np.clip(z / r, -1.0, 1.0)))


def free_space_gain(length: float, cfg: PropagationConfig, extra_loss_db: float = 0.0) -> complex:
    lam = cfg.wavelength
    amp = lam / (4 * np.pi * length) * 10 ** (-extra_loss_db / 20)
    tau = length / SPEED_OF_LIGHT
    return complex(amp * np.exp(-2j * np.pi * cfg.carrier_frequency * tau))


def facades(buildings: np.ndarray) -> np.ndarray:
    """Vertical facades as rows (building, axis, sign, plane coordinate).

    ``axis`` is 0 for planes x = const and 1 for y = const; ``sign`` is the
    outward normal direction along that axis.
    """
    rows = []
    for i, (lo, hi) in enumerate(buildings):
        for axis in (0, 1):
            rows.append((i, axis, -1.0, lo[axis]))
            rows.append((i, axis, +1.0, hi[axis]))
    return np.array(rows, dtype=float).reshape(-1, 4)


def specular_points(src, dst, buildings):
    """Image-method reflection points on every facade.

    Returns (building index, reflection point) pairs for facades where both
    endpoints sit strictly on the outer side and the mirrored ray lands
    inside the facade rectangle.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    fac = facades(buildings)
    out = []
    for bi, axis, sign, c in fac:
        bi, axis = int(bi), int(axis)
        if sign * (src[axis] - c) <= 0 or sign * (dst[axis] - c) <= 0:
            continue
        image = src.copy()
        image[axis] = 2 * c - src[axis]
        t = (c - image[axis]) / (dst[axis] - image[axis])
        p = image + t * (dst - image)
        p[axis] = c
        lo, hi = buildings[bi]
        other = 1 - axis
        if lo[other] <= p[other] <= hi[other] and lo[2] <= p[2] <= hi[2]:
            out.append((bi, p))
    return out


def trace_paths(scene: Scene, bs: BaseStation, rx, receiver_id: int | None = None,
                cfg: PropagationConfig | None = None) -> PathSet:
    """Multipath parameters from ``bs`` to the receiver point ``rx``.

    ``receiver_id`` names the object carrying the receiver so its own box is
    not treated as an obstacle.
    """
    cfg = cfg or PropagationConfig()
    rx = np.asarray(rx, dtype=float)
    tx = np.asarray(bs.position, dtype=float)
    (x0, x1), (y0, y1) = scene.layout.bounds
    if not (x0 <= rx[0] <= x1 and y0 <= rx[1] <= y1 and rx[2] >= 0):
        raise DomainError(f"receiver {tuple(rx)} lies outside the layout")

    buildings = scene.layout.building_boxes()
    movers = scene.object_boxes(exclude=receiver_id)
    obstacles = np.concatenate([buildings, movers]) if len(movers) else buildings

    paths: list[Path] = []
    if not blocked_matrix(tx[None], rx[None], obstacles).any():
        length = float(np.linalg.norm(rx - tx))
        az, el = departure_angles(rx - tx)
        paths.append(Path(free_space_gain(length, cfg), length / SPEED_OF_LIGHT, az, el, LOS))

    cands = specular_points(tx, rx, buildings)
    if cands:
        pts = np.array([p for _, p in cands])
        n = len(cands)
        a = np.concatenate([np.repeat(tx[None], n, 0), pts])
        b = np.concatenate([pts, np.repeat(rx[None], n, 0)])
        hit = blocked_matrix(a, b, obstacles)
        own = np.array([bi for bi, _ in cands])
        hit[np.arange(n), own] = False
        hit[n + np.arange(n), own] = False
        clear = ~(hit[:n].any(axis=1) | hit[n:].any(axis=1))
        for (bi, p), ok in zip(cands, clear):
            if not ok:
                continue
            length = float(np.linalg.norm(p - tx) + np.linalg.norm(rx - p))
            az, el = departure_angles(p - tx)
            paths.append(Path(free_space_gain(length, cfg, cfg.reflection_loss_db),
                              length / SPEED_OF_LIGHT, az, el, REFLECTION))

    if cfg.max_delay is not None:
        paths = [p for p in paths if p.delay < cfg.max_delay]
    # strongest first; stable so LOS wins exact ties
    paths.sort(key=lambda p: -abs(p.gain))
    return PathSet(tuple(paths[:cfg.max_paths]), cfg.carrier_frequency)
