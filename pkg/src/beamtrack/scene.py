"""Street layout and traffic stepping.

The layout is a downtown block: one main street along x, two secondary
streets along y, sidewalks on both sides of every street, block buildings in
the six sections between them and two base stations near the middle of the
main street.  Dynamic objects (cars, trucks, buses, pedestrians) ride straight
lanes and follow a single rule: keep a minimum bumper-to-bumper gap to the
object ahead by matching its speed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

VEHICLE = "vehicle"
PEDESTRIAN = "pedestrian"
KINDS = ("car", "truck", "bus", "human")


class PlacementError(RuntimeError):
    """Raised when an object cannot be placed on a lane without breaking the gap rule."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its minimum and maximum corners."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @classmethod
    def from_center(cls, cx, cy, size_x, size_y, height, z0=0.0):
        return cls((cx - size_x / 2, cy - size_y / 2, z0),
                   (cx + size_x / 2, cy + size_y / 2, z0 + height))

    def as_array(self):
        return np.array([self.lo, self.hi], dtype=float)


@dataclass(frozen=True)
class Building:
    name: str
    box: Box


@dataclass(frozen=True)
class Lane:
    """Directed polyline; objects move from the first vertex towards the last."""

    vertices: tuple[tuple[float, float], ...]
    lane_class: str

    def __post_init__(self):
        if len(self.vertices) < 2:
            raise ValueError("a lane needs at least two vertices")
        if self.lane_class not in (VEHICLE, PEDESTRIAN):
            raise ValueError(f"unknown lane class {self.lane_class!r}")

    @cached_property
    def length(self) -> float:
        v = np.asarray(self.vertices, dtype=float)
        return float(np.sum(np.linalg.norm(np.diff(v, axis=0), axis=1)))

    def pose(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """Point and unit heading at arc length ``s`` (clamped to the lane)."""
        v = np.asarray(self.vertices, dtype=float)
        seg = np.diff(v, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        s = min(max(s, 0.0), float(seg_len.sum()))
        for i, ln in enumerate(seg_len):
            if s <= ln or i == len(seg_len) - 1:
                t = seg[i] / ln
                return v[i] + t * s, t
            s -= ln
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class BaseStation:
    position: tuple[float, float, float]
    num_antennas: int = 128
    array_axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    antenna_spacing: float = 0.5

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError("a base station needs at least one antenna")
        if abs(np.linalg.norm(self.array_axis) - 1.0) > 1e-9:
            raise ValueError("array_axis must have unit norm")


@dataclass(frozen=True)
class Layout:
    main_street_length: float
    secondary_street_length: float
    street_width: float
    sidewalk_width: float
    buildings: tuple[Building, ...]
    lanes: tuple[Lane, ...]
    basestations: tuple[BaseStation, ...]

    def __post_init__(self):
        for name in ("main_street_length", "secondary_street_length",
                     "street_width", "sidewalk_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for b in self.buildings:
            size = np.subtract(b.box.hi, b.box.lo)
            if np.any(size <= 0):
                raise ValueError(f"building {b.name} has a non-positive dimension")
            for i, lane in enumerate(self.lanes):
                if _polyline_hits_rect(lane.vertices, b.box.lo[:2], b.box.hi[:2]):
                    raise ValueError(f"building {b.name} overlaps lane {i}")

    @property
    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """((xmin, xmax), (ymin, ymax)) of the whole block."""
        hx = self.main_street_length / 2
        hy = self.secondary_street_length / 2
        return (-hx, hx), (-hy, hy)

    @cached_property
    def _lanes_by_class(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {VEHICLE: [], PEDESTRIAN: []}
        for i, ln in enumerate(self.lanes):
            out[ln.lane_class].append(i)
        return out

    def lanes_of(self, lane_class: str) -> list[int]:
        return self._lanes_by_class[lane_class]

    def building_boxes(self) -> np.ndarray:
        """Buildings as an array of shape (n, 2, 3)."""
        if not self.buildings:
            return np.zeros((0, 2, 3))
        return np.stack([b.box.as_array() for b in self.buildings])


def _polyline_hits_rect(vertices, lo, hi) -> bool:
    # closed 2D slab test per segment
    for a, b in zip(vertices[:-1], vertices[1:]):
        a = np.asarray(a, float)
        d = np.asarray(b, float) - a
        t0, t1 = 0.0, 1.0
        hit = True
        for k in range(2):
            if d[k] == 0.0:
                if a[k] < lo[k] or a[k] > hi[k]:
                    hit = False
                    break
                continue
            u0 = (lo[k] - a[k]) / d[k]
            u1 = (hi[k] - a[k]) / d[k]
            t0 = max(t0, min(u0, u1))
            t1 = min(t1, max(u0, u1))
        if hit and t0 <= t1:
            return True
    return False


# --------------------------------------------------------------------------
# object catalog

@dataclass(frozen=True)
class KindSpec:
    """Per-kind catalog entry; ``models`` holds (length, width, height) triples."""

    models: tuple[tuple[float, float, float], ...]
    speed_range: tuple[float, float]
    min_gap: float
    lane_class: str
    antenna: str  # "roof" or "side"
    count_range: tuple[int, int] = (0, 1000)


DEFAULT_KINDS: dict[str, KindSpec] = {
    "car": KindSpec(
        models=((4.98, 2.00, 1.44), (4.39, 2.23, 1.22), (4.29, 1.82, 1.31),
                (4.77, 2.25, 1.74), (4.56, 2.09, 1.68), (4.22, 1.77, 1.44),
                (4.93, 2.14, 1.38), (5.03, 1.87, 1.33)),
        speed_range=(10.0, 20.0), min_gap=5.0, lane_class=VEHICLE,
        antenna="roof", count_range=(35, 50)),
    "truck": KindSpec(models=((10.0, 3.0, 4.0),), speed_range=(10.0, 20.0),
                      min_gap=5.0, lane_class=VEHICLE, antenna="roof",
                      count_range=(5, 10)),
    "bus": KindSpec(models=((14.0, 3.0, 3.0),), speed_range=(10.0, 20.0),
                    min_gap=5.0, lane_class=VEHICLE, antenna="roof",
                    count_range=(25, 35)),
    "human": KindSpec(models=((0.43, 0.47, 1.54), (0.68, 0.43, 1.86)),
                      speed_range=(1.0, 2.0), min_gap=1.0, lane_class=PEDESTRIAN,
                      antenna="side", count_range=(20, 20)),
}

ROOF_CLEARANCE = 0.30
HAND_HEIGHT = 1.0


def antenna_offset_for(kind: KindSpec, dims) -> tuple[float, float, float]:
    """Antenna offset (along, lateral, up) relative to the box origin.

    The box origin is the centre of the footprint at ground level.  Vehicles
    carry the antenna on the roof, pedestrians on their left side face.
    """
    length, width, height = dims
    if kind.antenna == "roof":
        return (0.0, 0.0, height + ROOF_CLEARANCE)
    return (0.0, width / 2, min(HAND_HEIGHT, height))


@dataclass(frozen=True)
class DynamicObject:
    id: int
    kind: str
    bounding_box: tuple[float, float, float]  # length, width, height
    lane_index: int
    arc_position: float
    speed: float
    antenna_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    life: int = 0  # bumped at every reinitialization
    active: bool = True

    @property
    def half_length(self) -> float:
        return self.bounding_box[0] / 2


@dataclass(frozen=True)
class Scene:
    time_index: int
    objects: tuple[DynamicObject, ...]
    layout: Layout = field(repr=False)
    kinds: Mapping[str, KindSpec] = field(default_factory=lambda: DEFAULT_KINDS, repr=False)
    seed: int = 0

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")

    def object_box(self, obj: DynamicObject) -> Box:
        return object_box(obj, self.layout)

    @cached_property
    def _box_table(self) -> tuple[np.ndarray, np.ndarray]:
        act = [o for o in self.objects if o.active]
        ids = np.array([o.id for o in act], dtype=np.int64)
        if not act:
            return ids, np.zeros((0, 2, 3))
        return ids, np.stack([object_box(o, self.layout).as_array() for o in act])

    def object_boxes(self, exclude: int | None = None) -> np.ndarray:
        """Boxes of the active objects, shape (n, 2, 3), optionally minus one id."""
        ids, boxes = self._box_table
        if exclude is None:
            return boxes
        return boxes[ids != exclude]


# --------------------------------------------------------------------------
# default layout

def default_layout(
    main_street_length: float = 429.88,
    secondary_street_length: float = 215.05,
    street_width: float = 15.0,
    sidewalk_width: float = 10.0,
    secondary_offsets: Sequence[float] = (-100.0, 100.0),
    lane_width: float = 3.75,
    bs_height: float = 6.0,
    bs_spacing: float = 60.0,
    num_antennas: int = 128,
    buildings: Sequence[Building] | None = None,
) -> Layout:
    """Build the block layout: crossing streets, sidewalks, buildings and two base stations."""
    hx = main_street_length / 2
    hy = secondary_street_length / 2
    per_dir = max(1, int(round(street_width / (2 * lane_width))))
    lanes: list[Lane] = []

    def street_lanes(axis: int, center: float, half_len: float):
        out = []
        for k in range(per_dir):
            off = (k + 0.5) * lane_width
            for sign in (+1, -1):
                c = center + sign * off
                a, b = -half_len, half_len
                if sign < 0:  # right-hand traffic
                    a, b = b, a
                if axis == 0:
                    out.append(Lane(((a, c), (b, c)), VEHICLE))
                else:
                    out.append(Lane(((c, -a), (c, -b)), VEHICLE))
        return out

    def sidewalk_lanes(axis: int, center: float, half_len: float):
        out = []
        for side in (+1, -1):
            base = center + side * (street_width / 2)
            for frac, fwd in ((1 / 3, True), (2 / 3, False)):
                c = base + side * frac * sidewalk_width
                a, b = (-half_len, half_len) if fwd else (half_len, -half_len)
                if axis == 0:
                    out.append(Lane(((a, c), (b, c)), PEDESTRIAN))
                else:
                    out.append(Lane(((c, a), (c, b)), PEDESTRIAN))
        return out

    lanes += street_lanes(0, 0.0, hx)
    for x in secondary_offsets:
        lanes += street_lanes(1, x, hy)
    lanes += sidewalk_lanes(0, 0.0, hx)
    for x in secondary_offsets:
        lanes += sidewalk_lanes(1, x, hy)

    if buildings is None:
        buildings = default_buildings(street_width, sidewalk_width)
    curb = street_width / 2 + 0.5
    bss = (
        BaseStation((-bs_spacing / 2, curb, bs_height), num_antennas),
        BaseStation((bs_spacing / 2, -curb, bs_height), num_antennas),
    )
    return Layout(main_street_length, secondary_street_length, street_width,
                  sidewalk_width, tuple(buildings), tuple(lanes), bss)


def default_buildings(street_width=15.0, sidewalk_width=10.0) -> list[Building]:
    # footprints given as (name, cx, y_near_edge, size_x, size_y, height);
    # y_near_edge is the distance of the street-facing facade from the axis
    edge = street_width / 2 + sidewalk_width + 2.0
    spec = [
        ("building1", -160.0, +1, 74.80, 22.02, 103.33),
        ("building2", 0.0, +1, 91.11, 43.43, 130.33),
        ("apartment1", 128.0, +1, 19.21, 19.38, 11.48),
        ("building5", 176.0, +1, 74.80, 69.75, 54.21),
        ("building2b", -165.0, -1, 91.11, 43.43, 130.33),
        ("building3", -10.0, -1, 87.11, 63.35, 74.34),
        ("apartment2", 50.0, -1, 10.88, 10.18, 20.58),
        ("building4", 135.0, -1, 32.24, 87.11, 74.34),
        ("building1b", 180.0, -1, 22.02, 74.80, 103.33),
    ]
    out = []
    for name, cx, side, sx, sy, h in spec:
        cy = side * (edge + sy / 2)
        out.append(Building(name, Box.from_center(cx, cy, sx, sy, h)))
    return out


# --------------------------------------------------------------------------
# kinematics

def object_box(obj: DynamicObject, layout: Layout) -> Box:
    lane = layout.lanes[obj.lane_index]
    p, t = lane.pose(obj.arc_position)
    length, width, height = obj.bounding_box
    ext = np.abs(t) * length / 2 + np.abs(t[::-1]) * width / 2
    return Box((p[0] - ext[0], p[1] - ext[1], 0.0),
               (p[0] + ext[0], p[1] + ext[1], height))


def receiver_position(obj: DynamicObject, layout: Layout) -> np.ndarray:
    """World-frame antenna position of ``obj``."""
    lane = layout.lanes[obj.lane_index]
    p, t = lane.pose(obj.arc_position)
    n = np.array([-t[1], t[0]])
    along, lateral, up = obj.antenna_offset
    xy = p + along * t + lateral * n
    return np.array([xy[0], xy[1], up])


def _check_counts(counts: Mapping[str, int], kinds: Mapping[str, KindSpec],
                  enforce_ranges: bool) -> None:
    for name, c in counts.items():
        if name not in kinds:
            raise ValueError(f"unknown object kind {name!r}")
        if c < 0:
            raise ValueError(f"count for {name} is negative")
        lo, hi = kinds[name].count_range
        if enforce_ranges and not lo <= c <= hi:
            raise ValueError(f"count for {name} = {c} outside [{lo}, {hi}]")


_PLURALS = {"cars": "car", "trucks": "truck", "buses": "bus", "humans": "human"}


def _normalize_counts(counts: Mapping[str, int]) -> dict[str, int]:
    return {_PLURALS.get(k, k): int(v) for k, v in counts.items()}


def init_scene(layout: Layout, counts: Mapping[str, int], rng_seed: int,
               kinds: Mapping[str, KindSpec] | None = None,
               enforce_ranges: bool = False, max_tries: int = 200) -> Scene:
    """Place every object on a random lane of its class with a random speed."""
    kinds = DEFAULT_KINDS if kinds is None else kinds
    counts = _normalize_counts(counts)
    _check_counts(counts, kinds, enforce_ranges)
    rng = np.random.default_rng([rng_seed, 0])
    placed: dict[int, list[tuple[float, float, float]]] = {}  # lane -> (arc, half, gap)
    objects = []
    next_id = 0
    for name in [k for k in kinds if counts.get(k, 0) > 0]:
        spec = kinds[name]
        lanes = layout.lanes_of(spec.lane_class)
        if not lanes:
            raise PlacementError(f"no {spec.lane_class} lane for kind {name}")
        for _ in range(counts[name]):
            dims = spec.models[rng.integers(len(spec.models))]
            half = dims[0] / 2
            lane_idx = None
            for _ in range(max_tries):
                cand = lanes[rng.integers(len(lanes))]
                length = layout.lanes[cand].length
                s = rng.uniform(half, length - half)
                ok = all(abs(s - a) - half - h >= max(spec.min_gap, g)
                         for a, h, g in placed.get(cand, ()))
                if ok:
                    lane_idx = cand
                    break
            if lane_idx is None:
                raise PlacementError(f"lane {cand} is full; cannot place {name} #{next_id}")
            placed.setdefault(lane_idx, []).append((s, half, spec.min_gap))
            speed = rng.uniform(*spec.speed_range)
            objects.append(DynamicObject(
                next_id, name, tuple(dims), lane_idx, float(s), float(speed),
                antenna_offset_for(spec, dims)))
            next_id += 1
    return Scene(0, tuple(objects), layout, kinds, rng_seed)


def step_scene(scene: Scene, dt: float = 0.1, max_retries: int = 10) -> Scene:
    """Advance every object by ``dt`` seconds.

    Objects are processed front to back per lane.  A follower that would end
    up closer than the kind's minimum gap to its (already moved) leader takes
    the leader's speed.  Objects leaving their lane are reinitialised at the
    start of a random lane of the same class with a fresh speed.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    layout, kinds = scene.layout, scene.kinds
    rng = np.random.default_rng([scene.seed, scene.time_index + 1])
    lane_len = [ln.length for ln in layout.lanes]

    by_lane: dict[int, list[DynamicObject]] = {}
    respawn: list[DynamicObject] = []
    for o in scene.objects:
        if o.active:
            by_lane.setdefault(o.lane_index, []).append(o)
        else:
            respawn.append(o)

    new: dict[int, DynamicObject] = {}
    # lane -> rearmost object after the move, for respawn checks
    rear: dict[int, DynamicObject] = {}
    for lane_idx, objs in by_lane.items():
        objs.sort(key=lambda o: (-o.arc_position, o.id))
        leader = None
        for o in objs:
            gap = kinds[o.kind].min_gap
            speed = o.speed
            s = o.arc_position + speed * dt
            if s > lane_len[lane_idx]:
                respawn.append(o)
                continue
            if leader is not None:
                lead_back = leader.arc_position - leader.half_length
                if lead_back - (s + o.half_length) < gap:
                    speed = min(speed, leader.speed)
                    s = o.arc_position + speed * dt
                    s = min(s, lead_back - gap - o.half_length)
                    s = max(s, o.arc_position)
            moved = replace(o, arc_position=s, speed=speed)
            new[o.id] = moved
            leader = moved
        if leader is not None:
            rear[lane_idx] = leader

    for o in sorted(respawn, key=lambda o: o.id):
        spec = kinds[o.kind]
        lanes = layout.lanes_of(spec.lane_class)
        placed = None
        for _ in range(max_retries):
            cand = lanes[rng.integers(len(lanes))]
            r = rear.get(cand)
            s = o.half_length
            if r is None or (r.arc_position - r.half_length) - 2 * s >= spec.min_gap:
                placed = replace(o, lane_index=cand, arc_position=s,
                                 speed=float(rng.uniform(*spec.speed_range)),
                                 life=o.life + 1, active=True)
                rear[cand] = placed
                break
        if placed is None:
            # try again next step
            placed = replace(o, active=False, life=o.life + (1 if o.active else 0))
        new[o.id] = placed

    objects = tuple(new[o.id] for o in scene.objects)
    return replace(scene, time_index=scene.time_index + 1, objects=objects)


def bumper_gaps(scene: Scene) -> list[tuple[int, float, float]]:
    """(lane, gap, required gap) for every consecutive same-lane pair."""
    by_lane: dict[int, list[DynamicObject]] = {}
    for o in scene.objects:
        if o.active:
            by_lane.setdefault(o.lane_index, []).append(o)
    out = []
    for lane_idx, objs in by_lane.items():
        objs.sort(key=lambda o: o.arc_position)
        for a, b in zip(objs[:-1], objs[1:]):
            g = (b.arc_position - b.half_length) - (a.arc_position + a.half_length)
            need = max(scene.kinds[a.kind].min_gap, scene.kinds[b.kind].min_gap)
            out.append((lane_idx, g, need))
    return out
