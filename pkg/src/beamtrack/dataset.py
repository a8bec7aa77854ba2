"""Dataset pipeline: scenes -> paths -> channels -> beam labels -> windows.

The seed stream pairs every scene with its per-user channels and a schematic
top-view raster.  Labelling reduces each channel to the rate-optimal codebook
beam, and sliding windows over a user's uninterrupted trajectory become
(observed beams, future beams) samples that are split by user and written
as JSON lines next to a manifest.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .channel import ChannelMatrix, Codebook, build_channel, build_codebook
from .config import Config
from .oracle import OracleConfig, beam_rates
from .propagation import PropagationConfig, trace_paths
from .scene import Scene, init_scene, object_box, receiver_position, step_scene

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BACKGROUND, BUILDING, VEHICLE_PX, HUMAN_PX = 0, 64, 192, 255


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneImage:
    """Single-channel raster stored as (H, W, C) uint8, row 0 at the top."""

    pixels: np.ndarray
    time_index: int

    def save(self, path) -> None:
        Image.fromarray(self.pixels[:, :, 0], mode="L").save(path, optimize=False)


@dataclass(frozen=True)
class SeedRecord:
    episode: int
    scene: Scene
    channels: dict  # (bs index, object id) -> ChannelMatrix
    image: SceneImage


@dataclass(frozen=True)
class SceneLabels:
    """Per-scene oracle output: user id -> (life, best beam per BS, best rate per BS)."""

    episode: int
    time_index: int
    users: dict


@dataclass(frozen=True)
class ObservationSequence:
    user_id: int
    t: int
    beams: tuple
    images: tuple


@dataclass(frozen=True)
class BeamLabelSequence:
    user_id: int
    t: int
    future_beams: tuple


@dataclass(frozen=True)
class Sample:
    user_id: int
    t: int
    bs: int
    beams: tuple
    future_beams: tuple
    images: tuple

    @property
    def observation(self) -> ObservationSequence:
        return ObservationSequence(self.user_id, self.t, self.beams, self.images)

    @property
    def label(self) -> BeamLabelSequence:
        return BeamLabelSequence(self.user_id, self.t, self.future_beams)

    def to_record(self) -> dict:
        return {"user_id": self.user_id, "t": self.t, "bs": self.bs,
                "beams": list(self.beams), "future_beams": list(self.future_beams),
                "images": list(self.images)}

    @classmethod
    def from_record(cls, rec: dict) -> "Sample":
        return cls(int(rec["user_id"]), int(rec["t"]), int(rec.get("bs", 0)),
                   tuple(rec["beams"]), tuple(rec["future_beams"]), tuple(rec["images"]))


@dataclass
class SequenceData:
    """Array view of samples for training: beams (A, r), future (A, N), both 1-based."""

    beams: np.ndarray
    future: np.ndarray
    user_ids: np.ndarray

    def __len__(self):
        return len(self.beams)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], r: int | None = None,
                     N: int | None = None) -> "SequenceData":
        if not samples:
            return cls(np.zeros((0, r or 0), np.int64), np.zeros((0, N or 0), np.int64),
                       np.zeros(0, np.int64))
        return cls(np.array([s.beams for s in samples], dtype=np.int64),
                   np.array([s.future_beams for s in samples], dtype=np.int64),
                   np.array([s.user_id for s in samples], dtype=np.int64))


@dataclass(frozen=True)
class DatasetManifest:
    config: dict
    seed: int
    r: int
    N: int
    counts: dict
    files: dict
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps({"format_version": self.format_version, "seed": self.seed,
                           "r": self.r, "N": self.N, "counts": self.counts,
                           "files": self.files, "config": self.config},
                          indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["config"], d["seed"], d["r"], d["N"], d["counts"], d["files"],
                   d["format_version"])


# --------------------------------------------------------------------------
# rendering

def render_schematic(scene: Scene, width: int, height: int) -> SceneImage:
    """Orthographic top view of the layout bounding box.

    A pixel takes the largest class value among the footprints overlapping
    it with positive area: background 0, buildings 64, vehicles 192,
    humans 255.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    (x0, x1), (y0, y1) = scene.layout.bounds
    sx = (x1 - x0) / width
    sy = (y1 - y0) / height
    img = np.zeros((height, width), dtype=np.uint8)

    def paint(lo, hi, value):
        c0 = int(np.floor((lo[0] - x0) / sx))
        c1 = int(np.ceil((hi[0] - x0) / sx))
        r0 = int(np.floor((y1 - hi[1]) / sy))
        r1 = int(np.ceil((y1 - lo[1]) / sy))
        c0, c1 = max(c0, 0), min(c1, width)
        r0, r1 = max(r0, 0), min(r1, height)
        if c0 < c1 and r0 < r1:
            np.maximum(img[r0:r1, c0:c1], value, out=img[r0:r1, c0:c1])

    for b in scene.layout.buildings:
        paint(b.box.lo, b.box.hi, BUILDING)
    for o in scene.objects:
        if not o.active:
            continue
        box = object_box(o, scene.layout)
        paint(box.lo, box.hi, HUMAN_PX if o.kind == "human" else VEHICLE_PX)
    return SceneImage(img[:, :, None], scene.time_index)


# --------------------------------------------------------------------------
# seed stream

def _propagation_cfg(config: Config) -> PropagationConfig:
    p = config.propagation
    if p.max_delay is None:
        # keep every emitted path inside the cyclic prefix
        from dataclasses import replace
        p = replace(p, max_delay=config.ofdm.max_delay)
    return p


def scene_channels(scene: Scene, config: Config) -> dict:
    """Channel of every active object from every base station."""
    prop = _propagation_cfg(config)
    out = {}
    for o in scene.objects:
        if not o.active:
            continue
        rx = receiver_position(o, scene.layout)
        for bi, bs in enumerate(scene.layout.basestations):
            try:
                paths = trace_paths(scene, bs, rx, receiver_id=o.id, cfg=prop)
                out[(bi, o.id)] = build_channel(paths, config.ofdm, bs, o.id,
                                                scene.time_index, bi)
            except ValueError as exc:
                raise PipelineError(
                    f"scene {scene.time_index}, user {o.id}, bs {bi}: {exc}") from exc
    return out


def generate_seed(config: Config, rng_seed: int, episode: int = 0,
                  render: bool = True) -> Iterator[SeedRecord]:
    """Stream ``config.dataset.scenes`` consecutive scenes of one episode.

    The first record is the initial scene; each later one is one ``dt`` step
    further.  Everything is a deterministic function of the seed.
    """
    sc, d = config.scene, config.dataset
    layout = sc.layout()
    scene = init_scene(layout, sc.counts, rng_seed, enforce_ranges=sc.enforce_count_ranges)
    for i in range(d.scenes):
        if i:
            scene = step_scene(scene, sc.dt)
        image = (render_schematic(scene, d.image_width, d.image_height) if render
                 else SceneImage(np.zeros((0, 0, 1), np.uint8), scene.time_index))
        yield SeedRecord(episode, scene, scene_channels(scene, config), image)


def label_record(rec: SeedRecord, codebook: Codebook, oracle: OracleConfig) -> SceneLabels:
    n_bs = len(rec.scene.layout.basestations)
    users = {}
    for o in rec.scene.objects:
        if not o.active:
            continue
        beams, rates = [], []
        for bi in range(n_bs):
            rr = beam_rates(rec.channels[(bi, o.id)], codebook, oracle)
            k = int(np.argmax(rr))
            beams.append(k + 1)
            rates.append(float(rr[k]))
        users[o.id] = (o.life, tuple(beams), tuple(rates))
    return SceneLabels(rec.episode, rec.scene.time_index, users)


def user_key(episode: int, object_id: int) -> int:
    return episode * 100_000 + object_id


def image_name(episode: int, t: int) -> str:
    return f"images/ep{episode}/scene_{t}.png"


def build_sequences(stream: Iterable, r: int, N: int, codebook: Codebook | None = None,
                    oracle: OracleConfig | None = None, drop_blocked: bool = False) -> list[Sample]:
    """Sliding windows of r observed and N future beams per user.

    ``stream`` yields ``SceneLabels`` or ``SeedRecord`` objects (the latter
    are labelled with ``codebook``/``oracle``) in time order per episode.
    Windows crossing a reinitialisation are dropped.  Each window is served
    by the base station with the larger mean best rate over its r observed
    scenes.  With ``drop_blocked`` a window is also dropped when the serving
    station has no path to the user in any of its scenes.
    """
    if r < 1 or N < 1 or N > r:
        raise ValueError(f"need 1 <= N <= r, got N={N}, r={r}")
    labels = []
    for rec in stream:
        if isinstance(rec, SeedRecord):
            if codebook is None or oracle is None:
                raise ValueError("labelling seed records needs a codebook and oracle config")
            rec = label_record(rec, codebook, oracle)
        labels.append(rec)
    return windows_from_labels(labels, r, N, drop_blocked)


def windows_from_labels(labels: Sequence[SceneLabels], r: int, N: int,
                        drop_blocked: bool = False) -> list[Sample]:
    if r < 1 or N < 1 or N > r:
        raise ValueError(f"need 1 <= N <= r, got N={N}, r={r}")
    L = r + N
    # group into per-user runs of consecutive scenes with the same life
    runs: dict[tuple, list] = {}
    order = []
    for lab in labels:
        for oid, (life, beams, rates) in lab.users.items():
            key = (lab.episode, oid)
            run = runs.get(key)
            if run is None or run[-1][0] != life or run[-1][1] + 1 != lab.time_index:
                run = [(life, lab.time_index, beams, rates)]
                runs[key] = run
                order.append((key, run))
            else:
                run.append((life, lab.time_index, beams, rates))
    samples = []
    for (episode, oid), run in order:
        if len(run) < L:
            continue
        beams = np.array([x[2] for x in run])   # (T, n_bs)
        rates = np.array([x[3] for x in run])
        times = [x[1] for x in run]
        uid = user_key(episode, oid)
        for s in range(len(run) - L + 1):
            bs = int(np.argmax(rates[s:s + r].mean(axis=0)))
            if drop_blocked and not np.all(rates[s:s + L, bs] > 0):
                continue
            t = times[s + r - 1]
            samples.append(Sample(
                uid, t, bs,
                tuple(int(b) for b in beams[s:s + r, bs]),
                tuple(int(b) for b in beams[s + r:s + L, bs]),
                tuple(image_name(episode, times[s + i]) for i in range(r))))
    samples.sort(key=lambda x: (x.user_id, x.t))
    return samples


# --------------------------------------------------------------------------
# splitting and files

def split_users(samples: Sequence[Sample], train_fraction: float, rng_seed: int):
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    users = sorted({s.user_id for s in samples})
    perm = np.random.default_rng(rng_seed).permutation(len(users))
    n_train = int(round(train_fraction * len(users)))
    if len(users) >= 2:
        n_train = min(max(n_train, 1), len(users) - 1)
    train_users = {users[i] for i in perm[:n_train]}
    train = [s for s in samples if s.user_id in train_users]
    val = [s for s in samples if s.user_id not in train_users]
    return train, val


def write_samples(samples: Sequence[Sample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), separators=(",", ":")) + "\n")


def load_samples(path) -> list[Sample]:
    with open(path) as fh:
        return [Sample.from_record(json.loads(line)) for line in fh if line.strip()]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def split_and_write(samples: Sequence[Sample], train_fraction: float, rng_seed: int,
                    out_dir, config: dict | None = None) -> DatasetManifest:
    """User-disjoint split written as train.jsonl, val.jsonl and manifest."""
    train, val = split_users(samples, train_fraction, rng_seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_samples(train, out / "train.jsonl")
        write_samples(val, out / "val.jsonl")
    except OSError as exc:
        raise OSError(f"writing samples under {out}: {exc}") from exc
    first = samples[0] if samples else None
    r = len(first.beams) if first else 0
    N = len(first.future_beams) if first else 0
    manifest = DatasetManifest(
        config or {}, rng_seed, r, N, {"train": len(train), "val": len(val)},
        {name: file_digest(out / name) for name in ("train.jsonl", "val.jsonl")})
    (out / "manifest").write_text(manifest.to_json())
    return manifest


def load_split(directory, name: str) -> SequenceData:
    return SequenceData.from_samples(load_samples(Path(directory) / f"{name}.jsonl"))


# --------------------------------------------------------------------------
# whole pipeline

def generate_labels(config: Config, out_dir=None) -> list[SceneLabels]:
    """Run every episode, optionally writing images, and return the labels."""
    d = config.dataset
    codebook = build_codebook(config.scene.num_antennas, d.codebook_size)
    oracle = config.oracle.oracle()
    labels = []
    for ep in range(d.episodes):
        seed = int(np.random.default_rng([d.seed, ep]).integers(2**31))
        img_dir = None
        if out_dir is not None and d.write_images:
            img_dir = Path(out_dir) / "images" / f"ep{ep}"
            img_dir.mkdir(parents=True, exist_ok=True)
        for rec in generate_seed(config, seed, ep, render=img_dir is not None):
            if img_dir is not None:
                rec.image.save(img_dir / f"scene_{rec.scene.time_index}.png")
            labels.append(label_record(rec, codebook, oracle))
        log.info("episode %d done (%d scenes)", ep, d.scenes)
    return labels


def generate_dataset(config: Config, out_dir) -> dict:
    """Full generation; writes N<n>/ splits and a top-level manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = generate_labels(config, out)
    d = config.dataset
    snapshot = config.to_dict()
    per_n = {}
    for n in d.horizons:
        samples = windows_from_labels(labels, d.r, n, d.drop_blocked)
        m = split_and_write(samples, d.train_fraction, d.seed, out / f"N{n}", snapshot)
        per_n[f"N{n}"] = {"counts": m.counts, "files": m.files}
    top = {"format_version": FORMAT_VERSION, "seed": d.seed, "config": snapshot,
           "splits": per_n}
    (out / "manifest").write_text(json.dumps(top, indent=2, sort_keys=True) + "\n")
    return top
