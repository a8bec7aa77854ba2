import json
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from beamtrack import dataset as ds
from beamtrack.channel import build_codebook
from beamtrack.config import Config, DatasetConfig, SceneConfig
from beamtrack.oracle import optimal_beam
from beamtrack.scene import DEFAULT_KINDS, DynamicObject, Scene, default_layout, object_box


def tiny_config(scenes=30, episodes=1, **scene_kw):
    sc = dict(counts={"car": 4, "bus": 1, "human": 3}, enforce_count_ranges=False, num_antennas=16)
    sc.update(scene_kw)
    return Config(scene=SceneConfig(**sc),
                  dataset=DatasetConfig(seed=3, episodes=episodes, scenes=scenes, r=4,
                                        horizons=(1, 2), codebook_size=16, image_width=40,
                                        image_height=20))


def labels_for(n_scenes, oid=0, life_at=None, rates=(1.0, 0.5), episode=0):
    out = []
    for t in range(n_scenes):
        life = 1 if life_at is not None and t >= life_at else 0
        out.append(ds.SceneLabels(episode, t, {oid: (life, (t % 7 + 1, 3), rates)}))
    return out


def test_single_user_empty_street():
    cfg = tiny_config(scenes=1, counts={"car": 1}, buildings=[])
    recs = list(ds.generate_seed(cfg, 5))
    assert len(recs) == 1
    rec = recs[0]
    assert len(rec.channels) == 2  # one per base station
    assert rec.image.pixels.shape == (20, 40, 1)
    for ch in rec.channels.values():
        assert ch.h.shape == (64, 16) and np.abs(ch.h).max() > 0


def test_seed_stream_is_deterministic():
    cfg = tiny_config(scenes=5)
    a = list(ds.generate_seed(cfg, 9))
    b = list(ds.generate_seed(cfg, 9))
    for x, y in zip(a, b):
        assert x.scene.objects == y.scene.objects
        np.testing.assert_array_equal(x.image.pixels, y.image.pixels)
        for k in x.channels:
            assert x.channels[k].h.tobytes() == y.channels[k].h.tobytes()


def test_labels_equal_per_scene_recomputation():
    cfg = tiny_config(scenes=40)
    cb = build_codebook(16, 16)
    oracle = cfg.oracle.oracle()
    checked = 0
    for rec in ds.generate_seed(cfg, 2, render=False):
        lab = ds.label_record(rec, cb, oracle)
        for oid, (life, beams, rates) in lab.users.items():
            for bi in range(2):
                ref = optimal_beam(rec.channels[(bi, oid)], cb, oracle)
                assert beams[bi] == ref.beam_index
                assert rates[bi] == pytest.approx(ref.rate, rel=1e-12)
                checked += 1
    assert checked >= 40 * 8 * 2 * 0.9


def test_window_counts():
    assert len(ds.windows_from_labels(labels_for(13), 8, 5)) == 1
    assert len(ds.windows_from_labels(labels_for(12), 8, 5)) == 0
    assert len(ds.windows_from_labels(labels_for(20), 8, 1)) == 12
    for T in range(1, 30):
        for r, n in ((8, 1), (8, 3), (8, 5), (3, 2)):
            assert len(ds.windows_from_labels(labels_for(T), r, n)) == max(0, T - (r + n) + 1)


def test_windows_break_at_reinitialization():
    # life changes at scene 10: runs of 10 and 10 scenes, each gives 10 - 9 + 1
    samples = ds.windows_from_labels(labels_for(20, life_at=10), 8, 1)
    assert len(samples) == 4
    for s in samples:
        assert s.t + 1 < 10 or s.t - 7 >= 10


def test_window_contents_and_integrity():
    samples = ds.windows_from_labels(labels_for(15), 8, 3)
    s = samples[0]
    assert s.beams == tuple(t % 7 + 1 for t in range(8))
    assert s.future_beams == tuple(t % 7 + 1 for t in range(8, 11))
    assert s.t == 7 and s.bs == 0
    assert s.images == tuple(ds.image_name(0, t) for t in range(8))
    for s in samples:
        times = [int(p.split("_")[-1].split(".")[0]) for p in s.images]
        assert times == list(range(s.t - 7, s.t + 1))


def test_serving_station_by_mean_rate():
    s = ds.windows_from_labels(labels_for(9, rates=(0.2, 0.9)), 8, 1)[0]
    assert s.bs == 1 and s.beams == (3,) * 8


def test_blocked_windows_dropped():
    labels = labels_for(12)
    labels[10].users[0] = (0, (1, 3), (0.0, 0.5))
    kept = ds.windows_from_labels(labels, 8, 1, drop_blocked=True)
    assert len(ds.windows_from_labels(labels, 8, 1)) == 4
    # scene 10 lies inside the windows anchored at t = 9 and t = 10
    assert [s.t for s in kept] == [7, 8]


def test_invalid_horizon():
    with pytest.raises(ValueError):
        ds.windows_from_labels(labels_for(20), 4, 5)


def test_user_disjoint_split():
    samples = [ds.Sample(u, t, 0, (1,) * 8, (2,), ("x",) * 8) for u in range(100) for t in range(3)]
    train, val = ds.split_users(samples, 0.8, 0)
    tr_users = {s.user_id for s in train}
    va_users = {s.user_id for s in val}
    assert len(tr_users) == 80 and len(va_users) == 20
    assert not tr_users & va_users
    assert len(train) == 240
    with pytest.raises(ValueError):
        ds.split_users(samples, 1.0, 0)


def test_samples_round_trip(tmp_path):
    samples = ds.windows_from_labels(labels_for(15), 8, 3)
    ds.write_samples(samples, tmp_path / "s.jsonl")
    assert ds.load_samples(tmp_path / "s.jsonl") == samples
    rec = json.loads((tmp_path / "s.jsonl").read_text().splitlines()[0])
    assert set(rec) >= {"user_id", "t", "beams", "future_beams", "images"}
    assert len(rec["beams"]) == 8 and len(rec["images"]) == 8


def test_render_empty_scene_shows_buildings_only():
    lay = default_layout()
    img = ds.render_schematic(Scene(0, (), lay, DEFAULT_KINDS, 0), 160, 90).pixels
    assert img.shape == (90, 160, 1) and img.dtype == np.uint8
    assert set(np.unique(img)) == {ds.BACKGROUND, ds.BUILDING}


def test_render_car_block():
    lay = default_layout(buildings=[])
    lane = lay.lanes_of("vehicle")[0]
    car = DynamicObject(0, "car", (4.5, 2.0, 1.5), lane, 100.0, 10.0)
    W, H = 430, 215  # about one metre per pixel
    img = ds.render_schematic(Scene(0, (car,), lay, DEFAULT_KINDS, 0), W, H).pixels[:, :, 0]
    box = object_box(car, lay)
    (x0, x1), (y0, y1) = lay.bounds
    sx, sy = (x1 - x0) / W, (y1 - y0) / H
    c0, c1 = int(np.floor((box.lo[0] - x0) / sx)), int(np.ceil((box.hi[0] - x0) / sx))
    r0, r1 = int(np.floor((y1 - box.hi[1]) / sy)), int(np.ceil((y1 - box.lo[1]) / sy))
    assert (img[r0:r1, c0:c1] == ds.VEHICLE_PX).all()
    outside = img.copy()
    outside[r0:r1, c0:c1] = 0
    assert not outside.any()


def test_render_single_pixel_takes_max_class():
    lay = default_layout()
    lane = lay.lanes_of("pedestrian")[0]
    human = DynamicObject(0, "human", (0.5, 0.5, 1.7), lane, 30.0, 1.0)
    img = ds.render_schematic(Scene(0, (human,), lay, DEFAULT_KINDS, 0), 1, 1).pixels
    assert img.shape == (1, 1, 1) and img[0, 0, 0] == ds.HUMAN_PX


def test_generate_dataset_files_and_determinism(tmp_path):
    cfg = tiny_config(scenes=25)
    m1 = ds.generate_dataset(cfg, tmp_path / "a")
    m2 = ds.generate_dataset(cfg, tmp_path / "b")
    assert m1 == m2
    top = json.loads((tmp_path / "a" / "manifest").read_text())
    assert top["format_version"] == 1 and top["config"]["dataset"]["r"] == 4
    for n in (1, 2):
        sub = tmp_path / "a" / f"N{n}"
        man = ds.DatasetManifest.load(sub / "manifest")
        assert man.counts["train"] > 0 and man.counts["val"] > 0
        assert man.files["train.jsonl"] == ds.file_digest(sub / "train.jsonl")
        assert (sub / "train.jsonl").read_bytes() == (tmp_path / "b" / f"N{n}" / "train.jsonl").read_bytes()
    first = ds.load_samples(tmp_path / "a" / "N2" / "train.jsonl")[0]
    png = tmp_path / "a" / first.images[0]
    with Image.open(png) as im:
        assert im.mode == "L" and im.size == (40, 20)
    assert png.read_bytes() == (tmp_path / "b" / first.images[0]).read_bytes()


def test_label_consistency_with_stored_channels():
    cfg = tiny_config(scenes=14)
    cb = build_codebook(16, 16)
    oracle = cfg.oracle.oracle()
    recs = list(ds.generate_seed(cfg, 4, render=False))
    samples = ds.build_sequences(recs, 4, 2, cb, oracle)
    assert samples
    by_time = {r.scene.time_index: r for r in recs}
    for s in samples:
        oid = s.user_id % 100_000
        for i, beam in enumerate(s.future_beams):
            ch = by_time[s.t + 1 + i].channels[(s.bs, oid)]
            assert beam == optimal_beam(ch, cb, oracle).beam_index


def test_episode_seeds_differ():
    cfg = replace(tiny_config(scenes=3, episodes=2))
    labels = ds.generate_labels(cfg)
    eps = [lab.episode for lab in labels]
    assert eps == [0, 0, 0, 1, 1, 1]
    assert labels[0].users != labels[3].users
