import csv
import json

import numpy as np
import pytest

from beamtrack import dataset as ds
from beamtrack.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main, series_rows
from beamtrack.predictor import EpochRecord

TINY_GEN = """
[scene]
counts = {car = 4, bus = 1, human = 3}
enforce_count_ranges = false
num_antennas = 16

[dataset]
seed = 1
episodes = 1
scenes = 30
r = 4
horizons = [1, 2]
codebook_size = 16
image_width = 40
image_height = 20

[train]
epochs = 2
batch_size = 64
"""

TOY_TRAIN = """
[dataset]
horizons = [1, 3, 5]

[model]
embed_dim = 8
hidden = 8
dropout = 0.0

[train]
epochs = {epochs}
batch_size = 10
learning_rate = 0.01
depths = {depths}
horizons = {horizons}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def toy_dataset(out, horizons=(1, 3, 5), n=100, r=8, empty_val=False):
    """Random sequences; the validation file repeats the training records."""
    rng = np.random.default_rng(0)
    for N in horizons:
        d = out / "dataset" / f"N{N}"
        d.mkdir(parents=True)
        samples = [ds.Sample(i, r - 1, 0, tuple(int(b) for b in rng.integers(1, 129, r)),
                             tuple(int(b) for b in rng.integers(1, 129, N)), ("x.png",) * r)
                   for i in range(n)]
        ds.write_samples(samples, d / "train.jsonl")
        ds.write_samples([] if empty_val else samples, d / "val.jsonl")
        (d / "manifest").write_text(json.dumps({"toy": N}))


def test_generate_writes_manifest(tmp_path, capsys):
    cfg = write(tmp_path, "c.toml", TINY_GEN)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "run")]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    top = json.loads((tmp_path / "run" / "dataset" / "manifest").read_text())
    assert printed["splits"] == top["splits"]
    for split in top["splits"].values():
        assert split["counts"]["train"] > 0 and split["counts"]["val"] > 0


def test_regeneration_from_manifest_seed(tmp_path):
    cfg = write(tmp_path, "c.toml", TINY_GEN)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "7"]) == 0
    seed = json.loads((tmp_path / "a" / "dataset" / "manifest").read_text())["seed"]
    assert seed == 7
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "b"),
                 "--seed", str(seed)]) == 0
    a = (tmp_path / "a" / "dataset" / "manifest").read_bytes()
    b = (tmp_path / "b" / "dataset" / "manifest").read_bytes()
    assert a == b


def test_invalid_horizon_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, "c.toml", "[dataset]\nr = 4\nhorizons = [5]\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "N=5" in err and "r=4" in err


def test_missing_config_and_dataset_exit_2(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.toml")]) == EXIT_RUNTIME
    assert main(["train", "--out", str(tmp_path / "empty")]) == EXIT_RUNTIME


def test_train_single_cell_and_resume(tmp_path):
    toy_dataset(tmp_path)
    cfg = write(tmp_path, "t.toml", TOY_TRAIN.format(epochs=2, depths="[2]", horizons="[1]"))
    args = ["train", "--config", str(cfg), "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    runs = sorted(p.name for p in (tmp_path / "runs").iterdir())
    assert runs == ["d2_N1"]
    ckpt = tmp_path / "runs" / "d2_N1" / "model.ckpt"
    stamp = ckpt.stat().st_mtime_ns
    assert main(args + ["--resume"]) == EXIT_OK
    assert ckpt.stat().st_mtime_ns == stamp


def test_train_full_grid(tmp_path):
    toy_dataset(tmp_path, n=20)
    cfg = write(tmp_path, "t.toml", TOY_TRAIN.format(epochs=1, depths="[2, 4, 6]",
                                                     horizons="[1, 3, 5]"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    runs = sorted((tmp_path / "runs").iterdir())
    assert len(runs) == 9
    assert all((r / "metrics.csv").exists() and (r / "model.ckpt").exists() for r in runs)


def test_evaluate_memorized_model_and_sigma(tmp_path):
    toy_dataset(tmp_path, horizons=(1,))
    # default model width, which has capacity to memorize the toy split
    text = TOY_TRAIN.format(epochs=40, depths="[2]", horizons="[1]")
    text = text.replace("embed_dim = 8\nhidden = 8\n", "")
    cfg = write(tmp_path, "t.toml", text)
    base = ["--config", str(cfg), "--out", str(tmp_path)]
    assert main(["train"] + base) == EXIT_OK
    assert main(["evaluate", "--split", "train"] + base) == EXIT_OK
    rep = json.loads((tmp_path / "runs" / "d2_N1" / "eval_train.json").read_text())
    assert rep["top1"] >= 0.99
    assert rep["sigma"] == 0.5


def test_evaluate_empty_split_fails(tmp_path):
    toy_dataset(tmp_path, empty_val=True)
    cfg = write(tmp_path, "t.toml", TOY_TRAIN.format(epochs=1, depths="[2]", horizons="[1]"))
    base = ["--config", str(cfg), "--out", str(tmp_path)]
    assert main(["train"] + base) == EXIT_OK
    assert main(["evaluate"] + base) != EXIT_OK


def test_evaluate_shape_mismatch_names_both(tmp_path, capsys):
    toy_dataset(tmp_path, horizons=(1, 3))
    cfg = write(tmp_path, "t.toml", TOY_TRAIN.format(epochs=1, depths="[2]", horizons="[1]"))
    base = ["--config", str(cfg), "--out", str(tmp_path)]
    assert main(["train"] + base) == EXIT_OK
    # swap in the N=3 data under the N=1 run
    n1, n3 = tmp_path / "dataset" / "N1", tmp_path / "dataset" / "N3"
    (n1 / "val.jsonl").write_text((n3 / "val.jsonl").read_text())
    capsys.readouterr()
    assert main(["evaluate"] + base) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "(8, 1)" in err and "(8, 3)" in err


def test_report_series_and_scores(tmp_path):
    toy_dataset(tmp_path, n=30)
    cfg = write(tmp_path, "t.toml", TOY_TRAIN.format(epochs=3, depths="[2]", horizons="[1, 3, 5]"))
    base = ["--config", str(cfg), "--out", str(tmp_path)]
    assert main(["train"] + base) == EXIT_OK
    assert main(["report"] + base) == EXIT_OK
    series = (tmp_path / "report" / "series_d2.csv").read_text().splitlines()
    assert series[0] == "iteration,top1_N1,top1_N3,top1_N5"
    rows = [list(map(float, line.split(","))) for line in series[1:]]
    assert rows and all(len(r) == 4 for r in rows)
    with open(tmp_path / "report" / "scores.csv") as fh:
        table = list(csv.DictReader(fh))
    assert [int(r["N"]) for r in table] == [1, 3, 5]
    before = {p.name: p.read_bytes() for p in (tmp_path / "report").iterdir()}
    assert main(["report"] + base) == EXIT_OK
    after = {p.name: p.read_bytes() for p in (tmp_path / "report").iterdir()}
    assert before == after


def test_report_single_run(tmp_path):
    toy_dataset(tmp_path, horizons=(1,), n=20)
    cfg = write(tmp_path, "t.toml", TOY_TRAIN.format(epochs=2, depths="[2]", horizons="[1]"))
    base = ["--config", str(cfg), "--out", str(tmp_path)]
    assert main(["train"] + base) == EXIT_OK
    assert main(["report"] + base) == EXIT_OK
    lines = (tmp_path / "report" / "scores.csv").read_text().splitlines()
    assert len(lines) == 2


def test_report_without_logs_fails(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_series_rows_hold_latest_value():
    h = {1: [EpochRecord(1, 10, 0.0, 0.1, 0.1), EpochRecord(2, 20, 0.0, 0.2, 0.2)],
         3: [EpochRecord(1, 8, 0.0, 0.5, 0.5), EpochRecord(2, 16, 0.0, 0.6, 0.6)]}
    assert series_rows(h) == [[10, 0.1, 0.5], [16, 0.1, 0.6], [20, 0.2, 0.6]]


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
