"""Command-line front end: generate, train, evaluate, report.

Every command reads the same TOML config (``--config``; defaults otherwise)
and works under one output root (``--out``)::

    <out>/dataset/                      generate: N<n>/{train,val}.jsonl, images/, manifest
    <out>/runs/d<Q>_N<n>/               train: model.ckpt, metrics.csv, done.json
                                        evaluate: eval_<split>.json, eval_<split>.txt
    <out>/report/                       report: series_d<Q>.csv, scores.csv, scores.txt

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime or I/O
failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import dataset as ds
from .config import Config, ConfigError, load_config, validate
from .metrics import evaluate
from .predictor import (EpochRecord, ModelConfig, ModelError, TrainConfig, TrainingDiverged,
                        load_checkpoint, predict, save_checkpoint, train)

log = logging.getLogger("beamtrack")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
METRIC_FIELDS = ("epoch", "iteration", "train_loss", "val_top1", "val_score")


class InputError(ValueError):
    """Bad user input discovered after config validation (exit code 1)."""


# --------------------------------------------------------------------------
# paths and config

def dataset_dir(out: Path) -> Path:
    return out / "dataset"


def run_dir(out: Path, depth: int, n: int) -> Path:
    return out / "runs" / f"d{depth}_N{n}"


def report_dir(out: Path) -> Path:
    return out / "report"


def resolve_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        if args.command == "generate":
            cfg = cfg.with_seed(args.seed)
        else:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    validate(cfg)
    return cfg


def grid(cfg: Config) -> list[tuple[int, int]]:
    return [(q, n) for q in cfg.train.depths for n in cfg.train_horizons]


def model_config(cfg: Config, depth: int, n: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(r=cfg.dataset.r, N=n, embed_dim=m.embed_dim, hidden=m.hidden,
                       depth=depth, codebook_size=cfg.dataset.codebook_size, dropout=m.dropout)


def train_config(cfg: Config) -> TrainConfig:
    t = cfg.train
    return TrainConfig(learning_rate=t.learning_rate, batch_size=t.batch_size,
                       epochs=t.epochs, seed=t.seed, sigma=cfg.eval.sigma)


# --------------------------------------------------------------------------
# metrics logs

def write_metrics(history: list[EpochRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for rec in history:
            w.writerow([rec.epoch, rec.iteration, repr(float(rec.train_loss)),
                        repr(float(rec.val_top1)), repr(float(rec.val_score))])


def read_metrics(path: Path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), int(r["iteration"]), float(r["train_loss"]),
                        float(r["val_top1"]), float(r["val_score"])) for r in rows]


def best_record(history: list[EpochRecord]) -> EpochRecord:
    """First epoch with the highest validation top-1; the one train() keeps."""
    best = history[0]
    for rec in history[1:]:
        if rec.val_top1 > best.val_top1:
            best = rec
    return best


# --------------------------------------------------------------------------
# commands

def cmd_generate(cfg: Config, out: Path) -> dict:
    manifest = ds.generate_dataset(cfg, dataset_dir(out))
    print(json.dumps({"seed": manifest["seed"], "splits": manifest["splits"]},
                     indent=2, sort_keys=True))
    return manifest


def _load_training_split(out: Path, n: int):
    d = dataset_dir(out) / f"N{n}"
    if not (d / "manifest").exists():
        raise FileNotFoundError(f"no dataset for N={n} under {d}; run 'generate' first")
    return ds.load_split(d, "train"), ds.load_split(d, "val"), (d / "manifest").read_text()


def cmd_train(cfg: Config, out: Path, resume: bool = False) -> list[Path]:
    done = []
    for depth, n in grid(cfg):
        rd = run_dir(out, depth, n)
        mcfg, tcfg = model_config(cfg, depth, n), train_config(cfg)
        tr, va, manifest_text = _load_training_split(out, n)
        stamp = {"model": dataclasses.asdict(mcfg), "train": dataclasses.asdict(tcfg),
                 "dataset": hashlib.sha256(manifest_text.encode()).hexdigest()}
        marker = rd / "done.json"
        if resume and marker.exists() and json.loads(marker.read_text()) == stamp:
            log.info("d%d N%d already trained, skipping", depth, n)
            done.append(rd)
            continue
        if len(tr) == 0:
            raise InputError(f"training split for N={n} is empty")
        rd.mkdir(parents=True, exist_ok=True)
        marker.unlink(missing_ok=True)
        log.info("training depth %d, N=%d on %d sequences", depth, n, len(tr))
        model, history = train(tr, va if len(va) else None, mcfg, tcfg)
        save_checkpoint(model, rd / "model.ckpt")
        write_metrics(history, rd / "metrics.csv")
        marker.write_text(json.dumps(stamp, indent=2, sort_keys=True) + "\n")
        done.append(rd)
    return done


def cmd_evaluate(cfg: Config, out: Path, split: str = "val") -> list:
    reports = []
    for depth, n in grid(cfg):
        rd = run_dir(out, depth, n)
        ckpt = rd / "model.ckpt"
        if not ckpt.exists():
            raise FileNotFoundError(f"missing checkpoint {ckpt}; run 'train' first")
        model = load_checkpoint(ckpt)
        data_path = dataset_dir(out) / f"N{n}" / f"{split}.jsonl"
        if not data_path.exists():
            raise FileNotFoundError(f"missing split {data_path}")
        data = ds.load_split(data_path.parent, split)
        if len(data) == 0:
            raise InputError(f"{split} split for N={n} is empty")
        want = (model.config.r, model.config.N)
        have = (data.beams.shape[1], data.future.shape[1])
        if want != have:
            raise InputError(f"checkpoint expects (r, N) = {want} but {data_path} "
                             f"holds (r, N) = {have}")
        report = evaluate(predict(data.beams, model), data.future, cfg.eval.sigma)
        (rd / f"eval_{split}.json").write_text(report.to_json() + "\n")
        (rd / f"eval_{split}.txt").write_text(report.to_table())
        print(f"d{depth} N{n} {split}: top1 {report.top1:.4f} score {report.score:.4f}")
        reports.append(report)
    return reports


def series_rows(histories: dict[int, list[EpochRecord]]) -> list[list[float]]:
    """Accuracy-vs-iteration rows on the union of evaluation iterations.

    Each column holds the latest validation top-1 of its run at or before the
    row's iteration; rows start once every run has reported once.
    """
    horizons = sorted(histories)
    start = max(h[0].iteration for h in histories.values())
    its = sorted({r.iteration for h in histories.values() for r in h if r.iteration >= start})
    rows = []
    for it in its:
        row = [it]
        for n in horizons:
            val = [r.val_top1 for r in histories[n] if r.iteration <= it][-1]
            row.append(val)
        rows.append(row)
    return rows


def cmd_report(cfg: Config, out: Path) -> list[Path]:
    rep = report_dir(out)
    rep.mkdir(parents=True, exist_ok=True)
    written, scores = [], []
    for depth in cfg.train.depths:
        histories = {}
        for n in cfg.train_horizons:
            path = run_dir(out, depth, n) / "metrics.csv"
            if not path.exists():
                raise FileNotFoundError(f"missing metrics log {path}; run 'train' first")
            histories[n] = read_metrics(path)
            if not histories[n]:
                raise InputError(f"metrics log {path} is empty")
            best = best_record(histories[n])
            scores.append((depth, n, best.epoch, best.val_top1, best.val_score))
        path = rep / f"series_d{depth}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration"] + [f"top1_N{n}" for n in sorted(histories)])
            for row in series_rows(histories):
                w.writerow([row[0]] + [f"{v:.6f}" for v in row[1:]])
        written.append(path)
    with open(rep / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth", "N", "epoch", "top1", "score"])
        for depth, n, epoch, top1, score in scores:
            w.writerow([depth, n, epoch, f"{top1:.6f}", f"{score:.6f}"])
    lines = [f"{'depth':>5}  {'N':>3}  {'epoch':>5}  {'top1':>7}  {'score':>7}"]
    lines += [f"{d:>5}  {n:>3}  {e:>5}  {t:>7.4f}  {s:>7.4f}" for d, n, e, t, s in scores]
    (rep / "scores.txt").write_text("\n".join(lines) + "\n")
    print((rep / "scores.txt").read_text(), end="")
    return written + [rep / "scores.csv", rep / "scores.txt"]


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, default=Path("run"), help="output root (default: run)")
    common.add_argument("--seed", type=int, help="dataset seed for generate, training seed otherwise")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    p = argparse.ArgumentParser(prog="beamtrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="generate the sequence dataset")
    t = sub.add_parser("train", parents=[common], help="train every (depth, N) cell")
    t.add_argument("--resume", action="store_true",
                   help="skip cells already trained with the same settings")
    e = sub.add_parser("evaluate", parents=[common], help="evaluate trained checkpoints")
    e.add_argument("--split", choices=("val", "train"), default="val")
    sub.add_parser("report", parents=[common], help="write accuracy series and score tables")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            cmd_generate(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.out, args.resume)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.out, args.split)
        else:
            cmd_report(cfg, args.out)
    except (ConfigError, InputError, ModelError) as exc:
        print(f"beamtrack: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ds.PipelineError, TrainingDiverged, ValueError) as exc:
        print(f"beamtrack: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
