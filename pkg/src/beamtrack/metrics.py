"""Evaluation metrics for predicted beam sequences."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class EvalReport:
    top1: float
    score: float
    sample_count: int
    horizon: int
    sigma: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("samples", str(self.sample_count)), ("horizon", str(self.horizon)),
                ("sigma", f"{self.sigma:g}"), ("top1", f"{self.top1:.4f}"),
                ("score", f"{self.score:.4f}")]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows) + "\n"


def _pair(preds, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    if p.ndim == 1:
        p = p[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} does not match truth shape {t.shape}")
    if p.shape[0] == 0:
        raise ValueError("no samples to evaluate")
    return p, t


def top1_accuracy(preds, truths) -> float:
    """Fraction of samples whose whole predicted sequence matches exactly."""
    p, t = _pair(preds, truths)
    return float(np.mean(np.all(p == t, axis=1)))


def exp_decay_score(preds, truths, sigma: float = 0.5) -> float:
    """Mean of exp(-||g_hat - g*||_1 / (n sigma)) over samples."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    p, t = _pair(preds, truths)
    n = p.shape[1]
    dist = np.abs(p - t).sum(axis=1)
    return float(np.mean(np.exp(-dist / (n * sigma))))


def evaluate(preds, truths, sigma: float = 0.5) -> EvalReport:
    p, t = _pair(preds, truths)
    return EvalReport(top1_accuracy(p, t), exp_decay_score(p, t, sigma),
                      p.shape[0], p.shape[1], float(sigma))
