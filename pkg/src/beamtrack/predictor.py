"""Beams-only recurrent predictor.

An embedding table turns each past beam index into a vector, Q stacked GRU
layers run over the r embedded beams, and the last N outputs of the top layer
are each projected to |F| logits and soft-maxed.  Forward, backward
(backpropagation through time) and Adam are written directly in numpy.

Beam indices are 1-based at this module's boundary and 0-based inside.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .metrics import exp_decay_score, top1_accuracy

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class ModelError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    r: int = 8
    N: int = 1
    embed_dim: int = 50
    hidden: int = 20
    depth: int = 2
    codebook_size: int = 128
    dropout: float = 0.2

    def __post_init__(self):
        for name in ("r", "N", "embed_dim", "hidden", "depth", "codebook_size"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.N > self.r:
            raise ModelError(f"horizon N={self.N} exceeds input length r={self.r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1000
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    sigma: float = 0.5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in checkpoint order."""
    H, F = cfg.hidden, cfg.codebook_size
    shapes: dict[str, tuple[int, ...]] = {"embedding": (F, cfg.embed_dim)}
    for layer in range(cfg.depth):
        n_in = cfg.embed_dim if layer == 0 else H
        # gate columns are ordered update | reset | candidate
        shapes[f"gru{layer}.Wx"] = (n_in, 3 * H)
        shapes[f"gru{layer}.Wh"] = (H, 3 * H)
        shapes[f"gru{layer}.b"] = (3 * H,)
    shapes["proj.W"] = (H, F)
    shapes["proj.b"] = (F,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    H, F, D, Q = cfg.hidden, cfg.codebook_size, cfg.embed_dim, cfg.depth
    return F * D + 3 * H * (D + H + 1) + (Q - 1) * 3 * H * (2 * H + 1) + H * F + F


@dataclass
class PredictorModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if list(self.params) != list(shapes):
            raise ModelError("parameter names do not match the configuration")
        for k, s in shapes.items():
            if self.params[k].shape != s:
                raise ModelError(f"{k}: shape {self.params[k].shape}, expected {s}")

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "PredictorModel":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(cfg.hidden)
        params = {}
        for k, s in param_shapes(cfg).items():
            if k == "embedding":
                params[k] = rng.standard_normal(s) / np.sqrt(cfg.embed_dim)
            else:
                params[k] = rng.uniform(-bound, bound, s)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "PredictorModel":
        return cls(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})

    def copy(self) -> "PredictorModel":
        return PredictorModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    @property
    def size(self) -> int:
        return sum(v.size for v in self.params.values())


@dataclass
class PredictionOutput:
    probabilities: np.ndarray  # (B, N, |F|)
    indices: np.ndarray        # (B, N), 1-based


@dataclass
class ForwardCache:
    beams: np.ndarray
    layers: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    inputs: list = field(default_factory=list)  # layer outputs after dropout
    top: np.ndarray | None = None
    probs: np.ndarray | None = None


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_beams(beams, F: int) -> np.ndarray:
    b = np.asarray(beams)
    if b.ndim == 1:
        b = b[None, :]
    if not np.issubdtype(b.dtype, np.integer):
        raise ModelError("beam indices must be integers")
    if b.size and (b.min() < 1 or b.max() > F):
        raise ModelError(f"beam indices must lie in [1, {F}]")
    return b.astype(np.int64) - 1


def embed(beams, model: PredictorModel) -> np.ndarray:
    """Rows of the embedding table for 1-based ``beams``; shape (..., r, D)."""
    b = np.asarray(beams)
    idx = _check_beams(b, model.config.codebook_size)
    out = model.params["embedding"][idx]
    return out[0] if b.ndim == 1 else out


def _gru_layer(ax, Wh):
    """Run one GRU layer over input pre-activations ``ax`` of shape (r, B, 3H).

    Arrays are time-major; returns the outputs (r, B, H) and a cache.
    """
    r, B, _ = ax.shape
    H = Wh.shape[0]
    h = np.zeros((B, H))
    hs = np.empty((r, B, H))
    zs = np.empty((r, B, H))
    rs = np.empty((r, B, H))
    ns = np.empty((r, B, H))
    Wzr, Wn = Wh[:, :2 * H], Wh[:, 2 * H:]
    for t in range(r):
        zr = _sigmoid(ax[t, :, :2 * H] + h @ Wzr)
        z, rg = zr[:, :H], zr[:, H:]
        n = np.tanh(ax[t, :, 2 * H:] + (rg * h) @ Wn)
        h = n + z * (h - n)
        hs[t], zs[t], rs[t], ns[t] = h, z, rg, n
    return hs, (hs, zs, rs, ns)


def _gru_layer_backward(dhs, cache, Wh):
    """Gradients w.r.t. the input pre-activations and the recurrent weights."""
    hs, zs, rs, ns = cache
    r, B, H = hs.shape
    Wzr_T, Wn_T = Wh[:, :2 * H].T.copy(), Wh[:, 2 * H:].T.copy()
    dWh = np.zeros_like(Wh)
    dax = np.empty((r, B, 3 * H))
    dh_next = np.zeros((B, H))
    zero = np.zeros((B, H))
    for t in reversed(range(r)):
        h_prev = hs[t - 1] if t > 0 else zero
        z, rg, n = zs[t], rs[t], ns[t]
        dh = dhs[t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dax[t, :, 2 * H:]
        np.multiply(dn, 1.0 - n * n, out=dan)
        dWh[:, 2 * H:] += (rg * h_prev).T @ dan
        drh = dan @ Wn_T
        dzr = dax[t, :, :2 * H]
        np.multiply(dz, z * (1.0 - z), out=dzr[:, :H])
        np.multiply(drh * h_prev, rg * (1.0 - rg), out=dzr[:, H:])
        dWh[:, :2 * H] += h_prev.T @ dzr
        dh_next = dh * z + drh * rg + dzr @ Wzr_T
    return dax, dWh


def _scatter_rows(idx: np.ndarray, rows: np.ndarray, F: int) -> np.ndarray:
    """Sum ``rows`` into an (F, cols) array by row index ``idx``."""
    M = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))),
                          shape=(F, idx.size))
    return np.asarray(M @ rows)


def _forward(beams, model: PredictorModel, train: bool, rng, masks=None):
    cfg, p = model.config, model.params
    idx = _check_beams(beams, cfg.codebook_size)
    if idx.shape[1] != cfg.r:
        raise ModelError(f"expected sequences of length r={cfg.r}, got {idx.shape[1]}")
    cache = ForwardCache(idx)
    B = idx.shape[0]
    x = None
    for layer in range(cfg.depth):
        Wx, b = p[f"gru{layer}.Wx"], p[f"gru{layer}.b"]
        if layer == 0:
            # embedding lookup and input projection commute
            ax = (p["embedding"] @ Wx + b)[idx.T]
        else:
            ax = (x.reshape(cfg.r * B, -1) @ Wx + b).reshape(cfg.r, B, -1)
        hs, c = _gru_layer(ax, p[f"gru{layer}.Wh"])
        x = hs
        cache.layers.append(c)
        if layer < cfg.depth - 1:
            mask = None
            if masks is not None:
                mask = masks[layer]
            elif train and cfg.dropout > 0:
                keep = 1.0 - cfg.dropout
                mask = (rng.random(hs.shape) < keep) / keep
            cache.masks.append(mask)
            if mask is not None:
                x = hs * mask
        cache.inputs.append(x)
    top = x[cfg.r - cfg.N:].transpose(1, 0, 2)
    logits = top @ p["proj.W"] + p["proj.b"]
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=-1, keepdims=True)
    cache.top, cache.probs = top, probs
    return probs, cache


def forward(beams, model: PredictorModel, mode: str = "eval",
            rng: np.random.Generator | None = None) -> PredictionOutput:
    """Predict N future beams from r past beams (1-based, shape (B, r) or (r,))."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if mode == "train" and rng is None:
        rng = np.random.default_rng()
    probs, _ = _forward(beams, model, mode == "train", rng)
    return PredictionOutput(probs, np.argmax(probs, axis=-1) + 1)


def loss(outputs, targets) -> float:
    """Cross-entropy averaged over the N predicted beams and over the batch."""
    probs = outputs.probabilities if isinstance(outputs, PredictionOutput) else outputs
    probs = np.asarray(probs)
    if probs.ndim == 2:
        probs = probs[None]
    t = np.asarray(targets, dtype=np.int64).reshape(probs.shape[0], -1) - 1
    if t.shape[1] != probs.shape[1]:
        raise ModelError(f"target horizon {t.shape[1]} does not match output horizon {probs.shape[1]}")
    picked = np.take_along_axis(probs, t[..., None], axis=-1)[..., 0]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def backward(beams, targets, model: PredictorModel, train: bool = False,
             rng: np.random.Generator | None = None, masks=None):
    """Loss and exact gradients for one batch.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.params``.
    Dropout masks may be passed explicitly (one per inter-layer gap, each of
    shape (r, B, hidden)) to make
    the training-mode loss a deterministic function of the parameters.
    """
    cfg, p = model.config, model.params
    if train and rng is None and masks is None:
        rng = np.random.default_rng()
    probs, cache = _forward(beams, model, train, rng, masks)
    B, N, F = probs.shape
    t = np.asarray(targets, dtype=np.int64).reshape(B, -1) - 1
    if t.shape[1] != N:
        raise ModelError(f"target horizon {t.shape[1]} does not match model horizon {N}")
    picked = np.take_along_axis(probs, t[..., None], axis=-1)[..., 0]
    value = float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))

    # d/dlogits of -log(max(z_target, eps)); zero where the clamp is active
    dlogits = probs.copy()
    np.put_along_axis(dlogits, t[..., None],
                      np.take_along_axis(dlogits, t[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (picked >= LOG_CLAMP)[..., None] / (B * N)

    grads: dict[str, np.ndarray] = {}
    top = cache.top
    grads["proj.W"] = top.reshape(-1, top.shape[-1]).T @ dlogits.reshape(-1, F)
    grads["proj.b"] = dlogits.sum(axis=(0, 1))
    dx = np.zeros((cfg.r, B, cfg.hidden))
    dx[cfg.r - N:] = (dlogits @ p["proj.W"].T).transpose(1, 0, 2)

    layer_grads = {}
    for layer in reversed(range(cfg.depth)):
        if layer < cfg.depth - 1 and cache.masks[layer] is not None:
            dx = dx * cache.masks[layer]
        Wx, Wh = p[f"gru{layer}.Wx"], p[f"gru{layer}.Wh"]
        dax, dWh = _gru_layer_backward(dx, cache.layers[layer], Wh)
        flat = dax.reshape(cfg.r * B, -1)
        db = flat.sum(axis=0)
        if layer == 0:
            S = _scatter_rows(cache.beams.T.ravel(), flat, cfg.codebook_size)
            dWx = p["embedding"].T @ S
            grads["embedding"] = S @ Wx.T
        else:
            x_in = cache.inputs[layer - 1].reshape(cfg.r * B, -1)
            dWx = x_in.T @ flat
            dx = (flat @ Wx.T).reshape(cfg.r, B, -1)
        layer_grads[layer] = (dWx, dWh, db)

    for layer in range(cfg.depth):
        grads[f"gru{layer}.Wx"], grads[f"gru{layer}.Wh"], grads[f"gru{layer}.b"] = layer_grads[layer]
    return value, {k: grads[k] for k in p}


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict(beams, model: PredictorModel, chunk: int = 4096) -> np.ndarray:
    """1-based predicted indices, shape (B, N), evaluated in eval mode."""
    beams = np.asarray(beams)
    out = [forward(beams[i:i + chunk], model).indices for i in range(0, len(beams), chunk)]
    if not out:
        return np.zeros((0, model.config.N), dtype=np.int64)
    return np.concatenate(out)


@dataclass
class EpochRecord:
    epoch: int
    iteration: int
    train_loss: float
    val_top1: float
    val_score: float


def train(train_set, val_set, model_cfg: ModelConfig, train_cfg: TrainConfig,
          model: PredictorModel | None = None):
    """Fit the predictor with Adam on shuffled mini-batches.

    ``train_set`` and ``val_set`` are ``(beams, future_beams)`` pairs of
    integer arrays with shapes (A, r) and (A, N), or objects exposing
    ``beams`` and ``future`` attributes.  Returns the model with the best
    validation top-1 seen at any epoch end, and the per-epoch records.
    """
    xb, yb = _unpack(train_set)
    xv, yv = _unpack(val_set) if val_set is not None else (None, None)
    if len(xb) == 0:
        raise ValueError("training set is empty")
    if model is None:
        model = PredictorModel.init(model_cfg, train_cfg.seed)
    elif model.config != model_cfg:
        raise ModelError("model configuration does not match model_cfg")
    opt = Adam(model.params, train_cfg.learning_rate, train_cfg.beta1,
               train_cfg.beta2, train_cfg.eps)
    best, best_top1 = model.copy(), -1.0
    history: list[EpochRecord] = []
    iteration = 0
    A, B = len(xb), train_cfg.batch_size
    for epoch in range(1, train_cfg.epochs + 1):
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(A)
        drop_rng = np.random.default_rng([train_cfg.seed, epoch, 1])
        total = 0.0
        for bi, start in enumerate(range(0, A, B)):
            sel = order[start:start + B]
            value, grads = backward(xb[sel], yb[sel], model, train=True, rng=drop_rng)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.step(model.params, grads)
            total += value * len(sel)
            iteration += 1
        if xv is not None and len(xv):
            pred = predict(xv, model)
            top1 = top1_accuracy(pred, yv)
            score = exp_decay_score(pred, yv, train_cfg.sigma)
        else:
            top1 = score = float("nan")
        history.append(EpochRecord(epoch, iteration, total / A, top1, score))
        log.info("epoch %d loss %.4f val top1 %.4f score %.4f", epoch, total / A, top1, score)
        if xv is None or not len(xv) or top1 > best_top1:
            best, best_top1 = model.copy(), top1
    return best, history


def _unpack(data):
    if hasattr(data, "beams"):
        return np.asarray(data.beams), np.asarray(data.future)
    x, y = data
    return np.asarray(x), np.asarray(y)


# --------------------------------------------------------------------------
# checkpoint: b"BTCK", then little-endian int32 version, r, N, embed_dim,
# hidden, depth, codebook_size, dropout in parts per million and the total
# parameter count; then every parameter as float64 in param_shapes() order,
# each array flattened row-major.

MAGIC = b"BTCK"
VERSION = 1
_CK_HEADER = struct.Struct("<4s9i")


def save_checkpoint(model: PredictorModel, path) -> None:
    c = model.config
    header = _CK_HEADER.pack(MAGIC, VERSION, c.r, c.N, c.embed_dim, c.hidden, c.depth,
                             c.codebook_size, int(round(c.dropout * 1e6)), model.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> PredictorModel:
    raw = Path(path).read_bytes()
    magic, version, r, N, D, H, Q, F, drop, count = _CK_HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ModelError(f"{path}: not a predictor checkpoint")
    if version != VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    cfg = ModelConfig(r, N, D, H, Q, F, drop / 1e6)
    flat = np.frombuffer(raw, dtype="<f8", offset=_CK_HEADER.size)
    if flat.size != count or count != param_count(cfg):
        raise ModelError(f"{path}: parameter count {flat.size} does not match header")
    params, pos = {}, 0
    for k, s in param_shapes(cfg).items():
        n = int(np.prod(s))
        params[k] = flat[pos:pos + n].reshape(s).astype(float)
        pos += n
    return PredictorModel(cfg, params)


def config_dict(cfg) -> dict:
    return asdict(cfg)
