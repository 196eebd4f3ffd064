"""Mini-batch SGD training, evaluation metrics and model checkpoints.

Checkpoint layout (little-endian)::

    magic b"JNCK" | uint16 version | 16-byte ascii model-config hash
    | 16-byte ascii feature-config hash | uint32 tensor count
    then per tensor: uint16 name length, utf-8 name, uint8 ndim,
                     ndim x uint32 dims, float32 payload (row-major)

A JSON sidecar ``<stem>.json`` carries the model and STFT configs.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from hearsight.arraysim import DIRECTIONS
from hearsight.errors import DomainError
from hearsight.features import StftConfig, wrap
from hearsight.symmetry import MIRROR_FB, MIRROR_LR, mirror_front_back, mirror_left_right
from hearsight.jerrynet import (
    JerryNetConfig,
    ModelParams,
    backward_batch,
    forward_batch,
    init_params,
    loss_and_grad,
    predict_batch,
    softmax,
    to_network_input,
)

log = logging.getLogger(__name__)

CKPT_MAGIC = b"JNCK"
CKPT_VERSION = 1


@dataclass
class Augmentation:
    noise_std: float = 0.0  # radians, added to IPD entries then re-wrapped
    max_time_crop: int = 0  # frames cut from a random position and zero-padded at the end
    # Random left-right / front-back reflections of the array. Valid only for the
    # default mic order (1 front-left, 2 front-right, 3 back-left, 4 back-right).
    mirror: bool = False


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    momentum: float = 0.0
    optimizer: str = "sgd"  # "sgd" (optionally with momentum) or "adam"
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0  # decoupled, applied to weights only
    lr_schedule: str = "constant"  # or "cosine" (decays to 0 over all epochs)
    val_fraction: float = 0.2
    augmentation: Augmentation = field(default_factory=Augmentation)
    dtype: str = "float32"
    weight_init: str = "he_uniform"

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = Augmentation(**self.augmentation)
        if not self.learning_rate >= 0:
            raise DomainError("doa-model", "train_config", "learning_rate must be non-negative")
        if self.batch_size < 1:
            raise DomainError("doa-model", "train_config", "batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise DomainError("doa-model", "train_config", "momentum must be in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise DomainError("doa-model", "train_config", f"unknown lr_schedule {self.lr_schedule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise DomainError("doa-model", "train_config", f"unknown optimizer {self.optimizer!r}")
        self.adam_betas = tuple(self.adam_betas)
        if self.weight_init != "he_uniform":
            raise DomainError("doa-model", "train_config", "only he_uniform init is supported")


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    val_acc: float
    train_loss: float
    val_loss: float


def stratified_split(labels, val_fraction: float, seed: int):
    """Indices (train, val) holding out ``round(n_c * val_fraction)`` items of every class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n_val = int(round(len(idx) * val_fraction))
        if 0 < val_fraction and n_val == len(idx):
            n_val = len(idx) - 1
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int))


def mirror_batch(x: np.ndarray, y: np.ndarray, rng):
    x, y = x.copy(), y.copy()
    for i in range(len(y)):
        if rng.random() < 0.5:
            x[i] = mirror_left_right(x[i])
            y[i] = MIRROR_LR[y[i]]
        if rng.random() < 0.5:
            x[i] = mirror_front_back(x[i])
            y[i] = MIRROR_FB[y[i]]
    return x, y


def augment(x: np.ndarray, aug: Augmentation, rng) -> np.ndarray:
    """Apply IPD noise and time-crop jitter to a batch (B, 3, F, T)."""
    if aug.noise_std > 0:
        x = wrap(x + rng.normal(0.0, aug.noise_std, size=x.shape)).astype(x.dtype)
    if aug.max_time_crop > 0:
        x = x.copy()
        T = x.shape[-1]
        for b in range(x.shape[0]):
            cut = int(rng.integers(0, aug.max_time_crop + 1))
            if cut:
                start = int(rng.integers(0, cut + 1))
                kept = x[b, ..., start : start + T - cut].copy()
                x[b] = 0
                x[b, ..., : T - cut] = kept
    return x


def train(
    model_cfg: JerryNetConfig,
    features,
    labels,
    cfg: TrainConfig,
    val_features=None,
    val_labels=None,
    params: ModelParams | None = None,
):
    """Train on (N, 3, F, T) phase matrices with direction labels.

    When no explicit validation set is given, a stratified ``val_fraction``
    split is held out. Returns ``(params, history)``.
    """
    x_all = np.asarray(features)
    y_all = np.array([DIRECTIONS.index(l) if isinstance(l, str) else int(l) for l in labels])
    if x_all.size == 0 or len(y_all) == 0:
        raise DomainError("doa-model", "train", "empty dataset")
    if val_features is None:
        tr, va = stratified_split(y_all, cfg.val_fraction, cfg.seed)
        xt, yt, xv, yv = x_all[tr], y_all[tr], x_all[va], y_all[va]
    else:
        xt, yt = x_all, y_all
        xv = np.asarray(val_features)
        yv = np.array([DIRECTIONS.index(l) if isinstance(l, str) else int(l) for l in val_labels])
    dtype = np.dtype(cfg.dtype)
    xt = xt.astype(dtype)
    xv = xv.astype(dtype)
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(model_cfg, int(rng.integers(2**31)), dtype=dtype)
    else:
        params = params.astype(dtype)
    opt = _Optimizer(cfg, params)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_schedule == "cosine":
            opt.lr = 0.5 * cfg.learning_rate * (1 + np.cos(np.pi * (epoch - 1) / cfg.epochs))
        order = rng.permutation(len(yt))
        tot_loss, correct = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            xb, yb = xt[idx], yt[idx]
            if cfg.augmentation.mirror:
                xb, yb = mirror_batch(xb, yb, rng)
            xb = augment(xb, cfg.augmentation, rng)
            logits, cache = forward_batch(model_cfg, params, to_network_input(model_cfg, xb), keep_cache=True)
            value, dz = loss_and_grad(logits.astype(np.float64), yb, model_cfg.loss)
            if not np.isfinite(value):
                raise DomainError("doa-model", "train", f"non-finite loss at epoch {epoch}, batch {s // cfg.batch_size}")
            tot_loss += value * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            grads = backward_batch(params, cache, dz.astype(dtype))
            opt.step(params, grads)
        if len(yv):
            pv = predict_batch(model_cfg, params, xv)
            val_loss = _mean_loss(pv, yv, model_cfg.loss)
            val_acc = float(np.mean(np.argmax(pv, axis=1) == yv))
        else:
            val_loss, val_acc = float("nan"), float("nan")
        rec = EpochRecord(epoch, correct / len(yt), val_acc, tot_loss / len(yt), val_loss)
        history.append(rec)
        log.info("epoch %d train_acc %.3f val_acc %.3f loss %.4f", epoch, rec.train_acc, rec.val_acc, rec.train_loss)
    return params, history


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: ModelParams):
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if cfg.optimizer == "adam" else None

    def step(self, params: ModelParams, grads):
        lr = self.lr
        if lr == 0:
            return
        self.t += 1
        if self.cfg.weight_decay:
            for k in params:
                if k.endswith("weight"):
                    params[k] = params[k] * (1 - lr * self.cfg.weight_decay)
        if self.cfg.optimizer == "adam":
            b1, b2 = self.cfg.adam_betas
            c1, c2 = 1 - b1**self.t, 1 - b2**self.t
            for k, g in grads.items():
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                params[k] = params[k] - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + 1e-8)
        elif self.cfg.momentum:
            for k, g in grads.items():
                self.m[k] = self.cfg.momentum * self.m[k] - lr * g
                params[k] = params[k] + self.m[k]
        else:
            for k, g in grads.items():
                params[k] = params[k] - lr * g


def _mean_loss(probs, y, loss):
    logits = np.log(np.clip(probs, 1e-300, None))
    return float(loss_and_grad(logits, y, loss)[0])


def write_history(history, path: str | Path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_acc", "val_acc", "train_loss", "val_loss"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_acc:.6f}", f"{r.val_acc:.6f}", f"{r.train_loss:.6f}", f"{r.val_loss:.6f}"])


# -- metrics ----------------------------------------------------------------


def classification_metrics(y_true, y_pred, num_classes: int = len(DIRECTIONS)) -> dict:
    """Accuracy, macro-F1 over classes seen in either vector, confusion (rows = truth)."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise DomainError("doa-model", "evaluate", "empty dataset")
    conf = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(conf, (y_true, y_pred), 1)
    f1s = []
    for c in sorted(set(y_true.tolist()) | set(y_pred.tolist())):
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return {
        "accuracy": float(np.mean(y_true == y_pred)),
        "macro_f1": float(np.mean(f1s)),
        "confusion": conf,
    }


def evaluate(model_cfg: JerryNetConfig, params: ModelParams, features, labels) -> dict:
    y = np.array([DIRECTIONS.index(l) if isinstance(l, str) else int(l) for l in labels])
    if len(y) == 0:
        raise DomainError("doa-model", "evaluate", "empty dataset")
    probs = predict_batch(model_cfg, params, np.asarray(features))
    return classification_metrics(y, np.argmax(probs, axis=1))


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(path: str | Path, model_cfg: JerryNetConfig, stft_cfg: StftConfig, params: ModelParams) -> Path:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<H", CKPT_VERSION))
        f.write(model_cfg.config_hash().encode("ascii"))
        f.write(stft_cfg.config_hash().encode("ascii"))
        f.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)) + nb)
            f.write(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    side = {"model": model_cfg.to_dict(), "stft": asdict(stft_cfg), "version": CKPT_VERSION}
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path):
    """Returns (model_cfg, stft_cfg, params, feature_hash)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
        side = json.loads(path.with_suffix(".json").read_text())
    except OSError as exc:
        raise DomainError("doa-model", "load_checkpoint", f"cannot read {path}: {exc}") from exc
    if raw[:4] != CKPT_MAGIC:
        raise DomainError("doa-model", "load_checkpoint", f"{path}: not a checkpoint")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CKPT_VERSION:
        raise DomainError("doa-model", "load_checkpoint", f"unsupported checkpoint version {version}")
    model_hash = raw[6:22].decode("ascii")
    feat_hash = raw[22:38].decode("ascii")
    (count,) = struct.unpack_from("<I", raw, 38)
    off = 42
    tensors = OrderedDict()
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", raw, off)
        name = raw[off + 2 : off + 2 + ln].decode()
        off += 2 + ln
        (ndim,) = struct.unpack_from("<B", raw, off)
        dims = struct.unpack_from(f"<{ndim}I", raw, off + 1)
        off += 1 + 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float64)
        off += 4 * n
    model_cfg = JerryNetConfig.from_dict(side["model"])
    stft_cfg = StftConfig(**side["stft"])
    if model_cfg.config_hash() != model_hash:
        raise DomainError("doa-model", "load_checkpoint", "sidecar model config does not match checkpoint hash")
    if stft_cfg.config_hash() != feat_hash:
        raise DomainError("doa-model", "load_checkpoint", "sidecar feature config does not match checkpoint hash")
    return model_cfg, stft_cfg, ModelParams(tensors), feat_hash


def predict_clip_probs(model_cfg, stft_cfg, params, pm) -> np.ndarray:
    return predict_batch(model_cfg, params, np.asarray(pm)[None])[0]
