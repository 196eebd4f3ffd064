"""JerryNet: a small numpy CNN mapping a phase matrix to 9 direction classes.

Each block is ``convs_per_block`` convolutions with 1x2 kernels (unit stride,
no padding, so every conv shortens the time axis by one) each followed by
ReLU, then a 2x2 max-pool with stride 2 (floor). The flattened features go
through ReLU fully connected layers and a final linear layer to 9 logits.

Batches enter as (B, C, H, W) with H frequency and W time, and are carried
channels-last internally so each conv is a single GEMM. Gradients are computed by hand; see ``tests/test_gradcheck.py``
for the finite-difference verification.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from hearsight.arraysim import DIRECTIONS
from hearsight.errors import DomainError
from hearsight.symmetry import symmetric_average

NUM_CLASSES = len(DIRECTIONS)
CLAMP = 1e-7


@dataclass(frozen=True)
class BlockSpec:
    out_channels: int
    convs_per_block: int = 1


@dataclass
class JerryNetConfig:
    blocks: list = field(default_factory=lambda: [BlockSpec(c) for c in (8, 16, 32, 64)])
    fc_dims: list = field(default_factory=lambda: [256, 64])
    num_classes: int = NUM_CLASSES
    input_layout: str = "three_channel"
    input_shape: tuple = (3, 257, 124)  # phase matrix (3, F, T)
    loss: str = "bce_softmax"
    # average predictions over the array's two mirror symmetries (default mic order only)
    symmetric_inference: bool = False

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks]
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.fc_dims = [int(v) for v in self.fc_dims]
        if self.num_classes != NUM_CLASSES:
            raise DomainError("doa-model", "config", f"num_classes must be {NUM_CLASSES}")
        if self.input_layout not in ("three_channel", "single_channel_stacked"):
            raise DomainError("doa-model", "config", f"unknown input_layout {self.input_layout!r}")
        if self.loss not in ("bce_softmax", "categorical"):
            raise DomainError("doa-model", "config", f"unknown loss {self.loss!r}")
        if not self.blocks or any(b.convs_per_block < 1 or b.out_channels < 1 for b in self.blocks):
            raise DomainError("doa-model", "config", "every block needs >= 1 conv and >= 1 channel")
        self.feature_shape()  # validates pooling against the input size

    @classmethod
    def full_scale(cls, input_shape, convs_per_block: int = 2):
        """Ten blocks and a 4096/256 head; only valid for inputs large enough to pool ten times."""
        chans = [16, 16, 32, 32, 64, 64, 128, 128, 256, 256]
        return cls([BlockSpec(c, convs_per_block) for c in chans], [4096, 256], input_shape=input_shape)

    def network_input_shape(self) -> tuple:
        c, f, t = self.input_shape
        if self.input_layout == "single_channel_stacked":
            return (1, c * f, t)
        return (c, f, t)

    def feature_shape(self) -> tuple:
        c, h, w = self.network_input_shape()
        for i, b in enumerate(self.blocks):
            w -= b.convs_per_block
            if w < 2 or h < 2:
                raise DomainError(
                    "doa-model", "config", f"block {i} pools a {h}x{max(w, 0)} map; input {self.input_shape} too small"
                )
            c, h, w = b.out_channels, h // 2, w // 2
        return (c, h, w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JerryNetConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise DomainError("doa-model", "config", f"unknown model keys {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class ModelParams:
    """Ordered named tensors with a flat view for gradient checking."""

    def __init__(self, tensors: "OrderedDict[str, np.ndarray]"):
        self.tensors = OrderedDict((k, np.asarray(v)) for k, v in tensors.items())

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    @property
    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def unflatten(self, vec: np.ndarray) -> "ModelParams":
        out, i = OrderedDict(), 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(vec[i : i + v.size], dtype=v.dtype).reshape(v.shape)
            i += v.size
        return ModelParams(out)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(OrderedDict((k, v.astype(dtype)) for k, v in self.tensors.items()))

    def copy(self) -> "ModelParams":
        return ModelParams(OrderedDict((k, v.copy()) for k, v in self.tensors.items()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def param_shapes(cfg: JerryNetConfig) -> "OrderedDict[str, tuple]":
    shapes = OrderedDict()
    c = cfg.network_input_shape()[0]
    for i, b in enumerate(cfg.blocks):
        for j in range(b.convs_per_block):
            shapes[f"block{i}.conv{j}.weight"] = (b.out_channels, c, 2)
            shapes[f"block{i}.conv{j}.bias"] = (b.out_channels,)
            c = b.out_channels
    fan = int(np.prod(cfg.feature_shape()))
    for k, d in enumerate(cfg.fc_dims + [cfg.num_classes]):
        shapes[f"fc{k}.weight"] = (d, fan)
        shapes[f"fc{k}.bias"] = (d,)
        fan = d
    return shapes


def init_params(cfg: JerryNetConfig, seed: int = 0, dtype=np.float64, output_scale: float = 0.01) -> ModelParams:
    """He-uniform weights, zero biases.

    The output layer is additionally scaled by ``output_scale`` so the
    initial softmax is near uniform; a saturated softmax has zero BCE
    gradient once its outputs hit the clamp.
    """
    rng = np.random.default_rng(seed)
    out = OrderedDict()
    last = f"fc{len(cfg.fc_dims)}.weight"
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            out[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * (shape[2] if len(shape) == 3 else 1)
            lim = np.sqrt(6.0 / fan_in)
            if name == last:
                lim *= output_scale
            out[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
    return ModelParams(out)


def zero_params(cfg: JerryNetConfig) -> ModelParams:
    return ModelParams(OrderedDict((k, np.zeros(s)) for k, s in param_shapes(cfg).items()))


# -- layers -----------------------------------------------------------------


def conv1x2_forward(x, w, b):
    """x (B,H,W,C) channels-last, w (O,C,2), b (O,) -> (z (B,H,W-1,O), stacked input).

    The two kernel taps are fused into one GEMM over the concatenation of
    the input and its one-frame-shifted copy.
    """
    x2 = np.concatenate([x[:, :, :-1, :], x[:, :, 1:, :]], axis=-1)
    wc = np.concatenate([w[:, :, 0].T, w[:, :, 1].T], axis=0)  # (2C, O)
    return x2 @ wc + b, x2


def conv1x2_backward(dz, x2, w):
    """Gradients w.r.t. the (B,H,W,C) input, the (O,C,2) kernel and the bias."""
    O, C, _ = w.shape
    dzf = dz.reshape(-1, O)
    dwc = x2.reshape(-1, 2 * C).T @ dzf
    dw = np.stack([dwc[:C].T, dwc[C:].T], axis=-1)
    db = dzf.sum(axis=0)
    wc = np.concatenate([w[:, :, 0].T, w[:, :, 1].T], axis=0)
    dx2 = dz @ wc.T
    B, H, Wm1, _ = dz.shape
    dx = np.zeros((B, H, Wm1 + 1, C), dtype=dz.dtype)
    dx[:, :, :-1, :] += dx2[..., :C]
    dx[:, :, 1:, :] += dx2[..., C:]
    return dx, dw, db


def _pool_windows(x):
    h, w = x.shape[1] // 2, x.shape[2] // 2
    x = x[:, : 2 * h, : 2 * w, :]
    return [x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]]


def maxpool_forward(x):
    """2x2 / stride 2 on (B,H,W,C); odd trailing row/column dropped.

    Returns the pooled map and, per output cell, which of the four window
    positions (row-major) held the first maximum.
    """
    s = _pool_windows(x)
    out = s[0]
    idx = np.zeros(out.shape, dtype=np.uint8)
    for k in (1, 2, 3):
        gt = s[k] > out
        out = np.maximum(out, s[k])
        idx = np.where(gt, np.uint8(k), idx)
    return out, idx


def maxpool_backward(dout, idx, in_shape):
    dx = np.zeros(in_shape, dtype=dout.dtype)
    for k, (r, c) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, r : 2 * dout.shape[1] : 2, c : 2 * dout.shape[2] : 2] = dout * (idx == k)
    return dx


def softmax(z, axis=-1):
    z = np.asarray(z)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# -- whole network ----------------------------------------------------------


def to_network_input(cfg: JerryNetConfig, pm) -> np.ndarray:
    """Accept one (3,F,T) phase matrix or a batch (B,3,F,T); return (B,C,H,W)."""
    x = np.asarray(pm)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != cfg.input_shape:
        raise DomainError("doa-model", "forward", f"expected input {cfg.input_shape}, got {tuple(x.shape[-3:])}")
    if cfg.input_layout == "single_channel_stacked":
        x = x.reshape(x.shape[0], 1, -1, x.shape[-1])
    return x


def forward_batch(cfg: JerryNetConfig, params: ModelParams, x: np.ndarray, keep_cache: bool = False):
    """Logits (B, 9) for (B,C,H,W) input; optionally the activations for backward."""
    cache = []
    a = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    for i, b in enumerate(cfg.blocks):
        for j in range(b.convs_per_block):
            w, bias = params[f"block{i}.conv{j}.weight"], params[f"block{i}.conv{j}.bias"]
            z, x2 = conv1x2_forward(a, w, bias)
            a = np.maximum(z, 0)
            if keep_cache:
                cache.append(("conv", (i, j), x2))
                cache.append(("relu", None, z > 0))
        shape = a.shape
        a, idx = maxpool_forward(a)
        if keep_cache:
            cache.append(("pool", shape, idx))
    if keep_cache:
        cache.append(("flatten", a.shape, None))
    # flatten in (C, H, W) order
    a = a.transpose(0, 3, 1, 2).reshape(a.shape[0], -1)
    n_fc = len(cfg.fc_dims) + 1
    for k in range(n_fc):
        if keep_cache:
            cache.append(("fc", k, a))
        a = a @ params[f"fc{k}.weight"].T + params[f"fc{k}.bias"]
        if k < n_fc - 1:
            if keep_cache:
                cache.append(("relu", None, a > 0))
            a = np.maximum(a, 0)
    return a, cache


def backward_batch(params: ModelParams, cache, dlogits: np.ndarray) -> "OrderedDict[str, np.ndarray]":
    grads = {}
    g = dlogits
    for kind, key, saved in reversed(cache):
        if kind == "fc":
            grads[f"fc{key}.weight"] = g.T @ saved
            grads[f"fc{key}.bias"] = g.sum(axis=0)
            g = g @ params[f"fc{key}.weight"]
        elif kind == "relu":
            g = g * saved
        elif kind == "flatten":
            B, H, W, C = key
            g = g.reshape(B, C, H, W).transpose(0, 2, 3, 1)
        elif kind == "pool":
            g = maxpool_backward(g, saved, key)
        elif kind == "conv":
            i, j = key
            g, dw, db = conv1x2_backward(g, saved, params[f"block{i}.conv{j}.weight"])
            grads[f"block{i}.conv{j}.weight"] = dw
            grads[f"block{i}.conv{j}.bias"] = db
    return OrderedDict((k, grads[k]) for k in params.names())


def loss_and_grad(logits: np.ndarray, labels: np.ndarray, loss: str = "bce_softmax"):
    """Mean batch loss and its gradient w.r.t. the logits.

    ``bce_softmax``: binary cross-entropy averaged over the 9 softmax outputs,
    each clamped to [1e-7, 1 - 1e-7]. ``categorical``: -log p[label].
    """
    labels = np.asarray(labels, dtype=int)
    B, K = logits.shape
    p = softmax(logits)
    y = np.zeros_like(p)
    y[np.arange(B), labels] = 1.0
    if loss == "categorical":
        logp = logits - logits.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        value = -logp[np.arange(B), labels].mean()
        return value, (p - y) / B
    pc = np.clip(p, CLAMP, 1 - CLAMP)
    value = -np.mean(np.sum(y * np.log(pc) + (1 - y) * np.log(1 - pc), axis=1) / K)
    dpc = -(y / pc - (1 - y) / (1 - pc)) / K
    dp = dpc * ((p >= CLAMP) & (p <= 1 - CLAMP))
    dz = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    return value, dz / B


# -- single-example operations ----------------------------------------------


@dataclass
class Prediction:
    probs: np.ndarray
    logits: np.ndarray

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.probs))  # first maximum wins ties

    @property
    def argmax_class(self) -> str:
        return DIRECTIONS[self.argmax_index]


def forward(cfg: JerryNetConfig, params: ModelParams, pm) -> Prediction:
    logits, _ = forward_batch(cfg, params, to_network_input(cfg, pm))
    return Prediction(softmax(logits[0]), logits[0])


def predict_batch(cfg: JerryNetConfig, params: ModelParams, pms, batch_size: int = 32) -> np.ndarray:
    """Probabilities (N, 9) for a batch of phase matrices.

    With ``cfg.symmetric_inference`` the network is run on the four
    reflections of every input and the class probabilities are averaged.
    """
    pms = np.asarray(pms)
    dtype = params[params.names()[0]].dtype

    def run(x):
        return softmax(forward_batch(cfg, params, to_network_input(cfg, x).astype(dtype))[0])

    out = []
    for s in range(0, len(pms), batch_size):
        chunk = pms[s : s + batch_size]
        to_network_input(cfg, chunk)  # shape check before reflecting
        out.append(symmetric_average(run, chunk) if cfg.symmetric_inference else run(chunk))
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def _label_index(label) -> int:
    if isinstance(label, str):
        return DIRECTIONS.index(label)
    return int(label)


def bce_loss(pred: Prediction, label) -> float:
    """Binary cross-entropy over the 9 softmax probabilities of one prediction."""
    k = _label_index(label)
    y = np.zeros(len(pred.probs))
    y[k] = 1.0
    p = np.clip(pred.probs, CLAMP, 1 - CLAMP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def loss(cfg: JerryNetConfig, params: ModelParams, pm, label) -> float:
    logits, _ = forward_batch(cfg, params, to_network_input(cfg, pm))
    return float(loss_and_grad(logits, [_label_index(label)], cfg.loss)[0])


def backward(cfg: JerryNetConfig, params: ModelParams, pm, label) -> "OrderedDict[str, np.ndarray]":
    """Gradient of the configured loss for one example w.r.t. every parameter tensor."""
    logits, cache = forward_batch(cfg, params, to_network_input(cfg, pm), keep_cache=True)
    _, dz = loss_and_grad(logits, [_label_index(label)], cfg.loss)
    return backward_batch(params, cache, dz)
