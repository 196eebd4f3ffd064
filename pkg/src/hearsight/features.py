"""STFT, interchannel phase differences and the phase-matrix tensor format.

Tensor file layout (all little-endian)::

    bytes 0..3    magic  b"PMX1"
    bytes 4..15   three uint32 dims (D0, D1, D2)
    bytes 16..    float32 payload, row-major, D0*D1*D2 values

Phase matrices are stored as (3, F, T); localization maps reuse the format
as (1, H, W). A JSON sidecar ``<stem>.json`` records the STFT config.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from hearsight.errors import DomainError

TENSOR_MAGIC = b"PMX1"
_HEADER = struct.Struct("<4s3I")
ZERO_MAG = 1e-12


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 512
    hop: int = 256
    window_fn: str = "hann"

    def __post_init__(self):
        if self.window_len <= 0 or self.window_len % 2:
            raise DomainError("phase-features", "stft_config", "window_len must be positive and even")
        if not 0 < self.hop <= self.window_len:
            raise DomainError("phase-features", "stft_config", "hop must satisfy 0 < hop <= window_len")
        if self.window_fn not in ("hann", "hamming", "rect"):
            raise DomainError("phase-features", "stft_config", f"unknown window {self.window_fn!r}")

    def window(self) -> np.ndarray:
        n = self.window_len
        if self.window_fn == "rect":
            return np.ones(n)
        # periodic windows, the usual choice for spectral analysis
        k = np.arange(n)
        a = 0.5 if self.window_fn == "hann" else 0.54
        return a - (1 - a) * np.cos(2 * np.pi * k / n)

    @property
    def num_bins(self) -> int:
        return self.window_len // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return (num_samples - self.window_len) // self.hop + 1

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Spectrogram:
    bins: np.ndarray  # complex (F, T)
    sample_rate: float
    cfg: StftConfig

    @property
    def freq_resolution(self) -> float:
        return self.sample_rate / self.cfg.window_len

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.cfg.hop

    def freqs(self) -> np.ndarray:
        return np.arange(self.bins.shape[0]) * self.freq_resolution


def frames(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """(T, N) view of the full frames; trailing samples that do not fill a frame are dropped."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size < cfg.window_len:
        raise DomainError("phase-features", "stft", f"signal needs at least {cfg.window_len} samples")
    t = cfg.num_frames(x.size)
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)
    return view[:: cfg.hop][:t]


def stft(signal: np.ndarray, cfg: StftConfig, sample_rate: float = 16000) -> Spectrogram:
    fr = frames(signal, cfg) * cfg.window()
    return Spectrogram(np.fft.rfft(fr, axis=1).T, sample_rate, cfg)


def _phase(bins: np.ndarray) -> np.ndarray:
    ph = np.angle(bins)
    ph[np.abs(bins) < ZERO_MAG] = 0.0
    return ph


def wrap(phi):
    """Wrap angles to (-pi, pi]."""
    out = np.mod(np.asarray(phi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return out if out.ndim else float(out)


def ipd(ref: Spectrogram, other: Spectrogram) -> np.ndarray:
    if ref.bins.shape != other.bins.shape or ref.cfg != other.cfg:
        raise DomainError("phase-features", "ipd", f"shape/config mismatch {ref.bins.shape} vs {other.bins.shape}")
    return wrap(_phase(ref.bins) - _phase(other.bins))


def phase_matrix(clip, cfg: StftConfig) -> np.ndarray:
    """(3, F, T) stack of IPD(1,2), IPD(1,3), IPD(1,4)."""
    ch = np.asarray(clip.channels)
    if ch.shape[0] != 4:
        raise DomainError("phase-features", "phase_matrix", "clip must have 4 channels")
    specs = [stft(c, cfg, clip.sample_rate) for c in ch]
    return np.stack([ipd(specs[0], s) for s in specs[1:]])


# -- tensor files -----------------------------------------------------------


def write_tensor(path: str | Path, tensor: np.ndarray, sidecar: dict | None = None) -> Path:
    path = Path(path)
    t = np.asarray(tensor, dtype="<f4")
    if t.ndim != 3:
        raise DomainError("phase-features", "write_tensor", "tensor must be 3-dimensional")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(TENSOR_MAGIC, *t.shape))
        f.write(np.ascontiguousarray(t).tobytes())
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DomainError("phase-features", "read_tensor", f"{path}: truncated header")
    magic, d0, d1, d2 = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise DomainError("phase-features", "read_tensor", f"{path}: bad magic {magic!r}")
    n = d0 * d1 * d2
    if len(raw) != _HEADER.size + 4 * n:
        raise DomainError("phase-features", "read_tensor", f"{path}: payload size mismatch")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(d0, d1, d2).astype(float)
