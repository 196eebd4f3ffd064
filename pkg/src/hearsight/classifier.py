"""Embedding-similarity sound class scoring and the importance filter.

Scoring is provider-agnostic: any object with ``embed_audio(clip)`` and
``embed_text(name)`` returning unit vectors of one fixed dimension will do.
The desk-scale provider here embeds audio as a mean-removed log-mel band
energy profile and "text" as a per-class template fitted from labelled clips.
``ExternalProvider`` speaks a small JSON protocol so a pretrained
audio-text model can be dropped in instead.
"""

from __future__ import annotations

import json
import math
import subprocess
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from hearsight.arraysim import SOUND_CLASSES
from hearsight.errors import DomainError
from hearsight.features import StftConfig, frames

DEFAULT_THRESHOLD = 0.3
DEFAULT_TEMPERATURE = 0.07


@dataclass(frozen=True)
class ClassScore:
    class_name: str
    prob: float


class EmbeddingProvider(Protocol):
    def embed_audio(self, clip) -> np.ndarray: ...

    def embed_text(self, name: str) -> np.ndarray: ...


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise DomainError("classifier", "embedding", "zero-length embedding")
    return v / n


def zero_shot_scores(audio_emb, class_embs, temperature: float = DEFAULT_TEMPERATURE) -> list[ClassScore]:
    """Softmax over cosine similarities divided by ``temperature``."""
    if not class_embs:
        raise DomainError("classifier", "zero_shot_scores", "empty class list")
    if not temperature > 0:
        raise DomainError("classifier", "zero_shot_scores", "temperature must be positive")
    a = _unit(audio_emb)
    names = [n for n, _ in class_embs]
    sims = []
    for name, e in class_embs:
        e = np.asarray(e, dtype=float)
        if e.shape != a.shape:
            raise DomainError("classifier", "zero_shot_scores", f"dim mismatch for {name!r}: {e.shape} vs {a.shape}")
        sims.append(float(a @ _unit(e)))
    z = np.array(sims) / temperature
    p = np.exp(z - z.max())
    p /= p.sum()
    return [ClassScore(n, float(q)) for n, q in zip(names, p)]


class PriorityList:
    """Ordered class names, rank 1 most urgent; unknown classes rank last."""

    def __init__(self, names=SOUND_CLASSES):
        names = list(names)
        if len(set(names)) != len(names):
            raise DomainError("classifier", "priority_list", "duplicate class in priority list")
        self.names = names
        self._rank = {n: i + 1 for i, n in enumerate(names)}

    def rank(self, name: str) -> float:
        return self._rank.get(name, math.inf)


def importance_filter(scores, priority: PriorityList | None = None, threshold: float = DEFAULT_THRESHOLD):
    """Most urgent class whose probability is strictly above ``threshold``, else None.

    Priority rank decides first, then the higher probability, then the name.
    """
    priority = priority or PriorityList()
    cands = [s for s in scores if s.prob > threshold]
    if not cands:
        return None
    best = min(cands, key=lambda s: (priority.rank(s.class_name), -s.prob, s.class_name))
    return best.class_name


# -- desk-scale embedding provider -------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, sample_rate: float, fmin: float = 0.0, fmax: float | None = None):
    """Triangular filters (n_bands, n_fft // 2 + 1) on the HTK mel scale."""
    fmax = fmax or sample_rate / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b : b + 3]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        fb[b] = np.clip(np.minimum(up, down), 0, None)
    return fb


class MelEmbedder:
    """Unit log-mel energy profile of the mono mixdown, with the mean log level removed."""

    def __init__(self, n_bands: int = 64, cfg: StftConfig = StftConfig(1024, 512, "hann"), floor: float = 1e-10):
        self.n_bands = n_bands
        self.cfg = cfg
        self.floor = floor
        self._fb = {}

    @property
    def dim(self) -> int:
        return self.n_bands

    def __call__(self, clip) -> np.ndarray:
        x = clip.mono() if hasattr(clip, "mono") else np.asarray(clip, dtype=float)
        sr = getattr(clip, "sample_rate", 16000)
        if sr not in self._fb:
            self._fb[sr] = mel_filterbank(self.n_bands, self.cfg.window_len, sr)
        spec = np.abs(np.fft.rfft(frames(x, self.cfg) * self.cfg.window(), axis=1)) ** 2
        energy = self._fb[sr] @ spec.sum(axis=0)
        peak = energy.max()
        if not peak > 0:
            raise DomainError("classifier", "embed_audio", "silent clip has no spectral profile")
        # floor relative to the peak keeps the embedding exactly gain-invariant
        loge = np.log(np.maximum(energy, self.floor * peak))
        return _unit(loge - loge.mean())


class TemplateStore:
    """Class name -> unit template vector, persisted as JSON."""

    def __init__(self, templates: dict):
        if not templates:
            raise DomainError("classifier", "templates", "empty template store")
        self.templates = {k: _unit(v) for k, v in templates.items()}
        dims = {v.shape for v in self.templates.values()}
        if len(dims) != 1:
            raise DomainError("classifier", "templates", f"templates have mixed dimensions {dims}")

    @property
    def names(self) -> list[str]:
        return list(self.templates)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({k: v.tolist() for k, v in self.templates.items()}, indent=1))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TemplateStore":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError("classifier", "load_templates", f"cannot read {path}: {exc}") from exc
        return cls(raw)


def fit_templates(clips, embedder: MelEmbedder | None = None) -> TemplateStore:
    """Mean embedding per ``meta['sound_class']`` over the labelled clips."""
    embedder = embedder or MelEmbedder()
    groups: dict[str, list] = {}
    for clip in clips:
        name = clip.meta.get("sound_class")
        if name:
            groups.setdefault(name, []).append(embedder(clip))
    if not groups:
        raise DomainError("classifier", "fit_templates", "no clips carry a sound_class label")
    ordered = sorted(groups, key=lambda n: (SOUND_CLASSES.index(n) if n in SOUND_CLASSES else len(SOUND_CLASSES), n))
    return TemplateStore({n: np.mean(groups[n], axis=0) for n in ordered})


class DeskEmbeddingProvider:
    def __init__(self, store: TemplateStore, embedder: MelEmbedder | None = None):
        self.store = store
        self.embedder = embedder or MelEmbedder()

    def embed_audio(self, clip) -> np.ndarray:
        return self.embedder(clip)

    def embed_text(self, name: str) -> np.ndarray:
        try:
            return self.store.templates[name]
        except KeyError:
            raise DomainError("classifier", "embed_text", f"no template for class {name!r}") from None


class ExternalProvider:
    """Bridge to an out-of-process model.

    Each request is one JSON object, ``{"audio_path": ...}`` or
    ``{"text": ...}``; the reply is ``{"embedding": [floats]}``. With
    ``command`` the request goes to the process's stdin and the reply is read
    from stdout; with ``url`` it is POSTed as ``application/json``.
    """

    def __init__(self, command: list[str] | None = None, url: str | None = None, timeout: float = 30.0):
        if (command is None) == (url is None):
            raise DomainError("classifier", "external_provider", "give exactly one of command or url")
        self.command = command
        self.url = url
        self.timeout = timeout

    def _request(self, payload: dict) -> np.ndarray:
        body = json.dumps(payload).encode()
        try:
            if self.command is not None:
                out = subprocess.run(self.command, input=body, capture_output=True, timeout=self.timeout, check=True).stdout
            else:
                req = urllib.request.Request(self.url, body, {"Content-Type": "application/json"})
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    out = resp.read()
            emb = json.loads(out)["embedding"]
        except (OSError, subprocess.SubprocessError, ValueError, KeyError) as exc:
            raise DomainError("classifier", "external_provider", f"request failed: {exc}") from exc
        return _unit(emb)

    def embed_audio(self, clip) -> np.ndarray:
        path = clip if isinstance(clip, (str, Path)) else clip.meta.get("path")
        if path is None:
            raise DomainError("classifier", "external_provider", "audio must be given as a file path")
        return self._request({"audio_path": str(path)})

    def embed_text(self, name: str) -> np.ndarray:
        return self._request({"text": name})


def score_clip(clip, provider, vocabulary, temperature: float = DEFAULT_TEMPERATURE) -> list[ClassScore]:
    return zero_shot_scores(provider.embed_audio(clip), [(n, provider.embed_text(n)) for n in vocabulary], temperature)


def classify(
    clip,
    provider,
    vocabulary,
    priority: PriorityList | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    temperature: float = DEFAULT_TEMPERATURE,
):
    """(scores, selected class or None)."""
    scores = score_clip(clip, provider, vocabulary, temperature)
    return scores, importance_filter(scores, priority, threshold)
