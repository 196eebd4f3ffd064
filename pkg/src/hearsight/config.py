"""Run configuration: one JSON file, one section per stage.

Key names and units::

    {
      "seed": 0,                                    # root seed, split per stage
      "geometry": {"mic_positions": [[x, y, z] x 4] (m), "speed_of_sound": m/s},
      "sim": {"per_class": 50, "duration_s": 2.0, "sample_rate": 16000 (Hz),
              "distance_range": [m, m], "snr_range": [dB, dB],
              "self_distance": m, "self_level_db": dB, "amplify_gain": 1.0},
      "stft": {"window_len": samples, "hop": samples, "window_fn": "hann"},
      "model": {... JerryNetConfig fields ...},
      "train": {... TrainConfig fields ...},
      "classifier": {"threshold": 0.3, "temperature": 0.07, "priority": [names]},
      "fusion": {"tau": 0.5, "gate": false, "band": [0.333, 0.667]},
      "loop": {"gate_db": 60, "calibration_offset_db": 94, "timeout_s": 10 (s)},
      "paths": {name: path}                         # must exist at load time
    }

Every section is optional; unknown keys anywhere are rejected. Command-line
flags override file values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from hearsight.arraysim import SOUND_CLASSES, ArrayGeometry, SimConfig
from hearsight.errors import DomainError
from hearsight.features import StftConfig
from hearsight.jerrynet import JerryNetConfig
from hearsight.loop import LoopConfig
from hearsight.training import Augmentation, TrainConfig


def _err(msg: str) -> DomainError:
    return DomainError("cli", "load_config", msg)


def _build(cls, d, section: str):
    if not isinstance(d, dict):
        raise _err(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise _err(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise _err(f"bad {section!r} section: {exc}") from exc


@dataclass
class SimSection:
    per_class: int = 50
    duration_s: float = 2.0
    sample_rate: int = 16000
    distance_range: tuple = (1.0, 4.0)
    snr_range: tuple = (15.0, 30.0)  # use [null, null] in JSON for the noiseless variant
    self_distance: float = 0.10
    self_level_db: float = 20.0
    amplify_gain: float = 1.0

    def sim_config(self) -> SimConfig:
        snr = tuple(math.inf if v is None else float(v) for v in self.snr_range)
        return SimConfig(tuple(self.distance_range), snr, self.self_distance, self.self_level_db, self.amplify_gain)


@dataclass
class ClassifierSection:
    threshold: float = 0.3
    temperature: float = 0.07
    priority: list = field(default_factory=lambda: list(SOUND_CLASSES))


@dataclass
class FusionSection:
    tau: float = 0.5
    gate: bool = False
    band: tuple = (1 / 3, 2 / 3)


@dataclass
class RunConfig:
    seed: int = 0
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry.default)
    sim: SimSection = field(default_factory=SimSection)
    stft: StftConfig = field(default_factory=StftConfig)
    model: JerryNetConfig = field(default_factory=JerryNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    loop: LoopConfig = field(default_factory=LoopConfig)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise _err("config root must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise _err(f"unknown top-level keys: {sorted(unknown)}")
        cfg = cls()
        if "seed" in d:
            cfg.seed = int(d["seed"])
        if "geometry" in d:
            cfg.geometry = ArrayGeometry.from_dict(d["geometry"])
        if "sim" in d:
            cfg.sim = _build(SimSection, d["sim"], "sim")
        if "stft" in d:
            cfg.stft = _build(StftConfig, d["stft"], "stft")
        if "model" in d:
            cfg.model = JerryNetConfig.from_dict(d["model"])
        if "train" in d:
            t = dict(d["train"])
            if isinstance(t.get("augmentation"), dict):
                t["augmentation"] = _build(Augmentation, t["augmentation"], "train.augmentation")
            cfg.train = _build(TrainConfig, t, "train")
        if "classifier" in d:
            cfg.classifier = _build(ClassifierSection, d["classifier"], "classifier")
        if "fusion" in d:
            cfg.fusion = _build(FusionSection, d["fusion"], "fusion")
        if "loop" in d:
            cfg.loop = _build(LoopConfig, d["loop"], "loop")
        if "paths" in d:
            base = Path(base_dir)
            paths = {}
            for name, p in dict(d["paths"]).items():
                full = (base / p).resolve()
                if not full.exists():
                    raise _err(f"path {name!r} does not exist: {full}")
                paths[name] = str(full)
            cfg.paths = paths
        return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _err(f"cannot read {path}: {exc}") from exc
    return RunConfig.from_dict(raw, path.parent)


def stage_seed(root_seed: int, stage: str) -> int:
    """Per-stage seed derived from the root seed by hashing the stage name."""
    h = hashlib.sha256(f"{int(root_seed)}/{stage}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF
