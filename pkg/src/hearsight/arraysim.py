"""Synthetic four-microphone recordings for the nine direction classes.

Device frame is right-handed: x points right, y to the front, z up.
Azimuth is measured in degrees clockwise from the front (towards +x), so a
source at azimuth ``a`` and range ``d`` sits at ``d * (sin a, cos a, 0)``
relative to the array centroid.

Every channel is the source waveform delayed by the exact propagation time
to that microphone, scaled by the inverse distance, plus independent white
sensor noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Union

import numpy as np
from scipy.io import wavfile

from hearsight.errors import DomainError

DIRECTIONS = (
    "front",
    "front-right",
    "right",
    "back-right",
    "back",
    "back-left",
    "left",
    "front-left",
    "self",
)
COMPASS = DIRECTIONS[:8]
SELF = "self"
SECTOR_WIDTH = 45.0

# Table of sound-producing objects the assistant knows about, most urgent first.
SOUND_CLASSES = (
    "siren",
    "car honking",
    "bike bell",
    "person talking",
    "doorbell",
    "phone ringing",
    "dog barking",
    "instruments",
)


def direction_index(label: str) -> int:
    try:
        return DIRECTIONS.index(label)
    except ValueError:
        raise DomainError("array-sim", "direction_index", f"unknown direction class {label!r}") from None


def sector_of(azimuth_deg: float) -> str:
    """Compass class whose 45 degree sector contains ``azimuth_deg``."""
    k = int(math.floor(((azimuth_deg + SECTOR_WIDTH / 2) % 360.0) / SECTOR_WIDTH)) % 8
    return COMPASS[k]


def sector_center(label: str) -> float:
    return COMPASS.index(label) * SECTOR_WIDTH


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        object.__setattr__(self, "mic_positions", pos)
        _validate_geometry(pos, self.speed_of_sound)

    @classmethod
    def default(cls, width: float = 0.14, depth: float = 0.12, speed_of_sound: float = 343.0):
        """Glasses-sized rectangle; mic 1 front-left, 2 front-right, 3 back-left, 4 back-right."""
        w, d = width / 2, depth / 2
        pos = [[-w, d, 0.0], [w, d, 0.0], [-w, -d, 0.0], [w, -d, 0.0]]
        return cls(np.array(pos), speed_of_sound)

    @property
    def centroid(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    def to_dict(self) -> dict:
        return {"mic_positions": self.mic_positions.tolist(), "speed_of_sound": self.speed_of_sound}

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        unknown = set(d) - {"mic_positions", "speed_of_sound"}
        if unknown:
            raise DomainError("array-sim", "geometry", f"unknown geometry keys {sorted(unknown)}")
        return cls(np.array(d["mic_positions"], dtype=float), float(d.get("speed_of_sound", 343.0)))


def _validate_geometry(pos: np.ndarray, c: float, tol: float = 1e-9):
    def bad(msg):
        raise DomainError("array-sim", "geometry", msg)

    if pos.shape != (4, 3):
        bad(f"expected 4 microphones with 3 coordinates, got shape {pos.shape}")
    if not np.all(np.isfinite(pos)) or not (c > 0):
        bad("non-finite positions or non-positive speed of sound")
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(pos[i] - pos[j]) <= tol:
                bad(f"microphones {i + 1} and {j + 1} coincide")
    rel = pos[1:] - pos[0]
    if abs(np.linalg.det(rel)) > tol:
        bad("microphones are not coplanar")
    # Four coplanar points are a rectangle iff they are equidistant from
    # their centroid (equal, mutually bisecting diagonals).
    radii = np.linalg.norm(pos - pos.mean(axis=0), axis=1)
    if np.ptp(radii) > tol:
        bad("microphones do not form a rectangle")
    if np.linalg.matrix_rank(rel, tol=1e-6) < 2:
        bad("microphones are collinear")


# -- source signals ---------------------------------------------------------


@dataclass(frozen=True)
class PureTone:
    freq: float
    kind: str = field(default="pure_tone", init=False)


@dataclass(frozen=True)
class BandNoise:
    lo: float
    hi: float
    kind: str = field(default="band_noise", init=False)


@dataclass(frozen=True)
class Chirp:
    lo: float
    hi: float
    kind: str = field(default="chirp", init=False)


Signal = Union[PureTone, BandNoise, Chirp]


def signal_from_dict(d: dict) -> Signal:
    kind = d["kind"]
    if kind == "pure_tone":
        return PureTone(d["freq"])
    if kind == "band_noise":
        return BandNoise(d["lo"], d["hi"])
    if kind == "chirp":
        return Chirp(d["lo"], d["hi"])
    raise DomainError("array-sim", "signal", f"unknown signal kind {kind!r}")


@dataclass(frozen=True)
class SourceSpec:
    direction_class: str
    azimuth_deg: float
    distance_m: float
    signal: Signal
    snr_db: float = math.inf
    sound_class: str | None = None
    level_db: float = 0.0

    def __post_init__(self):
        if self.direction_class not in DIRECTIONS:
            raise DomainError("array-sim", "source", f"unknown direction class {self.direction_class!r}")
        if not self.distance_m > 0:
            raise DomainError("array-sim", "source", "distance_m must be positive")
        if self.direction_class == SELF:
            if self.distance_m > 0.15:
                raise DomainError("array-sim", "source", "self source must be within 0.15 m")
        elif sector_of(self.azimuth_deg) != self.direction_class:
            raise DomainError(
                "array-sim",
                "source",
                f"azimuth {self.azimuth_deg} is outside the {self.direction_class} sector",
            )


def source_position(geometry: ArrayGeometry, source: SourceSpec) -> np.ndarray:
    if source.direction_class == SELF:
        # wearer's mouth, straight below the array centroid
        return geometry.centroid + np.array([0.0, 0.0, -source.distance_m])
    a = math.radians(source.azimuth_deg)
    return geometry.centroid + source.distance_m * np.array([math.sin(a), math.cos(a), 0.0])


def propagation_delays(geometry: ArrayGeometry, source: SourceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-mic (delay in seconds, distance in metres)."""
    dist = np.linalg.norm(geometry.mic_positions - source_position(geometry, source), axis=1)
    return dist / geometry.speed_of_sound, dist


def far_field_delays(geometry: ArrayGeometry, azimuth_deg: float) -> np.ndarray:
    """Plane-wave arrival times relative to the centroid (negative = earlier)."""
    a = math.radians(azimuth_deg)
    u = np.array([math.sin(a), math.cos(a), 0.0])
    return -(geometry.mic_positions - geometry.centroid) @ u / geometry.speed_of_sound


# -- clips ------------------------------------------------------------------


@dataclass
class MultiChannelClip:
    channels: np.ndarray  # (4, n)
    sample_rate: int
    label: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float)
        if self.channels.ndim != 2 or self.channels.shape[0] != 4:
            raise DomainError("array-sim", "clip", f"expected 4 channels, got shape {self.channels.shape}")

    @property
    def duration_s(self) -> float:
        return self.channels.shape[1] / self.sample_rate

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    def mono(self) -> np.ndarray:
        return self.channels.mean(axis=0)


def render(signal: Signal, delays: np.ndarray, num_samples: int, sample_rate: int, rng) -> np.ndarray:
    """Evaluate the unit-RMS-ish source waveform at ``t - delay`` for each delay.

    Tones and chirps are closed-form so the delayed copies are exact. Band
    noise is a random Fourier series over the clip period, delayed by
    multiplying each coefficient with exp(-j 2 pi f tau).
    """
    nyq = sample_rate / 2
    t = np.arange(num_samples) / sample_rate
    td = t[None, :] - np.asarray(delays, dtype=float)[:, None]
    if isinstance(signal, PureTone):
        if not 0 < signal.freq < nyq:
            raise DomainError("array-sim", "synth_clip", f"tone frequency {signal.freq} Hz must be in (0, Nyquist={nyq})")
        return np.sin(2 * np.pi * signal.freq * td)
    if isinstance(signal, Chirp):
        if not (0 < signal.lo < nyq and 0 < signal.hi < nyq):
            raise DomainError("array-sim", "synth_clip", "chirp band must lie below Nyquist")
        duration = num_samples / sample_rate
        rate = (signal.hi - signal.lo) / duration
        return np.sin(2 * np.pi * (signal.lo * td + 0.5 * rate * td**2))
    if isinstance(signal, BandNoise):
        if not (0 <= signal.lo < signal.hi <= nyq):
            raise DomainError("array-sim", "synth_clip", "noise band must satisfy 0 <= lo < hi <= Nyquist")
        freqs = np.fft.rfftfreq(num_samples, 1 / sample_rate)
        band = (freqs >= signal.lo) & (freqs <= signal.hi)
        if not band.any():
            raise DomainError("array-sim", "synth_clip", "noise band contains no frequency bins")
        coef = np.zeros(freqs.size, dtype=complex)
        coef[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
        shifted = coef[None, :] * np.exp(-2j * np.pi * freqs[None, :] * np.asarray(delays)[:, None])
        out = np.fft.irfft(shifted, n=num_samples, axis=1)
        rms = np.sqrt(np.mean(np.fft.irfft(coef, n=num_samples) ** 2))
        return out / rms / math.sqrt(2)
    raise DomainError("array-sim", "synth_clip", f"unsupported signal {signal!r}")


REFERENCE_AMPLITUDE = 0.05  # waveform peak at 1 m for a 0 dB source


def synth_clip(
    geometry: ArrayGeometry,
    source: SourceSpec,
    duration_s: float = 2.0,
    sample_rate: int = 16000,
    seed: int = 0,
    reference_amplitude: float = REFERENCE_AMPLITUDE,
) -> MultiChannelClip:
    if not duration_s > 0:
        raise DomainError("array-sim", "synth_clip", "duration_s must be positive")
    if sample_rate < 8000:
        raise DomainError("array-sim", "synth_clip", "sample_rate must be at least 8000 Hz")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    delays, dist = propagation_delays(geometry, source)
    wave = render(source.signal, delays, n, sample_rate, rng)
    gain = reference_amplitude * 10 ** (source.level_db / 20) / dist
    x = wave * gain[:, None]
    if math.isfinite(source.snr_db):
        noise_power = np.mean(x**2) / 10 ** (source.snr_db / 10)
        x = x + rng.standard_normal(x.shape) * math.sqrt(noise_power)
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x * (0.99 / peak)
    meta = {
        "label": source.direction_class,
        "azimuth_deg": None if source.direction_class == SELF else source.azimuth_deg,
        "distance_m": source.distance_m,
        "snr_db": source.snr_db if math.isfinite(source.snr_db) else None,
        "seed": seed,
        "sound_class": source.sound_class,
        "level_db": source.level_db,
        "signal": asdict(source.signal),
    }
    return MultiChannelClip(x, sample_rate, source.direction_class, meta)


def amplify_differences(clip: MultiChannelClip, gain: float) -> MultiChannelClip:
    """Exaggerate inter-channel level differences around the 4-channel mean."""
    if gain < 1:
        raise DomainError("array-sim", "amplify_differences", "gain must be >= 1")
    mean = clip.channels.mean(axis=0, keepdims=True)
    x = mean + gain * (clip.channels - mean)
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x / peak
    return MultiChannelClip(x, clip.sample_rate, clip.label, dict(clip.meta))


# -- datasets ---------------------------------------------------------------

# Per sound class: signal kind and parameter ranges (Hz). Most energy sits
# below the ~1.2 kHz spatial-aliasing limit of the 0.14 m pair; siren and
# dog barking reach above it on purpose.
DEFAULT_RECIPES = {
    "siren": {"kind": "chirp", "lo": [500.0, 700.0], "hi": [1300.0, 1600.0]},
    "car honking": {"kind": "pure_tone", "freq": [380.0, 460.0]},
    "bike bell": {"kind": "pure_tone", "freq": [820.0, 900.0]},
    "person talking": {"kind": "band_noise", "lo": [100.0, 200.0], "hi": [900.0, 1200.0]},
    "doorbell": {"kind": "pure_tone", "freq": [560.0, 640.0]},
    "phone ringing": {"kind": "chirp", "lo": [250.0, 300.0], "hi": [650.0, 750.0]},
    "dog barking": {"kind": "band_noise", "lo": [300.0, 500.0], "hi": [2000.0, 3000.0]},
    "instruments": {"kind": "chirp", "lo": [100.0, 150.0], "hi": [300.0, 400.0]},
}


@dataclass
class SimConfig:
    distance_range: tuple[float, float] = (1.0, 4.0)
    snr_range: tuple[float, float] = (15.0, 30.0)
    self_distance: float = 0.10
    self_level_db: float = 20.0
    amplify_gain: float = 1.0
    recipes: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_RECIPES)))

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.snr_range[0])


def draw_signal(recipe: dict, rng) -> Signal:
    kind = recipe["kind"]
    if kind == "pure_tone":
        return PureTone(float(rng.uniform(*recipe["freq"])))
    lo, hi = float(rng.uniform(*recipe["lo"])), float(rng.uniform(*recipe["hi"]))
    if kind == "band_noise":
        return BandNoise(lo, hi)
    if kind == "chirp":
        return Chirp(lo, hi)
    raise DomainError("array-sim", "make_dataset", f"unknown recipe kind {kind!r}")


def draw_source(label: str, rng, sim: SimConfig, sound_class: str | None = None) -> SourceSpec:
    names = sorted(sim.recipes)
    if sound_class is None:
        sound_class = names[int(rng.integers(len(names)))]
    signal = draw_signal(sim.recipes[sound_class], rng)
    snr = math.inf if sim.noiseless else float(rng.uniform(*sim.snr_range))
    if label == SELF:
        return SourceSpec(SELF, 0.0, sim.self_distance, signal, snr, sound_class, sim.self_level_db)
    az = sector_center(label) + float(rng.uniform(-SECTOR_WIDTH / 2, SECTOR_WIDTH / 2))
    az %= 360.0
    if sector_of(az) != label:  # upper sector edge is open
        az = (sector_center(label) - SECTOR_WIDTH / 2) % 360.0
    dist = float(rng.uniform(*sim.distance_range))
    return SourceSpec(label, az, dist, signal, snr, sound_class, 0.0)


def make_dataset(
    geometry: ArrayGeometry,
    per_class: int,
    duration_s: float = 2.0,
    sample_rate: int = 16000,
    seed: int = 0,
    sim: SimConfig | None = None,
) -> list[MultiChannelClip]:
    """``per_class`` clips for each of the nine direction classes, class-major order."""
    if per_class < 1:
        raise DomainError("array-sim", "make_dataset", "per_class must be >= 1")
    sim = sim or SimConfig()
    rng = np.random.default_rng(seed)
    clips = []
    for label in DIRECTIONS:
        for _ in range(per_class):
            src = draw_source(label, rng, sim)
            clip_seed = int(rng.integers(2**31))
            clip = synth_clip(geometry, src, duration_s, sample_rate, clip_seed)
            if sim.amplify_gain != 1.0:
                clip = amplify_differences(clip, sim.amplify_gain)
            clips.append(clip)
    return clips


# -- persistence ------------------------------------------------------------


def save_clip(clip: MultiChannelClip, wav_path: str | Path) -> Path:
    """Write a 4-channel float32 WAV plus ``<stem>.json`` manifest sidecar."""
    wav_path = Path(wav_path)
    wavfile.write(wav_path, clip.sample_rate, clip.channels.T.astype(np.float32))
    meta = dict(clip.meta)
    meta["label"] = clip.label
    wav_path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return wav_path


def load_clip(wav_path: str | Path) -> MultiChannelClip:
    wav_path = Path(wav_path)
    try:
        sr, data = wavfile.read(wav_path)
    except (ValueError, OSError) as exc:
        raise DomainError("array-sim", "load_clip", f"cannot read {wav_path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 4:
        raise DomainError("array-sim", "load_clip", f"{wav_path} is not a 4-channel WAV")
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(float) / 2147483648.0
    else:
        x = data.astype(float)
    meta = {}
    side = wav_path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return MultiChannelClip(x.T, int(sr), meta.get("label"), meta)
