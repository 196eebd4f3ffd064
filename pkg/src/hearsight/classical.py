"""Closed-form direction-of-arrival baseline used as an independent oracle.

For every pair (mic 1, mic j) the frame-averaged cross-spectrum phase is
fitted by a line through the origin over bins below the pair's spatial
aliasing limit, giving a TDOA. The three TDOAs are then solved for a
horizontal plane-wave direction by least squares.

A source straight below the array (the wearer's mouth) reaches all four
microphones at once, so the fitted horizontal slowness collapses towards
zero; that is what the ``self`` decision keys on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hearsight.arraysim import SELF, ArrayGeometry, MultiChannelClip, sector_of
from hearsight.errors import DomainError
from hearsight.features import StftConfig, stft


@dataclass
class SelfDetector:
    max_plane_norm: float = 0.3  # |horizontal unit-direction estimate| below this => near/overhead source
    min_level_dbfs: float | None = None  # optionally also require a loud clip


@dataclass
class DoaEstimate:
    azimuth_deg: float
    plane_norm: float
    tdoas: np.ndarray  # tau_j - tau_1 for j = 2, 3, 4 (seconds)
    residual: float  # rms misfit of the plane-wave model (seconds)
    level_dbfs: float
    label: str


def pair_tdoa(x_ref: np.ndarray, x_other: np.ndarray, spacing: float, c: float, cfg: StftConfig, sample_rate: float):
    """TDOA (other minus ref) from the phase slope of the frame-summed cross-spectrum."""
    a = stft(x_ref, cfg, sample_rate).bins
    b = stft(x_other, cfg, sample_rate).bins
    cross = np.sum(a * np.conj(b), axis=1)
    f = np.arange(cross.size) * sample_rate / cfg.window_len
    keep = (f > 0) & (f < c / (2 * spacing))
    w = np.abs(cross[keep])
    if w.sum() <= 0:
        return 0.0
    phi = np.angle(cross[keep])
    fk = f[keep]
    return float(np.sum(w * fk * phi) / (2 * np.pi * np.sum(w * fk**2)))


def estimate(
    clip: MultiChannelClip,
    geometry: ArrayGeometry,
    cfg: StftConfig | None = None,
    detector: SelfDetector | None = None,
) -> DoaEstimate:
    cfg = cfg or StftConfig()
    detector = detector or SelfDetector()
    ch = clip.channels
    if ch.shape[0] != 4:
        raise DomainError("doa-model", "classical_doa", "clip must have 4 channels")
    m = geometry.mic_positions
    c = geometry.speed_of_sound
    rel = m[1:] - m[0]
    if np.linalg.matrix_rank(rel[:, :2], tol=1e-9) < 2:
        raise DomainError("doa-model", "classical_doa", "degenerate geometry: mic pairs do not span the plane")
    tdoas = np.array(
        [pair_tdoa(ch[0], ch[j], np.linalg.norm(rel[j - 1]), c, cfg, clip.sample_rate) for j in (1, 2, 3)]
    )
    # tau_j - tau_1 = -(m_j - m_1) . u / c for a plane wave arriving from direction u
    A = -rel[:, :2] / c
    u, *_ = np.linalg.lstsq(A, tdoas, rcond=None)
    residual = float(np.sqrt(np.mean((A @ u - tdoas) ** 2)))
    norm = float(np.hypot(*u))
    az = math.degrees(math.atan2(u[0], u[1])) % 360.0
    rms = float(np.sqrt(np.mean(clip.mono() ** 2)))
    level = 20 * math.log10(rms) if rms > 0 else -math.inf
    is_self = norm < detector.max_plane_norm
    if is_self and detector.min_level_dbfs is not None:
        is_self = level >= detector.min_level_dbfs
    return DoaEstimate(az, norm, tdoas, residual, level, SELF if is_self else sector_of(az))


def classical_doa(clip, geometry, cfg: StftConfig | None = None, detector: SelfDetector | None = None) -> str:
    return estimate(clip, geometry, cfg, detector).label
