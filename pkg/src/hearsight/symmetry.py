"""Reflections of the rectangular array, acting on phase matrices and labels.

With the default mic order (1 front-left, 2 front-right, 3 back-left,
4 back-right) reflecting the world about the front-back axis swaps mics
1<->2 and 3<->4; reflecting about the left-right axis swaps 1<->3 and 2<->4.
Rows of a phase matrix are IPD(1,2), IPD(1,3), IPD(1,4), so both
reflections are exact re-combinations of the three rows. Used for
augmentation and for symmetry-averaged inference.
"""

from __future__ import annotations

import numpy as np

from hearsight.arraysim import DIRECTIONS
from hearsight.features import wrap

# label index -> label index of the reflected scene
MIRROR_LR = [DIRECTIONS.index(d) for d in
             ("front", "front-left", "left", "back-left", "back", "back-right", "right", "front-right", "self")]
MIRROR_FB = [DIRECTIONS.index(d) for d in
             ("back", "back-right", "right", "front-right", "front", "front-left", "left", "back-left", "self")]


def _rows(pm):
    pm = np.asarray(pm)
    return pm[..., 0, :, :], pm[..., 1, :, :], pm[..., 2, :, :]


def mirror_left_right(pm: np.ndarray) -> np.ndarray:
    """Phase matrix (or batch) seen by the array reflected about its front-back axis."""
    a, b, c = _rows(pm)
    return np.stack([-a, wrap(c - a), wrap(b - a)], axis=-3).astype(pm.dtype)


def mirror_front_back(pm: np.ndarray) -> np.ndarray:
    """Phase matrix (or batch) seen by the array reflected about its left-right axis."""
    a, b, c = _rows(pm)
    return np.stack([wrap(c - b), -b, wrap(a - b)], axis=-3).astype(pm.dtype)


def symmetric_average(predict, x: np.ndarray) -> np.ndarray:
    """Mean of ``predict`` over the four reflections of ``x``, mapped back to the original labels.

    ``predict`` maps a batch (B, 3, F, T) to class probabilities (B, 9).
    """
    lr = mirror_left_right(x)
    p = predict(x)
    p = p + predict(lr)[:, MIRROR_LR]
    p = p + predict(mirror_front_back(x))[:, MIRROR_FB]
    p = p + predict(mirror_front_back(lr))[:, MIRROR_FB][:, MIRROR_LR]
    return p / 4
