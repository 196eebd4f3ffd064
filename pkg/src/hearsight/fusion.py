"""Box selection from a localization map, and dataset-level cIoU / AUC.

Boxes are integer pixel rectangles ``(x, y, w, h)`` with the origin at the
top-left and y pointing down; a box covers columns ``x .. x+w-1`` and rows
``y .. y+h-1``. Boxes that only share an edge do not intersect.

File formats:

* candidates: JSON lines ``{"class", "confidence", "x", "y", "w", "h"}``
* localization maps: binary PGM (P5, maxval 255, value = byte / 255) or the
  (1, H, W) float tensor format from :mod:`hearsight.features`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hearsight.errors import DomainError
from hearsight.features import read_tensor

DEFAULT_TAU = 0.5
SWEEP = [i / 20 for i in range(21)]


@dataclass(frozen=True)
class BBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise DomainError("fusion", "bbox", f"box needs w, h >= 1, got {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


@dataclass(frozen=True)
class Candidate:
    box: BBox
    label: str = ""
    confidence: float = 1.0


@dataclass
class CandidateSet:
    candidates: list
    image_size: tuple  # (W, H)

    def __post_init__(self):
        W, H = self.image_size
        for c in self.candidates:
            if not c.box.within(W, H):
                raise DomainError("fusion", "candidates", f"{c.box} lies outside the {W}x{H} image")


@dataclass
class SelectionResult:
    chosen: Candidate
    iou: float
    pseudo_box: BBox


@dataclass
class DoAGateConfig:
    """Keep candidates whose centre lies in a horizontal band of the image.

    After the wearer turns towards the announced direction the source should
    be roughly straight ahead, i.e. in the middle of the frame.
    """

    enabled: bool = False
    band: tuple = (1 / 3, 2 / 3)  # fractions of image width


def as_map(values) -> np.ndarray:
    m = np.asarray(values, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise DomainError("fusion", "localization_map", "map must be a non-empty 2-D grid")
    if np.any(~np.isfinite(m)) or m.min() < 0 or m.max() > 1:
        raise DomainError("fusion", "localization_map", "map values must lie in [0, 1]")
    return m


def threshold_map(values, tau: float) -> np.ndarray:
    return as_map(values) > tau


def pseudo_bbox(binary) -> BBox | None:
    """Tightest box around the positive cells, or None when there are none."""
    rows, cols = np.nonzero(np.asarray(binary))
    if rows.size == 0:
        return None
    return BBox(int(cols.min()), int(rows.min()), int(cols.max() - cols.min() + 1), int(rows.max() - rows.min() + 1))


def intersection(a: BBox, b: BBox) -> int:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return max(iw, 0) * max(ih, 0)


def iou(a: BBox, b: BBox) -> float:
    inter = intersection(a, b)
    return inter / (a.area + b.area - inter)


def resize_nearest(values: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = values.shape
    if (h, w) == (height, width):
        return values
    rows = np.minimum((np.arange(height) * h) // height, h - 1)
    cols = np.minimum((np.arange(width) * w) // width, w - 1)
    return values[np.ix_(rows, cols)]


def gate_candidates(cands: CandidateSet, doa: str | None, gate: DoAGateConfig) -> list:
    if not gate.enabled or doa is None or doa == "self":
        return list(cands.candidates)
    W = cands.image_size[0]
    lo, hi = gate.band[0] * W, gate.band[1] * W
    return [c for c in cands.candidates if lo <= c.box.center_x <= hi]


def select_box(
    cands: CandidateSet,
    values,
    tau: float = DEFAULT_TAU,
    doa: str | None = None,
    gate: DoAGateConfig | None = None,
) -> SelectionResult:
    """Candidate with the highest IoU against the map's pseudo box.

    Ties go to the higher detector confidence, then the smaller x.
    """
    gate = gate or DoAGateConfig()
    if not cands.candidates:
        raise DomainError("fusion", "select_box", "no candidate boxes")
    W, H = cands.image_size
    m = resize_nearest(as_map(values), H, W)
    pb = pseudo_bbox(m > tau)
    if pb is None:
        raise DomainError("fusion", "select_box", "no localized region")
    kept = gate_candidates(cands, doa, gate)
    if not kept:
        raise DomainError("fusion", "select_box", "DoA gate eliminated all candidates")
    scored = [(iou(c.box, pb), c) for c in kept]
    best_iou, best = min(scored, key=lambda s: (-s[0], -s[1].confidence, s[1].box.x))
    return SelectionResult(best, best_iou, pb)


def dataset_metrics(pairs, iou_success_threshold: float = 0.5) -> dict:
    """Success rate at the IoU threshold and area under the success curve.

    ``pairs`` holds (predicted box or None, ground-truth box); a missing
    prediction counts as IoU 0. The curve is sampled at thresholds
    0, 0.05, ..., 1 (success means IoU >= threshold) and integrated with the
    trapezoid rule.
    """
    pairs = list(pairs)
    if not pairs:
        raise DomainError("fusion", "dataset_metrics", "empty input")
    ious = np.array([0.0 if p is None else iou(p, g) for p, g in pairs])
    curve = np.array([np.mean(ious >= t) for t in SWEEP])
    auc = float(np.sum((curve[1:] + curve[:-1]) / 2 * np.diff(SWEEP)))
    return {
        "ciou_rate": float(np.mean(ious >= iou_success_threshold)),
        "auc": auc,
        "curve": curve.tolist(),
        "ious": ious.tolist(),
    }


# -- file adapters ----------------------------------------------------------


def read_candidates(path: str | Path, image_size) -> CandidateSet:
    cands = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DomainError("fusion", "read_candidates", str(exc)) from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            box = BBox(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))
            cands.append(Candidate(box, str(d.get("class", "")), float(d.get("confidence", 1.0))))
        except (ValueError, KeyError, TypeError) as exc:
            raise DomainError("fusion", "read_candidates", f"{path}:{n}: {exc}") from exc
    return CandidateSet(cands, tuple(image_size))


def write_candidates(path: str | Path, cands) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        for c in cands:
            b = c.box
            f.write(json.dumps({"class": c.label, "confidence": c.confidence, "x": b.x, "y": b.y, "w": b.w, "h": b.h}) + "\n")
    return path


def write_pgm(path: str | Path, values) -> Path:
    m = as_map(values)
    data = np.round(m * 255).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode() + data.tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise DomainError("fusion", "read_pgm", f"{path}: only binary P5 PGM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise DomainError("fusion", "read_pgm", f"{path}: expected 8-bit PGM")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w) / 255.0


def read_map(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    t = read_tensor(path)
    if t.shape[0] != 1:
        raise DomainError("fusion", "read_map", f"{path}: expected a (1, H, W) tensor")
    return as_map(t[0])
