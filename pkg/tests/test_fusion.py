import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hearsight.errors import DomainError
from hearsight.features import write_tensor
from hearsight.fusion import (
    BBox,
    Candidate,
    CandidateSet,
    DoAGateConfig,
    dataset_metrics,
    iou,
    pseudo_bbox,
    read_candidates,
    read_map,
    read_pgm,
    select_box,
    threshold_map,
    write_candidates,
    write_pgm,
)


def mask(box, W, H):
    m = np.zeros((H, W), dtype=bool)
    m[box.y : box.y + box.h, box.x : box.x + box.w] = True
    return m


def pixel_iou(a, b, W=None, H=None):
    W = W or max(a.x + a.w, b.x + b.w)
    H = H or max(a.y + a.h, b.y + b.h)
    ma, mb = mask(a, W, H), mask(b, W, H)
    return np.sum(ma & mb) / np.sum(ma | mb)


def all_boxes(W, H):
    return [BBox(x, y, w, h) for x in range(W) for y in range(H) for w in range(1, W - x + 1) for h in range(1, H - y + 1)]


# -- thresholding and pseudo boxes -----------------------------------------------


def test_threshold_examples():
    m = np.array([[0.2, 1.0], [0.7, 0.5]])
    assert not threshold_map(m, 1.0).any()
    assert threshold_map(np.full((3, 3), 0.01), 0.0).all()
    r, c = np.indices((4, 4))
    grid = 0.1 * (r + c)
    want = [[0.1 * (i + j) > 0.35 for j in range(4)] for i in range(4)]
    assert threshold_map(grid, 0.35).tolist() == want
    assert threshold_map(grid, 0.35).sum() == 6  # r + c in {4, 5, 6}


@given(st.lists(st.floats(0, 1), min_size=12, max_size=12), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone_in_tau(vals, t1, t2):
    m = np.reshape(vals, (3, 4))
    lo, hi = sorted((t1, t2))
    assert not np.any(threshold_map(m, hi) & ~threshold_map(m, lo))


def test_map_validation():
    for bad in ([[1.5]], [[-0.1]], [[np.nan]], np.zeros(3), np.zeros((0, 2))):
        with pytest.raises(DomainError):
            threshold_map(bad, 0.5)


def test_pseudo_bbox_examples():
    g = np.zeros((10, 10), bool)
    g[3, 5] = True
    assert pseudo_bbox(g) == BBox(5, 3, 1, 1)
    g = np.zeros((10, 10), bool)
    g[0, 0] = g[7, 9] = True
    assert pseudo_bbox(g) == BBox(0, 0, 10, 8)
    assert pseudo_bbox(np.zeros((4, 4), bool)) is None


def test_bbox_validation():
    with pytest.raises(DomainError):
        BBox(0, 0, 0, 3)
    with pytest.raises(DomainError):
        CandidateSet([Candidate(BBox(5, 5, 4, 4))], (8, 8))


# -- IoU ---------------------------------------------------------------------------


def test_iou_examples():
    a, b = BBox(0, 0, 4, 4), BBox(2, 2, 4, 4)
    assert iou(a, b) == pytest.approx(1 / 7, abs=1e-15)
    assert pixel_iou(a, b, 8, 8) == pytest.approx(1 / 7, abs=1e-15)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(4, 0, 2, 2)) == 0.0  # shared edge only


def test_iou_exhaustive_8x8():
    t0 = time.perf_counter()
    boxes = all_boxes(8, 8)
    assert len(boxes) == 36 * 36
    m = np.array([mask(b, 8, 8).ravel() for b in boxes], dtype=np.int64)
    inter = m @ m.T  # pixel counts, exact
    area = m.sum(axis=1)
    union = area[:, None] + area[None, :] - inter
    # upper triangle only; symmetry is checked on the 32x32 canvas below
    for i, a in enumerate(boxes):
        row = [iou(a, b) for b in boxes[i:]]
        assert row == (inter[i, i:] / union[i, i:]).tolist()
    assert time.perf_counter() - t0 < 10


coord = st.integers(0, 31)


@st.composite
def box32(draw):
    x, y = draw(coord), draw(coord)
    return BBox(x, y, draw(st.integers(1, 32 - x)), draw(st.integers(1, 32 - y)))


@given(box32(), box32())
def test_iou_matches_pixels_on_32x32(a, b):
    v = iou(a, b)
    assert v == pixel_iou(a, b, 32, 32)
    assert v == iou(b, a)
    assert 0 <= v <= 1 and (v == 1) == (a == b)


# -- selection ---------------------------------------------------------------------


def cset(*boxes, conf=None, size=(16, 16)):
    conf = conf or [1.0] * len(boxes)
    return CandidateSet([Candidate(b, f"c{i}", c) for i, (b, c) in enumerate(zip(boxes, conf))], size)


def map_of(box, size=(16, 16)):
    return mask(box, *size).astype(float)


def test_select_single_exact_match():
    gt = BBox(2, 3, 5, 4)
    r = select_box(cset(gt), map_of(gt))
    assert r.chosen.box == gt and r.iou == 1.0 and r.pseudo_box == gt


def test_select_highest_iou_of_three():
    gt = BBox(0, 0, 4, 4)
    a = BBox(2, 2, 4, 4)
    b = BBox(0, 0, 4, 2)
    c = BBox(3, 0, 2, 4)
    assert [pixel_iou(x, gt) for x in (a, b, c)] == pytest.approx([1 / 7, 0.5, 0.2], abs=1e-15)
    r = select_box(cset(a, b, c), map_of(gt))
    assert r.chosen.box == b and r.iou == 0.5
    assert select_box(cset(a, c), map_of(gt)).chosen.box == c


def test_select_tie_breaks():
    gt = BBox(4, 4, 4, 4)
    left, right = BBox(2, 4, 4, 4), BBox(6, 4, 4, 4)
    assert iou(left, gt) == iou(right, gt)
    assert select_box(cset(right, left), map_of(gt)).chosen.box == left
    assert select_box(cset(left, right, conf=[0.5, 0.9]), map_of(gt)).chosen.box == right


def test_select_errors():
    gt = BBox(0, 0, 4, 4)
    with pytest.raises(DomainError, match="no localized region"):
        select_box(cset(gt), np.zeros((16, 16)))
    with pytest.raises(DomainError):
        select_box(cset(), map_of(gt))
    gate = DoAGateConfig(enabled=True)
    with pytest.raises(DomainError, match="DoA gate eliminated all candidates"):
        select_box(cset(gt), map_of(gt), doa="left", gate=gate)


def test_gate_keeps_central_candidates():
    gt = BBox(0, 0, 4, 4)
    central = BBox(6, 0, 4, 4)
    r = select_box(cset(gt, central), map_of(gt), doa="front", gate=DoAGateConfig(True))
    assert r.chosen.box == central
    # self and no DoA bypass the gate
    assert select_box(cset(gt, central), map_of(gt), doa="self", gate=DoAGateConfig(True)).chosen.box == gt


def test_map_is_rescaled_to_image():
    small = np.zeros((4, 4))
    small[1:3, 1:3] = 1
    r = select_box(cset(BBox(4, 4, 8, 8), BBox(0, 0, 4, 4)), small)
    assert r.pseudo_box == BBox(4, 4, 8, 8) and r.iou == 1.0


def test_selection_optimality_on_random_fixtures():
    rng = np.random.default_rng(2024)
    W, H = 24, 18
    for _ in range(1000):
        values = rng.uniform(0, 1, (H, W)) * (rng.uniform(0, 1, (H, W)) < 0.2)
        boxes = []
        for _ in range(int(rng.integers(1, 7))):
            x, y = int(rng.integers(0, W)), int(rng.integers(0, H))
            boxes.append(BBox(x, y, int(rng.integers(1, W - x + 1)), int(rng.integers(1, H - y + 1))))
        conf = rng.choice([0.3, 0.6, 0.9], len(boxes)).tolist()
        cands = cset(*boxes, conf=conf, size=(W, H))
        tau = float(rng.choice([0.3, 0.5, 0.7]))
        on = values > tau
        if not on.any():
            with pytest.raises(DomainError):
                select_box(cands, values, tau)
            continue
        r = select_box(cands, values, tau)
        rows, cols = np.nonzero(on)
        pb = BBox(cols.min(), rows.min(), cols.max() - cols.min() + 1, rows.max() - rows.min() + 1)
        assert r.pseudo_box == pb
        assert r.iou == iou(r.chosen.box, pb)
        best = r.iou
        for c in cands.candidates:
            assert pixel_iou(c.box, pb, W, H) <= best + 1e-15


# -- dataset metrics ---------------------------------------------------------------


def test_metrics_perfect():
    boxes = [BBox(i, i, 3, 3) for i in range(5)]
    m = dataset_metrics(zip(boxes, boxes))
    assert m["ciou_rate"] == 1.0 and m["auc"] == pytest.approx(1.0, abs=1e-12)


def test_metrics_disjoint():
    pairs = [(BBox(0, 0, 2, 2), BBox(5, 5, 2, 2)), (None, BBox(1, 1, 1, 1))]
    m = dataset_metrics(pairs)
    assert m["ciou_rate"] == 0.0
    # curve is 1 at threshold 0 and 0 at the 20 other points: one trapezoid of width 0.05
    assert m["curve"] == [1.0] + [0.0] * 20
    assert m["auc"] == pytest.approx(0.5 * 0.05, abs=1e-15)


def test_metrics_half_and_half():
    gt = BBox(0, 0, 4, 4)
    m = dataset_metrics([(gt, gt), (BBox(0, 0, 4, 2), gt)])  # IoU 1 and 0.5
    assert m["ciou_rate"] == 1.0
    assert dataset_metrics([(gt, gt), (BBox(0, 0, 4, 1), gt)])["ciou_rate"] == 0.5
    with pytest.raises(DomainError):
        dataset_metrics([])


# -- files -------------------------------------------------------------------------


def test_pgm_roundtrip(tmp_path, rng):
    m = np.round(rng.uniform(0, 1, (5, 7)) * 255) / 255
    p = write_pgm(tmp_path / "m.pgm", m)
    assert p.read_bytes().startswith(b"P5\n7 5\n255\n")
    assert np.allclose(read_pgm(p), m, atol=1e-12)
    assert np.allclose(read_map(p), m, atol=1e-12)


def test_pgm_with_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    assert read_pgm(p).tolist() == [[0.0, 1.0]]
    p.write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(DomainError):
        read_pgm(p)


def test_tensor_map(tmp_path):
    m = np.linspace(0, 1, 12).reshape(1, 3, 4)
    assert np.allclose(read_map(write_tensor(tmp_path / "m.pmx", m)), m[0], atol=1e-7)
    with pytest.raises(DomainError):
        read_map(write_tensor(tmp_path / "two.pmx", np.zeros((2, 3, 4))))


def test_candidates_roundtrip(tmp_path):
    cands = [Candidate(BBox(1, 2, 3, 4), "dog", 0.9), Candidate(BBox(0, 0, 8, 8), "car", 0.4)]
    p = write_candidates(tmp_path / "c.jsonl", cands)
    back = read_candidates(p, (10, 10))
    assert back.candidates == cands
    p.write_text('{"x": 1}\n')
    with pytest.raises(DomainError, match=":1:"):
        read_candidates(p, (10, 10))
