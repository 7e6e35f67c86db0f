import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidrefine.geometry import BoxGeometry, Detection, iou, iou_array, nms


def corners(x1, y1, x2, y2):
    return BoxGeometry.from_corners(x1, y1, x2, y2)


def ref_iou(a: BoxGeometry, b: BoxGeometry) -> float:
    # independent corner arithmetic
    ax = (a.cx - a.w / 2, a.cx + a.w / 2)
    ay = (a.cy - a.h / 2, a.cy + a.h / 2)
    bx = (b.cx - b.w / 2, b.cx + b.w / 2)
    by = (b.cy - b.h / 2, b.cy + b.h / 2)
    ix = max(0.0, min(ax[1], bx[1]) - max(ax[0], bx[0]))
    iy = max(0.0, min(ay[1], by[1]) - max(ay[0], by[0]))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


boxes = st.builds(
    BoxGeometry,
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
)


def test_iou_identical():
    b = BoxGeometry(0.4, 0.5, 0.2, 0.3)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(corners(0, 0, 0.1, 0.1), corners(0.5, 0.5, 0.6, 0.6)) == 0.0


def test_iou_partial_overlap():
    assert iou(corners(0, 0, 0.2, 0.2), corners(0.1, 0.1, 0.3, 0.3)) == pytest.approx(1 / 7, rel=1e-12)


def test_iou_degenerate_pair_is_zero():
    p = BoxGeometry(0.5, 0.5, 0.0, 0.0)
    assert iou(p, p) == 0.0
    assert iou(p, BoxGeometry(0.5, 0.5, 0.2, 0.2)) == 0.0


def test_negative_size_rejected():
    with pytest.raises(ValueError):
        BoxGeometry(0.5, 0.5, -0.1, 0.2)
    with pytest.raises(ValueError):
        Detection(0, BoxGeometry(0.5, 0.5, 0.1, 0.1), -1.0)


def test_corner_round_trip():
    b = BoxGeometry(0.25, 0.75, 0.5, 0.25)
    assert BoxGeometry.from_corners(*b.corners()) == b


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(min(ref_iou(a, b), 1.0), abs=1e-12)


@given(boxes)
def test_iou_self_is_one(a):
    # corner round-off costs about eps/w relative, so skip near-degenerate boxes
    if min(a.w, a.h) >= 1e-6:
        assert iou(a, a) == pytest.approx(1.0, abs=1e-9)


@given(st.lists(boxes, min_size=1, max_size=6), st.lists(boxes, min_size=1, max_size=6))
def test_iou_array_matches_scalar(xs, ys):
    A = np.array([b.as_array() for b in xs])
    Bm = np.array([b.as_array() for b in ys])
    M = iou_array(A[:, None, :], Bm[None, :, :])
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            assert M[i, j] == pytest.approx(iou(a, b), abs=1e-12)


# -- NMS ----------------------------------------------------------------------

def greedy_rule_holds(dets, kept, thr):
    """Exhaustive check of the greedy assignment.

    Walking the inputs in (score desc, class, index) order, a detection must be
    kept exactly when no earlier kept detection of its class overlaps it at
    or above ``thr``.
    """
    kept_ids = {id(d) for d in kept}
    if len(kept_ids) != len(kept) or not kept_ids <= {id(d) for d in dets}:
        return False
    ranked = sorted(range(len(dets)), key=lambda k: (-dets[k].score, dets[k].class_id, k))
    earlier_kept = []
    for k in ranked:
        d = dets[k]
        free = all(ref_iou(d.box, e.box) < thr for e in earlier_kept if e.class_id == d.class_id)
        if free != (id(d) in kept_ids):
            return False
        if free:
            earlier_kept.append(d)
    return [id(d) for d in kept] == [id(e) for e in earlier_kept]


def random_dets(rng, n, n_classes=3):
    out = []
    for _ in range(n):
        w, h = rng.uniform(0.05, 0.4, size=2)
        out.append(Detection(int(rng.integers(n_classes)),
                             BoxGeometry(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), w, h),
                             float(rng.choice([rng.uniform(), 0.5]))))
    return out


def test_nms_empty_and_single():
    assert nms([], 0.5) == []
    d = Detection(1, BoxGeometry(0.5, 0.5, 0.2, 0.2), 0.3)
    assert nms([d], 0.5) == [d]


def test_nms_identical_boxes_same_class():
    b = BoxGeometry(0.5, 0.5, 0.2, 0.2)
    lo, hi = Detection(0, b, 0.8), Detection(0, b, 0.9)
    assert nms([lo, hi], 0.5) == [hi]


def test_nms_never_suppresses_across_classes():
    b = BoxGeometry(0.5, 0.5, 0.2, 0.2)
    dets = [Detection(0, b, 0.9), Detection(1, b, 0.8)]
    assert nms(dets, 0.5) == dets


def test_nms_tie_order():
    b1 = BoxGeometry(0.2, 0.2, 0.1, 0.1)
    b2 = BoxGeometry(0.8, 0.8, 0.1, 0.1)
    dets = [Detection(2, b1, 0.5), Detection(1, b2, 0.5), Detection(1, b1, 0.5)]
    assert nms(dets, 0.5) == [dets[1], dets[2], dets[0]]


def test_nms_rejects_bad_threshold():
    with pytest.raises(ValueError):
        nms([], 1.5)


@pytest.mark.parametrize("seed", range(20))
def test_nms_matches_greedy_oracle(seed):
    rng = np.random.default_rng(seed)
    dets = random_dets(rng, 20)
    assert greedy_rule_holds(dets, nms(dets, 0.5), 0.5)


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.integers(0, 20), st.sampled_from([0.0, 0.3, 0.5, 1.0]))
def test_nms_properties(seed, n, thr):
    dets = random_dets(np.random.default_rng(seed), n)
    kept = nms(dets, thr)
    assert greedy_rule_holds(dets, kept, thr)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            if a.class_id == b.class_id:
                assert iou(a.box, b.box) < thr or thr == 0.0 and iou(a.box, b.box) == 0.0
    if thr == 1.0:
        # only exact duplicates (IoU 1) can be removed
        assert len(kept) == len(dets) or any(
            iou(a.box, b.box) >= 1.0 for a in dets for b in dets if a is not b and a.class_id == b.class_id
        )
