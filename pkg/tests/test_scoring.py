import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_counts, random_change_pair

from lcchange import scoring
from lcchange.change import ChangeMap
from lcchange.errors import DimensionMismatchError, EmptyEvaluationError, InvalidCodeError, OutOfRangeError
from lcchange.scoring import f1_from_counts, iou_from_f1, score


def _all_classes_map():
    # every loss class and every gain class appears at least once
    t1 = np.array([[0, 1, 2, 3], [1, 2, 3, 0]])
    t2 = np.array([[1, 2, 3, 0], [0, 1, 2, 3]])
    return t1, t2


def test_identity_all_classes():
    from lcchange.change import diff_maps

    loss, gain = diff_maps(*_all_classes_map())
    rep = score((loss, gain), (loss, gain))
    assert rep.iou == (1.0,) * 8
    assert rep.mean_iou == 1.0
    assert rep.excluded == ()


def test_gain_impervious_half():
    truth_gain = np.zeros((10, 10), np.uint8)
    truth_gain.flat[:40] = 8
    pred_gain = np.zeros((10, 10), np.uint8)
    pred_gain.flat[10:60] = 8
    truth_loss = np.where(truth_gain > 0, 2, 0).astype(np.uint8)
    pred_loss = np.where(pred_gain > 0, 2, 0).astype(np.uint8)
    rep = score((pred_loss, pred_gain), (truth_loss, truth_gain))
    assert rep.intersection[7] == 30 and rep.union[7] == 60
    assert rep.iou[7] == 0.5


def test_empty_roi():
    z = np.zeros((3, 3), np.uint8)
    with pytest.raises(EmptyEvaluationError):
        score((z, z), (z, z), roi=z)


def test_invalid_codes_and_shapes():
    z = np.zeros((3, 3), np.uint8)
    bad = z.copy()
    bad[0, 0] = 6  # a gain code in the loss map
    with pytest.raises(InvalidCodeError):
        score((bad, z), (z, z))
    with pytest.raises(DimensionMismatchError):
        score((z, z), (np.zeros((3, 4), np.uint8),) * 2)


def test_empty_union_modes():
    loss, gain = np.zeros((2, 2), np.uint8), np.zeros((2, 2), np.uint8)
    loss[0, 0], gain[0, 0] = 1, 6
    ex = score((loss, gain), (loss, gain))
    assert ex.mean_iou == 1.0 and len(ex.excluded) == 6 and math.isnan(ex.iou[1])
    zero = score((loss, gain), (loss, gain), empty_union="zero")
    assert zero.mean_iou == pytest.approx(2 / 8)


def test_false_change_inflates_union():
    z = np.zeros((2, 2), np.uint8)
    loss, gain = z.copy(), z.copy()
    loss[0, 0], gain[0, 0] = 1, 6
    rep = score((loss, gain), (loss.copy(), gain.copy()))
    loss2, gain2 = loss.copy(), gain.copy()
    loss2[1, 1], gain2[1, 1] = 1, 6
    worse = score((loss2, gain2), (loss, gain))
    assert worse.union[0] == rep.union[0] + 1 and worse.iou[0] == 0.5


def test_accepts_changemap_and_counts_roi():
    loss, gain = random_change_pair(np.random.default_rng(0), (6, 6))
    roi = np.ones((6, 6), np.uint8)
    roi[:2] = 0
    rep = score(ChangeMap(loss, gain), (loss, gain), roi)
    assert rep.masked_pixels == 12 and rep.evaluated_pixels == 24


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(42)
    for _ in range(200):
        shape = tuple(rng.integers(1, 12, 2))
        pl, pg = random_change_pair(rng, shape)
        tl, tg = random_change_pair(rng, shape)
        roi = rng.uniform(size=shape) < 0.8
        if not roi.any():
            continue
        inter, union = brute_force_counts(pl, pg, tl, tg, roi)
        rep = score((pl, pg), (tl, tg), roi)
        assert list(rep.intersection) == inter and list(rep.union) == union


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 7))
def test_roi_zero_pixels_never_matter(seed, cls):
    rng = np.random.default_rng(seed)
    pl, pg = random_change_pair(rng, (8, 8))
    tl, tg = random_change_pair(rng, (8, 8))
    roi = rng.uniform(size=(8, 8)) < 0.5
    roi[0, 0] = True
    ql, qg = random_change_pair(rng, (8, 8))
    pl2 = np.where(roi, pl, ql)
    pg2 = np.where(roi, pg, qg)
    assert score((pl, pg), (tl, tg), roi) == score((pl2, pg2), (tl, tg), roi)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_a_correct_pixel_never_lowers_iou(seed):
    rng = np.random.default_rng(seed)
    pl, pg = random_change_pair(rng, (6, 6))
    tl, tg = random_change_pair(rng, (6, 6))
    before = score((pl, pg), (tl, tg), empty_union="zero")
    # copy one truth pixel into the prediction
    i, j = rng.integers(0, 6, 2)
    pl2, pg2 = pl.copy(), pg.copy()
    pl2[i, j], pg2[i, j] = tl[i, j], tg[i, j]
    after = score((pl2, pg2), (tl, tg), empty_union="zero")
    for c in {int(tl[i, j]), int(tg[i, j])} - {0}:
        assert after.iou[c - 1] >= before.iou[c - 1]


@pytest.mark.parametrize("f,iou", [(1.0, 1.0), (0.0, 0.0), (2 / 3, 0.5)])
def test_iou_from_f1(f, iou):
    assert iou_from_f1(f) == pytest.approx(iou, abs=1e-15)


@pytest.mark.parametrize("f", [-0.1, 1.01])
def test_iou_from_f1_range(f):
    with pytest.raises(OutOfRangeError):
        iou_from_f1(f)


def test_f1_identity_on_counts():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pl, pg = random_change_pair(rng, (10, 10))
        tl, tg = random_change_pair(rng, (10, 10))
        rep = score((pl, pg), (tl, tg))
        for c in range(8):
            p = (pl if c < 4 else pg) == c + 1
            t = (tl if c < 4 else tg) == c + 1
            tp, fp, fn = int((p & t).sum()), int((p & ~t).sum()), int((~p & t).sum())
            if tp + fp + fn:
                assert abs(iou_from_f1(f1_from_counts(tp, fp, fn)) - rep.iou[c]) <= 1e-12


def test_csv_and_summary():
    loss, gain = random_change_pair(np.random.default_rng(3), (8, 8))
    rep = score((loss, gain), (loss, gain))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "class,intersection,union,iou"
    assert [ln.split(",")[0] for ln in lines[1:]] == list(scoring.CLASS_NAMES) + ["mean"]
    assert rep.summary_line("x").endswith("| 1.000")


def test_boundary_displacement():
    a = np.zeros((20, 20), int)
    a[:, 10:] = 1
    b = np.zeros((20, 20), int)
    b[:, 13:] = 1
    assert scoring.boundary_displacement(a, a) == 0.0
    assert scoring.boundary_displacement(b, a) == pytest.approx(3.0)
    assert scoring.boundary_displacement(np.zeros((4, 4)), a[:4, 8:12]) == math.inf


def test_pixel_accuracy():
    assert scoring.pixel_accuracy(np.array([[0, 1], [2, 3]]), np.array([[0, 1], [3, 3]])) == 0.75
