import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sabground.metrics import iou, mean_iou, rank_correlation


def brute_force_iou(pred, gt):
    inter = union = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        inter += int(p and g)
        union += int(p or g)
    return 1.0 if union == 0 else inter / union


def brute_force_spearman(a, b):
    a, b = list(np.ravel(a)), list(np.ravel(b))

    def ranks(v):
        # average rank: 1 + (#smaller) + (#equal - 1) / 2, counted pairwise
        out = []
        for x in v:
            smaller = sum(1 for y in v if y < x)
            equal = sum(1 for y in v if y == x)
            out.append(1 + smaller + (equal - 1) / 2)
        return out

    ra, rb = ranks(a), ranks(b)
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    if va == 0 or vb == 0:
        return 0.0
    return cov / (va * vb) ** 0.5


def test_iou_identical():
    m = np.eye(4, dtype=np.uint8)
    assert mean_iou([m], [m]) == 1.0


def test_iou_partial_overlap():
    pred = np.zeros((4, 4), dtype=np.uint8)
    gt = np.zeros((4, 4), dtype=np.uint8)
    pred[0, :4] = 1
    gt[0, 2:4] = 1
    gt[1, 0:2] = 1
    assert brute_force_iou(pred, gt) == pytest.approx(2 / 6)
    assert mean_iou([pred], [gt]) == pytest.approx(0.333333, abs=1e-6)


def test_iou_empty_union_is_one():
    z = np.zeros((3, 3), dtype=np.uint8)
    assert mean_iou([z], [z]) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        mean_iou([np.zeros((2, 2))], [np.zeros((2, 3))])


def test_mean_iou_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        shape = tuple(rng.integers(1, 9, size=2))
        preds = [rng.random(shape) < rng.random() for _ in range(n)]
        gts = [rng.random(shape) < rng.random() for _ in range(n)]
        oracle = sum(brute_force_iou(p, g) for p, g in zip(preds, gts)) / n
        assert abs(mean_iou(preds, gts) - oracle) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.bool_, (5, 6)), arrays(np.bool_, (5, 6)))
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert (v == 1.0) == bool(np.array_equal(a, b))


def test_rank_identity_and_reversal():
    x = np.random.default_rng(1).permutation(12).reshape(3, 4).astype(float)
    assert rank_correlation(x, x) == pytest.approx(1.0, abs=1e-15)
    assert rank_correlation(-x, x) == pytest.approx(-1.0, abs=1e-15)


def test_rank_with_ties():
    a, b = np.array([1, 2, 2, 3.0]), np.array([1, 3, 2, 2.0])
    oracle = brute_force_spearman(a, b)
    assert rank_correlation(a, b) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(0.5)


def test_rank_constant_map_is_zero():
    assert rank_correlation(np.ones((2, 2)), np.arange(4.0).reshape(2, 2)) == 0.0


def test_rank_too_small():
    with pytest.raises(ValueError):
        rank_correlation(np.ones(1), np.ones(1))


def test_rank_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        # small integer range forces plenty of ties
        a = rng.integers(0, 5, size=n).astype(float)
        b = rng.integers(0, 5, size=n).astype(float) + 0.5 * rng.random(n) * (rng.random() < 0.5)
        assert abs(rank_correlation(a, b) - brute_force_spearman(a, b)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_rank_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(20), rng.standard_normal(20)
    base = rank_correlation(a, b)
    assert rank_correlation(np.exp(a), b) == pytest.approx(base, abs=1e-12)
    assert rank_correlation(a, 3 * b ** 3 + 1) == pytest.approx(base, abs=1e-12)
