import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agglomseg.evaluate import (contingency, evaluate, split_re, split_vi,
                                write_metrics_csv)
from oracles import pair_enumeration_re


def test_identical_segmentations_score_zero():
    seg = np.array([1, 1, 2, 2, 3])
    m = evaluate(seg, seg)
    assert m == {"VI_UE": 0.0, "VI_OE": 0.0, "RE_UE": 0.0, "RE_OE": 0.0}


def test_relabeled_segmentation_scores_zero():
    gt = np.array([1, 1, 2, 2, 3])
    seg = np.array([7, 7, 4, 4, 9])
    assert all(v == 0.0 for v in evaluate(seg, gt).values())


def test_split_of_one_region():
    gt = np.array([1, 1, 1, 1])
    seg = np.array([1, 1, 2, 2])
    m = evaluate(seg, gt)
    assert m["VI_UE"] == 0.0
    assert m["VI_OE"] == pytest.approx(1.0)
    assert m["RE_UE"] == 0.0
    assert m["RE_OE"] == pytest.approx(4 / 6)


def test_merge_of_two_regions_mirrors_split():
    gt = np.array([1, 1, 2, 2])
    seg = np.array([1, 1, 1, 1])
    m = evaluate(seg, gt)
    assert m["VI_OE"] == 0.0
    assert m["VI_UE"] == pytest.approx(1.0)
    assert m["RE_OE"] == 0.0
    assert m["RE_UE"] == pytest.approx(4 / 6)


def test_refinement_has_no_undersegmentation():
    rng = np.random.default_rng(0)
    gt = rng.integers(1, 4, size=200)
    seg = gt * 10 + rng.integers(0, 3, size=200)
    m = evaluate(seg, gt)
    assert m["VI_UE"] == 0.0 and m["RE_UE"] == 0.0
    assert m["VI_OE"] > 0 and m["RE_OE"] > 0


def test_contingency_matches_voxel_loop():
    rng = np.random.default_rng(1)
    seg = rng.integers(0, 5, size=(6, 7))
    gt = rng.integers(0, 4, size=(6, 7))
    t = contingency(seg, gt)
    ref = {}
    for s, g in zip(seg.ravel(), gt.ravel()):
        if s and g:
            ref[(int(g), int(s))] = ref.get((int(g), int(s)), 0) + 1
    assert t.counts == ref
    assert t.total == sum(ref.values())
    assert contingency(seg, gt, exclude_zero=False).total == seg.size


def test_vi_matches_direct_formula():
    rng = np.random.default_rng(2)
    seg = rng.integers(1, 6, size=300)
    gt = rng.integers(1, 5, size=300)
    z = seg.size
    oe = ue = 0.0
    for g in np.unique(gt):
        for s in np.unique(seg):
            n = np.sum((gt == g) & (seg == s))
            if n:
                oe -= n / z * math.log2(n / np.sum(gt == g))
                ue -= n / z * math.log2(n / np.sum(seg == s))
    vue, voe = split_vi(contingency(seg, gt))
    assert vue == pytest.approx(ue, abs=1e-12)
    assert voe == pytest.approx(oe, abs=1e-12)


labels = arrays(np.int64, st.integers(2, 60), elements=st.integers(1, 5))


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_rand_error_equals_pair_enumeration(data):
    seg = data.draw(labels)
    gt = data.draw(arrays(np.int64, seg.shape, elements=st.integers(1, 5)))
    re = split_re(contingency(seg, gt))
    assert (re.ue, re.oe) == pair_enumeration_re(seg, gt)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_swapping_roles_swaps_terms(data):
    seg = data.draw(labels)
    gt = data.draw(arrays(np.int64, seg.shape, elements=st.integers(1, 5)))
    a = evaluate(seg, gt)
    b = evaluate(gt, seg)
    assert a["VI_UE"] == b["VI_OE"] and a["VI_OE"] == b["VI_UE"]
    assert a["RE_UE"] == b["RE_OE"] and a["RE_OE"] == b["RE_UE"]


def test_scaled_reporting_units():
    re = split_re(contingency(np.array([1, 1, 2, 2]), np.array([1, 1, 1, 1])))
    assert re.oe_percent == pytest.approx(re.oe * 100)
    assert re.oe_scaled == pytest.approx(re.oe * 1e7)


def test_errors():
    with pytest.raises(ValueError):
        evaluate(np.array([1, 2]), np.array([1, 2, 3]))
    with pytest.raises(ValueError):
        split_re(contingency(np.array([1]), np.array([1])))
    with pytest.raises(ValueError):
        split_vi(contingency(np.array([0, 0]), np.array([1, 1])))


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv([{"delta": 0.1, "VI_UE": 0.5, "VI_OE": 0.25, "RE_UE": 0.0, "RE_OE": 1e-7},
                       {"VI_UE": 1, "VI_OE": 2, "RE_UE": 3, "RE_OE": 4}], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "delta,VI_UE,VI_OE,RE_UE,RE_OE"
    assert lines[1] == "0.1,0.5,0.25,0.0,1e-07"
    assert lines[2].startswith(",1.0,")
