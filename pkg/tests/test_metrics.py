import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_counts, brute_scores, windowed_ssim
from reettt.metrics import (ConfusionCounts, MetricReport, confusion, csi, ets, evaluate, far, mse, pod, ssim,
                            tau_key)


def hand_grid():
    y = np.zeros((8, 8))
    p = np.zeros((8, 8))
    for r, c in [(0, 0), (0, 1), (0, 2)]:
        y[r, c] = p[r, c] = 40.0
    y[5, 5] = 30.0  # miss
    p[7, 0] = p[7, 7] = 25.0  # false alarms exactly at the threshold
    return p, y


def test_hand_grid_counts():
    p, y = hand_grid()
    assert confusion(p, y, 25.0) == ConfusionCounts(3, 1, 2, 58)
    assert confusion(y, y, 25.0).misses == 0
    assert confusion(p, y, 71.0) == ConfusionCounts(0, 0, 0, 64)


def test_hand_scores():
    c = ConfusionCounts(3, 1, 2, 58)
    assert pod(c) == 0.75 and far(c) == 0.4 and csi(c) == 0.5
    assert abs(ets(c) - 2.6875 / 5.6875) <= 1e-12
    assert abs(ets(c) - 0.47253) < 1e-5


def test_perfect_and_empty_cases():
    c = ConfusionCounts(5, 0, 0, 59)
    assert (pod(c), far(c), csi(c), ets(c)) == (1.0, 0.0, 1.0, 1.0)
    empty = ConfusionCounts(0, 0, 0, 64)
    assert (pod(empty), far(empty), csi(empty), ets(empty)) == (None, None, None, None)
    assert ets(ConfusionCounts(0, 0, 0, 0)) is None


def test_threshold_is_inclusive():
    assert confusion(np.array([25.0]), np.array([25.0]), 25.0).hits == 1
    assert confusion(np.array([np.nextafter(25.0, 0)]), np.array([25.0]), 25.0).misses == 1


def test_confusion_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


def test_binary_pairs_against_brute_force_sample():
    # the exhaustive 2^9 x 2^9 sweep lives in the acceptance suite
    grids = [np.array(bits, dtype=float).reshape(3, 3) for bits in itertools.product((0, 1), repeat=9)]
    rng = np.random.default_rng(0)
    for i, j in rng.integers(0, 512, (3000, 2)):
        c = confusion(grids[i], grids[j], 1.0)
        ref = brute_counts(grids[i], grids[j], 1.0)
        assert (c.hits, c.misses, c.false_alarms, c.correct_negatives) == ref
        assert (pod(c), far(c), csi(c), ets(c)) == brute_scores(*ref)


def small_counts():
    return st.tuples(*[st.integers(0, 30)] * 4).filter(lambda t: sum(t) <= 30)


@settings(max_examples=300, deadline=None)
@given(small_counts())
def test_score_relations(t):
    c = ConfusionCounts(*t)
    assert c.total == sum(t)
    p, f, s, e = pod(c), far(c), csi(c), ets(c)
    if s is not None:
        assert 0 <= s <= 1
        if p is not None:
            assert s <= p
        if f is not None:
            assert s <= 1 - f + 1e-15
        r = (c.hits + c.false_alarms) * (c.hits + c.misses) / c.total
        if e is not None and r >= 0:
            assert e <= s + 1e-15
    if e is not None:
        assert -1 / 3 - 1e-15 <= e <= 1 + 1e-15
    for v in (p, f):
        assert v is None or 0 <= v <= 1


def test_ets_lower_bound_is_attained():
    # H=0, M=FA=1, CN=0: R = 0.5 and ETS = -0.5 / 1.5 exactly
    assert ets(ConfusionCounts(0, 1, 1, 0)) == pytest.approx(-1 / 3, abs=1e-15)


def test_counts_add():
    a, b = ConfusionCounts(1, 2, 3, 4), ConfusionCounts(5, 6, 7, 8)
    assert a + b == ConfusionCounts(6, 8, 10, 12)


def test_mse_and_ssim_basics():
    x = np.random.default_rng(1).uniform(0, 70, (16, 16))
    assert mse(x, x) == 0.0 and ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert mse(np.full((4, 4), 3.0), np.full((4, 4), 5.5)) == 6.25
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_windowed_oracle(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 70, (2, 16, 16))
    assert abs(ssim(x, y) - windowed_ssim(x, y)) <= 1e-9
    z = np.clip(x + rng.normal(0, 5, x.shape), 0, 70)
    assert abs(ssim(x, z) - windowed_ssim(x, z)) <= 1e-9


def test_evaluate_perfect_sequence():
    y = np.random.default_rng(2).uniform(0, 70, (1, 3, 8, 8))
    rep = evaluate(y, y)
    assert set(rep.scores) == {"10", "25", "35"}
    for block in rep.scores.values():
        for name, ideal in (("pod", 1.0), ("far", 0.0), ("csi", 1.0)):
            assert all(v is None or v == ideal for v in block[name])
    assert rep.mse == [0.0] * 3


def test_two_lead_aggregation_by_hand():
    p = np.zeros((1, 2, 8, 8))
    y = np.zeros((1, 2, 8, 8))
    y[0, 0, 0, :2] = 30.0
    p[0, 0, 0, 0] = 30.0  # lead 0: H=1, M=1 -> CSI 0.5
    # lead 1 has no events: CSI undefined
    rep = evaluate(p, y, thresholds=(25,))
    assert rep.scores["25"]["csi"] == [0.5, None]
    agg = rep.aggregates()["thresholds"]["25"]
    assert agg["csi"] == 0.5 and agg["csi_excluded"] == 1
    y[0, 1, 1, 1] = p[0, 1, 1, 1] = 40.0  # lead 1: CSI 1
    assert evaluate(p, y, thresholds=(25,)).mean("csi", 25) == 0.75


def test_report_round_trip_and_settings():
    rng = np.random.default_rng(3)
    p, y = rng.uniform(0, 70, (2, 2, 2, 8, 8))
    rep = evaluate(p, y, fingerprint="abc", settings={"mask": "both"})
    back = MetricReport.from_json(rep.to_json())
    assert back == rep and back.to_json() == rep.to_json()
    assert rep.settings["binarization"] == ">= tau" and rep.settings["samples"] == 2
    assert tau_key(25.0) == "25" and tau_key(2.5) == "2.5"
    with pytest.raises(ValueError):
        evaluate(p, y[:1])
