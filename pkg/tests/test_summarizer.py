import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_budget, exhaustive_two_means
from ugsv.classifier import ProbabilityCurve
from ugsv.summarizer import SummaryEDL, check_intervals, kmeans_baseline, skim_select, threshold_select

P4 = ProbabilityCurve("v", np.array([0.9, 0.2, 0.8, 0.7]))

BLOBS = [(0.0, 0.0), (0.2, 0.1), (2.2, 2.0), (4.0, 4.1), (4.1, 3.9)]
# exhaustive 2-means over BLOBS, frozen from oracles.exhaustive_two_means
BLOB_PARTS = [(0, 1), (2, 3, 4)]
BLOB_SECONDS = [0, 4]

curves = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40).map(lambda p: ProbabilityCurve("v", np.array(p)))


def _spans(edl):
    return [tuple(r) for r in edl.intervals]


# ------------------------------------------------------------------ skim --

@pytest.mark.parametrize("L, spans", [(2, [(0, 1), (2, 3)]), (3, [(0, 1), (2, 4)]), (0, []), (4, [(0, 4)])])
def test_skim_examples(L, spans):
    assert _spans(skim_select(P4, L)) == spans


def test_skim_theta_is_last_admitted_probability():
    assert skim_select(P4, 3).selected_theta == 0.7
    assert skim_select(P4, 0).selected_theta == 1.0


def test_skim_ties_go_to_earlier_second():
    assert _spans(skim_select(ProbabilityCurve("v", np.array([0.5, 0.5, 0.5])), 1)) == [(0, 1)]


@pytest.mark.parametrize("L", [-1, 5])
def test_skim_rejects_budget_outside_range(L):
    with pytest.raises(ValueError):
        skim_select(P4, L)


@given(curves, st.data())
def test_skim_selections_nest(curve, data):
    a = data.draw(st.integers(0, len(curve)))
    b = data.draw(st.integers(a, len(curve)))
    small, big = set(skim_select(curve, a).seconds()), set(skim_select(curve, b).seconds())
    assert small <= big
    assert len(small) == a and len(big) == b


@given(curves, st.data())
def test_skim_output_is_sorted_disjoint_within_budget(curve, data):
    L = data.draw(st.integers(0, len(curve)))
    edl = skim_select(curve, L)
    check_intervals(edl.intervals)
    assert edl.duration <= L
    for (s0, e0), (s1, e1) in zip(edl.intervals, edl.intervals[1:]):
        assert e0 < s1  # maximal runs never touch


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12), st.data())
def test_skim_budget_maximal_against_brute_force(p, data):
    L = data.draw(st.integers(0, len(p)))
    edl = skim_select(ProbabilityCurve("v", np.array(p)), L)
    count, mass = brute_force_budget(p, L)
    assert edl.duration == count
    assert math.isclose(math.fsum(p[t] for t in edl.seconds()), mass, rel_tol=1e-12, abs_tol=1e-12)


# ------------------------------------------------------------- threshold --

def test_threshold_examples():
    p3 = ProbabilityCurve("v", np.array([0.9, 0.2, 0.8]))
    assert _spans(threshold_select(p3, 0.5)) == [(0, 1), (2, 3)]
    assert _spans(threshold_select(P4, 1.0)) == []
    zero = ProbabilityCurve("v", np.array([0.0, 0.3, 0.0, 1.0]))
    assert _spans(threshold_select(zero, 0.0)) == [(1, 2), (3, 4)]


@pytest.mark.parametrize("theta", [-0.1, 1.1])
def test_threshold_rejects_theta_outside_unit_interval(theta):
    with pytest.raises(ValueError):
        threshold_select(P4, theta)


@given(curves, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_threshold_is_monotone_in_theta(curve, a, b):
    lo, hi = min(a, b), max(a, b)
    assert set(threshold_select(curve, hi).seconds()) <= set(threshold_select(curve, lo).seconds())


# ---------------------------------------------------------------- k-means --

def test_blob_oracle_partition():
    _, _, parts = exhaustive_two_means(BLOBS)
    assert sorted(parts) == BLOB_PARTS


def test_kmeans_baseline_takes_one_second_per_blob():
    edl = kmeans_baseline(np.array(BLOBS), 2, seed=0)
    assert sorted(edl.seconds().tolist()) == BLOB_SECONDS


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_baseline_identical_features_is_deterministic(seed):
    Z = np.ones((5, 3))
    a, b = kmeans_baseline(Z, 2, seed=seed), kmeans_baseline(Z, 2, seed=seed)
    assert _spans(a) == _spans(b)
    assert a.duration == 2


def test_kmeans_baseline_saturates():
    assert _spans(kmeans_baseline(np.random.default_rng(0).normal(size=(7, 4)), 7)) == [(0, 7)]


@pytest.mark.parametrize("L", [0, 6])
def test_kmeans_baseline_rejects_bad_length(L):
    with pytest.raises(ValueError):
        kmeans_baseline(np.zeros((5, 2)), L)


@given(st.integers(2, 30), st.integers(0, 2**31 - 1), st.data())
def test_kmeans_baseline_returns_exactly_L_seconds(T, seed, data):
    L = data.draw(st.integers(1, T))
    Z = np.random.default_rng(seed).normal(size=(T, 3))
    assert kmeans_baseline(Z, L, seed=seed).duration == L


# -------------------------------------------------------------------- EDL --

def test_edl_round_trip(tmp_path):
    edl = SummaryEDL("v", [(0, 2), (5, 9)], 0.3)
    edl.save(tmp_path / "s.csv")
    assert _spans(SummaryEDL.load(tmp_path / "s.csv")) == [(0, 2), (5, 9)]


@pytest.mark.parametrize("bad", [[(3, 3)], [(0, 4), (2, 5)], [(5, 6), (0, 1)]])
def test_edl_rejects_malformed_intervals(bad):
    with pytest.raises(ValueError):
        SummaryEDL("v", bad)
