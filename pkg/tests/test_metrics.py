import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasvit.metrics import (
    ScoreSet,
    Split,
    apcer_bpcer,
    bpcer_target_threshold,
    candidate_thresholds,
    eer,
    eer_threshold,
    evaluate,
    hter,
    load_report,
    save_report,
    tpr_at_fpr,
)

from . import oracles

SIX_LABELS = [0, 0, 0, 1, 1, 1]
SIX_SCORES = [0.1, 0.4, 0.6, 0.2, 0.7, 0.9]


@pytest.fixture
def six():
    return ScoreSet.from_arrays(SIX_LABELS, SIX_SCORES)


def random_set(seed, n=40, grid=12):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    labels[:2] = (0, 1)
    # coarse grid forces ties between and within classes
    scores = rng.integers(0, grid, size=n) / grid + labels * rng.uniform(0, 0.3)
    return labels, scores


# --- hand cases -----------------------------------------------------------------------
def test_six_sample_case(six):
    ap, bp = apcer_bpcer(six, 0.5)
    assert (ap, bp) == (1 / 3, 1 / 3)
    assert (ap + bp) / 2 == 1 / 3
    assert eer_threshold(six) == 0.5
    assert eer(six) == pytest.approx(1 / 3, abs=1e-15)
    assert hter(six, 0.5) == pytest.approx(1 / 3, abs=1e-15)
    assert tpr_at_fpr(six, 0.0) == pytest.approx(2 / 3, abs=1e-15)


def test_six_sample_bpcer_budget(six):
    op = bpcer_target_threshold(six, 1 / 3)
    assert op.threshold == pytest.approx(0.3) and op.bpcer == pytest.approx(1 / 3)
    assert not op.warning


def test_perfect_separation():
    s = ScoreSet.from_arrays([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
    assert eer(s) == 0.0
    assert eer_threshold(s) == 0.5 and apcer_bpcer(s, 0.5) == (0.0, 0.0)
    assert hter(s, 0.5) == 0.0
    assert tpr_at_fpr(s, 0.0) == 1.0


def test_tpr_full_budget_accepts_everything(six):
    assert tpr_at_fpr(six, 1.0) == 1.0


def test_same_set_as_dev_reproduces_acer():
    labels, scores = random_set(17)
    dev = ScoreSet.from_arrays(labels, scores, Split.DEV)
    r = evaluate(ScoreSet.from_arrays(labels, scores), dev)
    ap, bp = apcer_bpcer(dev, eer_threshold(dev))
    assert r.acer == (ap + bp) / 2


def test_threshold_zero_accepts_everything(six):
    assert apcer_bpcer(six, 0.0) == (1.0, 0.0)


def test_identical_scores():
    s = ScoreSet.from_arrays([0, 1, 0, 1], [0.5] * 4)
    assert hter(s, 0.5) == 0.5 and eer(s) == 0.5


def test_granularity_warning():
    s = ScoreSet.from_arrays([0, 1, 1, 0], [0.1, 0.6, 0.9, 0.2])
    with pytest.warns(UserWarning):
        op = bpcer_target_threshold(s, 0.1)
    assert op.warning and op.bpcer == 0.0


def test_invalid_inputs(six):
    with pytest.raises(ValueError):
        eer(ScoreSet.from_arrays([1, 1], [0.2, 0.3]))
    with pytest.raises(ValueError):
        bpcer_target_threshold(six, 1.5)
    with pytest.raises(ValueError):
        ScoreSet(["a", "a"], [0, 1], [0.1, 0.2])
    with pytest.raises(ValueError):
        ScoreSet.from_arrays([0, 2], [0.1, 0.2])


# --- oracle agreement -----------------------------------------------------------------
@pytest.mark.parametrize("seed", range(100))
def test_against_brute_force(seed):
    labels, scores = random_set(seed)
    s = ScoreSet.from_arrays(labels, scores)
    assert np.array_equal(candidate_thresholds(scores), oracles.candidates(scores))
    t_ref, e_ref = oracles.eer_point(labels, scores)
    assert eer_threshold(s) == t_ref
    assert abs(eer(s) - e_ref) <= 1e-12
    assert abs(hter(s, eer_threshold(s)) - eer(s)) <= 1e-12
    for t in (0.0, 0.25, 0.5, float(scores[3])):
        ref = oracles.rates(labels, scores, t)
        got = apcer_bpcer(s, t)
        assert abs(got[0] - ref[0]) <= 1e-12 and abs(got[1] - ref[1]) <= 1e-12
    for target in (0.0, 0.05, 0.2, 0.5):
        assert abs(tpr_at_fpr(s, target) - oracles.tpr_at_fpr(labels, scores, target)) <= 1e-12
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for target in (0.05, 0.1, 0.3, 1.0):
            op = bpcer_target_threshold(s, target)
            t_ref, b_ref = oracles.bpcer_operating_point(labels, scores, target)
            assert op.threshold == pytest.approx(t_ref, abs=1e-12)
            assert abs(op.bpcer - b_ref) <= 1e-12


# --- properties -------------------------------------------------------------------------
score_lists = st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=30)


@settings(max_examples=60, deadline=None)
@given(scores=score_lists, data=st.data())
def test_rates_monotone_in_threshold(scores, data):
    labels = [0, 1] + data.draw(st.lists(st.integers(0, 1), min_size=len(scores) - 2, max_size=len(scores) - 2))
    s = ScoreSet.from_arrays(labels, scores)
    ts = sorted(data.draw(st.lists(st.floats(0, 1), min_size=2, max_size=6)))
    rates = [apcer_bpcer(s, t) for t in ts]
    assert all(a[0] >= b[0] and a[1] <= b[1] for a, b in zip(rates, rates[1:]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_permutation_invariance(seed):
    labels, scores = random_set(seed, n=25)
    perm = np.random.default_rng(seed + 1).permutation(labels.size)
    a = evaluate(ScoreSet.from_arrays(labels, scores))
    b = evaluate(ScoreSet.from_arrays(labels[perm], scores[perm]))
    assert a == b


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_report_identities(seed):
    labels, scores = random_set(seed, n=30)
    r = evaluate(ScoreSet.from_arrays(labels, scores))
    assert r.acer == pytest.approx((r.apcer + r.bpcer) / 2)
    assert r.hter == pytest.approx(r.acer)
    assert 0 <= r.eer <= 1 and 0 <= r.tpr_at_fpr <= 1
    pct = r.as_percentages()
    assert pct["acer"] == pytest.approx(100 * r.acer) and pct["threshold"] == r.threshold


def test_dev_threshold_transfers(six):
    dev = ScoreSet.from_arrays([0, 1], [0.0, 1.0], Split.DEV)
    r = evaluate(six, dev)
    assert r.threshold == 0.5 and r.acer == pytest.approx(1 / 3)


# --- persistence ----------------------------------------------------------------------
def test_scoreset_round_trip(tmp_path):
    labels, scores = random_set(3)
    s = ScoreSet.from_arrays(labels, scores, Split.DEV)
    s.save(tmp_path / "s.csv")
    back = ScoreSet.load(tmp_path / "s.csv", Split.DEV)
    assert back.ids == s.ids and np.array_equal(back.labels, s.labels) and np.array_equal(back.scores, s.scores)


def test_load_rejects_unknown_label(tmp_path):
    (tmp_path / "s.csv").write_text("id,label,score\na,MAYBE,0.1\n")
    with pytest.raises(ValueError):
        ScoreSet.load(tmp_path / "s.csv")


def test_report_round_trip(tmp_path, six):
    r = evaluate(six)
    save_report(tmp_path / "r.csv", r)
    assert load_report(tmp_path / "r.csv") == {k: float(v) for k, v in vars(r).items()}
