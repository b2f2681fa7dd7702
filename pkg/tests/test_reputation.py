import pytest
from hypothesis import given, strategies as st

from rspc.encoding import node_id
from rspc.reputation import (Event, ReputationParams, ReputationRecord, Tier, classify,
                             initial_record, top_percentile, update)


def rec(i, score):
    return ReputationRecord(node_id=node_id(i), score=score)


def test_initial_record():
    r = initial_record(node_id(1))
    assert r.score == 0.5
    assert r.good_events == r.bad_events == 0
    assert r.deposit == ReputationParams().initial_deposit
    assert initial_record(node_id(1)) == r


def test_initial_classification_is_good_threshold_boundary():
    # the default good threshold equals the initial score: fresh nodes are Good
    assert classify(0.5) is Tier.GOOD
    assert classify(0.5, ReputationParams(good_threshold=0.6)) is Tier.NORMAL


@pytest.mark.parametrize("score,tier", [
    (0.2, Tier.MALICIOUS), (0.0, Tier.MALICIOUS), (0.21, Tier.NORMAL),
    (0.49, Tier.NORMAL), (0.5, Tier.GOOD), (1.0, Tier.GOOD),
])
def test_classify(score, tier):
    assert classify(score) is tier


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
def test_classify_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        classify(bad)


def test_update_examples():
    r = rec(1, 0.5)
    down = update(r, Event.DETECTED_MISBEHAVIOR)
    assert down.score == pytest.approx(0.4)
    assert down.bad_events == 1
    assert update(rec(1, 1.0), Event.CORRECT_PARTICIPATION).score == 1.0
    assert update(rec(1, 0.05), Event.DETECTED_MISBEHAVIOR).score == 0.0


def test_update_slashes_deposit():
    r = initial_record(node_id(3))
    assert update(r, Event.DETECTED_MISBEHAVIOR).deposit == 90
    assert update(r, Event.CORRECT_PARTICIPATION).deposit == 100


@given(st.floats(0, 1), st.lists(st.sampled_from(list(Event)), max_size=60))
def test_score_stays_clamped(score, events):
    r = rec(0, score)
    for e in events:
        r = update(r, e)
        assert 0.0 <= r.score <= 1.0
        assert r.deposit >= 0


@given(st.floats(0, 1), st.floats(0, 1))
def test_classify_monotone(a, b):
    lo, hi = sorted((a, b))
    if classify(lo) is not Tier.MALICIOUS:
        assert classify(hi) is not Tier.MALICIOUS


def test_top_percentile_examples():
    records = [rec(i, (i % 7) / 7) for i in range(20)]
    assert len(top_percentile(records, 0.45)) == 9
    assert top_percentile([rec(5, 0.3)], 0.01) == [node_id(5)]
    a, b = sorted([node_id("a"), node_id("b")])
    tied = [ReputationRecord(b, 0.7), ReputationRecord(a, 0.7)]
    assert top_percentile(tied, 1.0) == [a, b]
    with pytest.raises(ValueError):
        top_percentile([], 0.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 1), st.floats(0.01, 1))
def test_top_percentile_prefix_stable(scores, p1, p2):
    records = [rec(i, s) for i, s in enumerate(scores)]
    lo, hi = sorted((p1, p2))
    small, big = top_percentile(records, lo), top_percentile(records, hi)
    assert big[:len(small)] == small
    assert top_percentile(list(reversed(records)), lo) == small
