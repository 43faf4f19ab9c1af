import itertools

import pytest
from hypothesis import given, strategies as st

from fairmask.errors import ConfigError
from fairmask.pruner import Decision, RungState, ShConfig, promoted, report


def _state(total=30, eta=4, r0=1):
    return RungState(ShConfig(eta, r0), total)


def test_rung_epochs():
    assert ShConfig(4, 1).rungs(30) == [1, 4, 16]
    assert ShConfig(4, 1).rungs(16) == [1, 4]
    assert ShConfig(3, 2).rungs(100) == [2, 6, 18, 54]
    assert ShConfig(4, 40).rungs(30) == []


@pytest.mark.parametrize("n,keep", [(64, 16), (5, 1), (1, 1), (4, 1), (8, 2), (17, 4)])
def test_promotion_counts(n, keep):
    s = _state()
    for t in range(n):
        report(s, t, 1, float(t))
    assert len(promoted(s, 0)) == keep
    assert promoted(s, 0) == set(range(n - keep, n))


def test_first_reporter_continues():
    s = _state()
    assert report(s, 7, 1, -100.0) is Decision.CONTINUE


def test_decreasing_stream_prunes_after_first_few():
    s = _state()
    decisions = [report(s, t, 1, float(-t)) for t in range(8)]
    assert decisions[0] is Decision.CONTINUE
    assert all(d is Decision.PRUNE for d in decisions[1:])


def test_increasing_stream_always_continues():
    s = _state()
    assert all(report(s, t, 1, float(t)) is Decision.CONTINUE for t in range(20))


def test_non_rung_epoch_continues_without_recording():
    s = _state()
    assert report(s, 0, 2, 0.0) is Decision.CONTINUE
    assert all(not v for v in s.values.values())


def test_duplicate_report_rejected():
    s = _state()
    report(s, 0, 4, 0.5)
    with pytest.raises(ConfigError):
        report(s, 0, 4, 0.6)


def test_ties_favour_lower_trial_id():
    s = _state()
    for t in range(4):
        report(s, t, 1, 1.0)
    assert promoted(s, 0) == {0}


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=80))
def test_continue_count_matches_top_fraction(values):
    # a trial continues iff it ranks in the top max(1, n//4) of values seen so far
    s = _state()
    for t, v in enumerate(values):
        d = report(s, t, 1, v)
        seen = values[: t + 1]
        rank = sum(1 for u, tid in zip(seen, itertools.count()) if (u > v) or (u == v and tid < t))
        assert (d is Decision.CONTINUE) == (rank < max(1, len(seen) // 4))


def test_exhaustive_small_orderings():
    # every arrival order of 5 distinct values: the k-th arrival continues iff it is best so far
    for perm in itertools.permutations(range(5)):
        s = _state()
        best = -1
        for t, v in enumerate(perm):
            d = report(s, t, 1, float(v))
            n = t + 1
            rank = sum(u > v for u in perm[:n])
            assert (d is Decision.CONTINUE) == (rank < max(1, n // 4))
            best = max(best, v)
        assert len(promoted(s, 0)) == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        ShConfig(1, 1)
    with pytest.raises(ConfigError):
        ShConfig(4, 0)
