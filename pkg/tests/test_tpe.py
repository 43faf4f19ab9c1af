import math

import numpy as np
import pytest

from fairmask.errors import ConfigError, SearchError
from fairmask.search_space import SearchSpace, TrialConfig, full_ft, linear_readout
from fairmask.tpe import Observation, TpeConfig, _LogLrDensity, bit_probabilities, propose, split_history
from benchmarks import best_after

SPACE = SearchSpace(2)


def _obs(tid, value, mask=None, lr=1e-3, pruned=False):
    return Observation(tid, TrialConfig(mask or full_ft(2), lr), value, pruned)


def test_bit_probability_closed_form():
    good = [_obs(i, 1.0, full_ft(2)) for i in range(10)]
    bad = [_obs(10 + i, 0.0, linear_readout(2)) for i in range(30)]
    g, b = split_history(good + bad, 0.25)
    assert {o.trial_id for o in g} == set(range(10))
    assert np.allclose(bit_probabilities(g, SPACE, 1.0), 10.5 / 11)
    assert np.allclose(bit_probabilities(b, SPACE, 1.0), 0.5 / 31)


def test_split_ties_prefer_earlier_trial():
    hist = [_obs(3, 1.0), _obs(1, 1.0), _obs(2, 0.0), _obs(0, 0.5)]
    good, bad = split_history(hist, 0.25)
    assert [o.trial_id for o in good] == [1]
    assert [o.trial_id for o in bad] == [0, 2, 3]


def test_pruned_and_failed_go_to_bad():
    hist = [_obs(0, 0.9, pruned=True), _obs(1, None), _obs(2, 0.1), _obs(3, 0.2)]
    good, bad = split_history(hist, 0.25)
    assert [o.trial_id for o in good] == [3]
    assert {o.trial_id for o in bad} == {0, 1, 2}


def test_split_needs_two_completed():
    with pytest.raises(SearchError):
        split_history([_obs(0, 1.0), _obs(1, 0.5, pruned=True)], 0.25)


def test_startup_uses_prior():
    # with fewer than n_startup observations the proposal is exactly a prior draw
    from fairmask.search_space import sample_prior

    hist = [_obs(i, float(i)) for i in range(5)]
    a = propose(hist, SPACE, TpeConfig(n_startup=10), np.random.default_rng(3))
    b = sample_prior(SPACE, np.random.default_rng(3))
    assert a == b


def test_proposals_stay_in_bounds():
    space = SearchSpace(3, kinds=("mlp", "ln"), lr_range=(1e-4, 1e-2))
    rng = np.random.default_rng(0)
    hist = []
    for t in range(30):
        c = propose(hist, space, TpeConfig(n_startup=5), rng)
        assert space.contains(c.mask) and 1e-4 <= c.learning_rate <= 1e-2
        hist.append(Observation(t, c, float(rng.random())))


def test_lr_density_integrates_to_one():
    hist = [_obs(i, 0.0, lr=lr) for i, lr in enumerate([1e-5, 1e-4, 3e-4, 9e-2])]
    d = _LogLrDensity(hist, SearchSpace(2), TpeConfig())
    grid = np.linspace(-5, -1, 20001)
    pdf = np.exp([d.log_pdf(v) for v in grid])
    assert np.trapezoid(pdf, grid) == pytest.approx(1.0, abs=1e-3)


def test_tpe_concentrates_on_good_bits():
    good = [_obs(i, 1.0, full_ft(2), lr=1e-2) for i in range(10)]
    bad = [_obs(10 + i, 0.0, linear_readout(2), lr=1e-4) for i in range(30)]
    rng = np.random.default_rng(1)
    props = [propose(good + bad, SPACE, TpeConfig(), rng) for _ in range(20)]
    assert np.mean([p.mask.count() for p in props]) > 5
    assert np.median([math.log10(p.learning_rate) for p in props]) > -3


def test_bandwidth_floor_tracks_history_size():
    same = [_obs(i, 0.0, lr=1e-3) for i in range(9)]
    d = _LogLrDensity(same, SearchSpace(2, lr_range=(1e-5, 1e-1)), TpeConfig())
    assert d.bw == pytest.approx(4.0 / 10)


def test_fixed_seed_and_history_reproducible():
    hist = [_obs(i, float(i % 3), lr=10.0 ** -(1 + i % 4)) for i in range(12)]
    a = propose(hist, SPACE, TpeConfig(), np.random.default_rng(5))
    b = propose(hist, SPACE, TpeConfig(), np.random.default_rng(5))
    assert a == b


def test_good_bit_never_less_likely_after_adding_good_trial():
    base = [_obs(i, 0.0, linear_readout(2)) for i in range(4)]
    before = bit_probabilities(base, SPACE, 1.0)
    after = bit_probabilities(base + [_obs(9, 1.0, full_ft(2))], SPACE, 1.0)
    assert (after >= before).all()


def test_tpe_not_worse_than_random_on_hidden_mask():
    seeds = range(200, 210)
    t = [best_after(s, 60) for s in seeds]
    r = [best_after(s, 60, use_tpe=False) for s in seeds]
    assert np.median(t) >= np.median(r) - 0.5


@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=1.0), dict(n_candidates=0), dict(prior_weight=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TpeConfig(**kw)
