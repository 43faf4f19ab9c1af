import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairmask.data import SplitRatios, SynthConfig, generate_synthetic, split
from fairmask.errors import ConfigError, DivergedError, SearchError
from fairmask.metrics import SubgroupReport
from fairmask.model import Architecture, init_random
from fairmask.orchestrator import (
    RunConfig,
    RunResult,
    TrialRecord,
    best_so_far,
    mask_frequency,
    run_baselines,
    run_search,
    trial_seed,
)
from fairmask.pruner import ShConfig
from fairmask.search_space import SearchSpace, TrialConfig, full_ft
from fairmask.trainer import EpochReport, TrainConfig

ARCH = Architecture(d_in=4, d_model=6, n_blocks=2, mlp_hidden=6)


def _report(v):
    return SubgroupReport(v, {0: v, 1: v}, v, 0.0, 0.0, 0.0)


def stub_trainer(theta0, mask, train, val, cfg, observer=None, on_step=None):
    """Objective grows with set bits; lr near 1e-3 is best; later epochs slightly better."""
    reports = []
    for e in range(cfg.epochs):
        v = mask.count() / mask.bits.size - 0.01 * abs(math.log10(cfg.learning_rate) + 3) + 0.001 * e
        rep = EpochReport(e, 0.0, _report(v))
        reports.append(rep)
        if observer is not None and observer(rep):
            rep.pruned = True
            break
    return theta0, reports


@pytest.fixture(scope="module")
def splits():
    cfg = SynthConfig(n_samples=200, d=4, group_fractions=(0.7, 0.3), noise_per_group=(0.1, 1.0),
                      shift_per_group=(0.0, 0.5))
    return split(generate_synthetic(cfg, 0), SplitRatios(), 0)


def _run(splits, trainer=stub_trainer, **kw):
    kw.setdefault("train_cfg", TrainConfig(epochs=8, warmup_epochs=1))
    kw.setdefault("space", SearchSpace(2))
    cfg = RunConfig(**kw)
    return run_search(cfg, init_random(ARCH, 0), *splits, trainer=trainer)


def test_trial_seeds():
    assert trial_seed(1, 2) == trial_seed(1, 2)
    seeds = {trial_seed(0, t) for t in range(1000)} | {trial_seed(1, t) for t in range(1000)}
    assert len(seeds) == 2000
    assert trial_seed(0, 0, stream=1) != trial_seed(0, 0)
    assert all(0 <= s < 2**63 for s in seeds)


def test_best_is_max_over_completed(splits):
    res = _run(splits, n_trials=30, run_seed=3)
    done = [r for r in res.records if r.completed]
    assert res.best_value == max(r.final_value for r in done)
    first = min(r.trial_id for r in done if r.final_value == res.best_value)
    assert res.best_trial == first
    assert res.trajectory[-1] == res.best_value


def test_exhaustive_small_space_finds_full_mask(splits):
    # B=2 has 64 masks; the stub objective peaks at the all-ones mask with lr 1e-3
    res = _run(splits, n_trials=60, run_seed=0, sh_cfg=ShConfig(4, 100))
    ceiling = 1.0 + 0.001 * 7
    assert res.best_mask.count() >= 5
    assert res.best_value <= ceiling
    all_masks = {tuple(bits) for bits in itertools.product([0, 1], repeat=6)}
    seen = {tuple(SearchSpace(2).flat_bits(r.config.mask).astype(int)) for r in res.records}
    assert seen <= all_masks


def test_pruning_happens_and_first_trial_survives(splits):
    res = _run(splits, n_trials=20, run_seed=1)
    states = [r.state for r in res.records]
    assert states[0] == "completed"
    assert "pruned" in states
    for r in res.records:
        if r.state == "pruned":
            assert r.final_value is None and r.rung_values


def test_trajectory_monotone(splits):
    res = _run(splits, n_trials=25, run_seed=2)
    assert all(a <= b for a, b in zip(res.trajectory, res.trajectory[1:]))


@given(st.lists(st.tuples(st.sampled_from(["completed", "pruned", "failed"]), st.floats(-1, 1)), max_size=30))
def test_best_so_far_property(rows):
    recs = []
    for i, (state, v) in enumerate(rows):
        r = TrialRecord(i, TrialConfig(full_ft(1), 1e-3), 0, state=state)
        if state == "completed":
            r.final_value = v
        recs.append(r)
    traj = best_so_far(recs)
    assert all(a <= b for a, b in zip(traj, traj[1:]))
    done = [r.final_value for r in recs if r.completed]
    if done:
        assert traj[-1] == max(done)
        first = next(i for i, r in enumerate(recs) if r.completed)
        assert len(traj) == len(recs) - first
    else:
        assert traj == []


def test_jsonl_deterministic(tmp_path, splits):
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        run_search(RunConfig(n_trials=12, space=SearchSpace(2), train_cfg=TrainConfig(epochs=8, warmup_epochs=1),
                             run_seed=9), init_random(ARCH, 0), *splits, log_path=p, trainer=stub_trainer)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    events = [json.loads(line) for line in paths[0].read_text().splitlines()]
    assert {e["event"] for e in events} <= {"proposed", "rung", "completed", "pruned", "failed"}
    assert sum(e["event"] == "proposed" for e in events) == 12


def test_parallel_workers_complete(splits):
    res = _run(splits, n_trials=16, run_seed=4, workers=3)
    assert [r.trial_id for r in res.records] == list(range(16))
    assert all(r.state in ("completed", "pruned") for r in res.records)


def test_diverged_trials_marked_failed(splits):
    def flaky(theta0, mask, train, val, cfg, observer=None, on_step=None):
        if mask.count() % 2:
            raise DivergedError("boom", epoch=0, step=0)
        return stub_trainer(theta0, mask, train, val, cfg, observer)

    res = _run(splits, trainer=flaky, n_trials=15, run_seed=5, sh_cfg=ShConfig(4, 100))
    for r in res.records:
        assert (r.state == "failed") == bool(r.config.mask.count() % 2)


def test_all_failed_raises(splits):
    def broken(*a, **k):
        raise DivergedError("boom", epoch=0, step=0)

    with pytest.raises(SearchError):
        _run(splits, trainer=broken, n_trials=3)


def test_result_roundtrip(splits):
    res = _run(splits, n_trials=6)
    back = RunResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert back.best_mask == res.best_mask and back.trajectory == res.trajectory
    assert [r.to_dict() for r in back.records] == [r.to_dict() for r in res.records]


def test_search_fraction_subsamples(splits):
    sizes = []

    def spy(theta0, mask, train, val, cfg, observer=None, on_step=None):
        sizes.append(train.n)
        return stub_trainer(theta0, mask, train, val, cfg, observer)

    _run(splits, trainer=spy, n_trials=3, search_fraction=0.5)
    assert set(sizes) == {sum(max(1, int(c * 0.5)) for c in splits[0].group_counts())}


def test_mismatched_space(splits):
    with pytest.raises(ConfigError):
        _run(splits, space=SearchSpace(3), n_trials=1)


def test_baselines_pick_best_lr(splits):
    table = run_baselines(init_random(ARCH, 0), splits, TrainConfig(epochs=2, warmup_epochs=0),
                          lr_grid=[1e-5, 1e-3, 1e-1], trainer=stub_trainer)
    assert set(table) == {"full_ft", "linear_readout", "attention_only", "layernorm_only", "scratch"}
    assert all(row.lr == 1e-3 for row in table.values())
    with pytest.raises(ConfigError):
        run_baselines(init_random(ARCH, 0), splits, TrainConfig(), methods=("lora",), trainer=stub_trainer)


def test_mask_frequency(splits):
    a = _run(splits, n_trials=4, run_seed=0)
    b = _run(splits, n_trials=4, run_seed=1)
    freq = mask_frequency([a, b])
    assert np.array_equal(freq, (a.best_mask.bits.astype(float) + b.best_mask.bits) / 2)
    c = _run(splits, n_trials=2, space=SearchSpace(2, kinds=("ln",)))
    with pytest.raises(ConfigError):
        mask_frequency([a, c])


def test_real_training_smoke(splits):
    res = run_search(RunConfig(n_trials=3, space=SearchSpace(2), train_cfg=TrainConfig(epochs=2, warmup_epochs=1)),
                     init_random(ARCH, 0), *splits)
    assert 0.0 <= res.test_report.min_auc <= 1.0
    assert res.model is not None
