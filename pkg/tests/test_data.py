import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairmask.data import (
    REFERENCE_SYNTH,
    Dataset,
    SplitRatios,
    SynthConfig,
    balanced_subsample,
    binarize_attribute,
    generate_synthetic,
    load_csv,
    split,
    split_indices,
    write_csv,
)
from fairmask.errors import ConfigError, ParseError


def _toy(n=100, groups=None, seed=0):
    rng = np.random.default_rng(seed)
    if groups is None:
        groups = rng.integers(0, 2, size=n)
    return Dataset(rng.normal(size=(len(groups), 3)), rng.integers(0, 2, size=len(groups)), groups)


class TestSynthetic:
    def test_equal_fractions(self):
        cfg = SynthConfig(n_samples=100, d=4, group_fractions=(0.5, 0.5),
                          noise_per_group=(0.1, 0.1), shift_per_group=(0, 0))
        ds = generate_synthetic(cfg, seed=3)
        assert ds.group_counts().tolist() == [50, 50]

    def test_remainder_goes_to_group_zero(self):
        cfg = SynthConfig(n_samples=10, d=2, group_fractions=(0.35, 0.35, 0.3),
                          noise_per_group=(0, 0, 0), shift_per_group=(0, 0, 0))
        assert generate_synthetic(cfg, 0).group_counts().tolist() == [4, 3, 3]

    def test_deterministic(self):
        a = generate_synthetic(REFERENCE_SYNTH, 11)
        b = generate_synthetic(REFERENCE_SYNTH, 11)
        assert a.equals(b)
        assert not a.equals(generate_synthetic(REFERENCE_SYNTH, 12))

    def test_labels_roughly_balanced(self):
        ds = generate_synthetic(REFERENCE_SYNTH, 0)
        assert 0.35 < ds.labels.mean() < 0.65

    @pytest.mark.parametrize("kw", [
        dict(group_fractions=(1.0,), noise_per_group=(0.1,), shift_per_group=(0.0,)),
        dict(group_fractions=(0.6, 0.6)),
        dict(noise_per_group=(0.1,)),
        dict(noise_per_group=(0.1, -1.0)),
    ])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            SynthConfig(**kw)

    def test_json_roundtrip(self):
        assert SynthConfig.from_json(REFERENCE_SYNTH.to_json()) == REFERENCE_SYNTH


class TestCsv:
    def test_three_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,f1,label,group\n1.0,2e-3,0,a\n-1,0.5,1,b\n3,4,0,a\n", encoding="utf-8")
        ds = load_csv(path)
        assert ds.n == 3 and ds.n_groups == 2 and ds.d == 2
        assert ds.groups.tolist() == [0, 1, 0]
        assert ds.labels.tolist() == [0, 1, 0]
        assert ds.group_names == ("a", "b")
        assert ds.features[0, 1] == 2e-3

    def test_non_binary_label(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,label,group\n1.0,2,a\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_csv(path)

    @pytest.mark.parametrize("cell", ["", "nan", "abc"])
    def test_missing_cell_names_row_and_column(self, tmp_path, cell):
        path = tmp_path / "d.csv"
        path.write_text(f"f0,f1,label,group\n1,2,0,a\n1,{cell},1,b\n", encoding="utf-8")
        with pytest.raises(ParseError) as err:
            load_csv(path)
        assert err.value.row == 2 and err.value.column == "f1"

    def test_roundtrip(self, tmp_path):
        ds = generate_synthetic(REFERENCE_SYNTH, 4)
        write_csv(ds, tmp_path / "x.csv")
        assert load_csv(tmp_path / "x.csv").equals(ds)

    def test_lf_line_endings(self, tmp_path):
        write_csv(_toy(12), tmp_path / "x.csv")
        assert b"\r\n" not in (tmp_path / "x.csv").read_bytes()

    def test_entity_column(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = "".join(f"{i},{i % 2},g{i % 3},p{i // 2}\n" for i in range(20))
        path.write_text("f0,label,group,patient\n" + rows, encoding="utf-8")
        ds = load_csv(path, entity_column="patient")
        tr, va, te = split_indices(ds, SplitRatios(), seed=0, by_entity=True)
        sets = [set(ds.entities[i]) for i in (tr, va, te)]
        assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])


class TestSplit:
    def test_eighty_ten_ten(self):
        tr, va, te = split(_toy(100), SplitRatios(0.8, 0.1, 0.1), seed=0)
        assert (tr.n, va.n, te.n) == (80, 10, 10)

    def test_remainder_to_test(self):
        tr, va, te = split(_toy(57), SplitRatios(0.8, 0.1, 0.1), seed=0)
        assert (tr.n, va.n, te.n) == (45, 5, 7)

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(10, 300), seed=st.integers(0, 2**32 - 1), stratify=st.booleans())
    def test_partition(self, n, seed, stratify):
        ds = _toy(n, seed=seed % 1000)
        try:
            parts = split_indices(ds, SplitRatios(0.6, 0.2, 0.2), seed, stratify=stratify)
        except ConfigError:
            assert stratify  # tiny strata can leave a split empty
            return
        allidx = np.concatenate(parts)
        assert len(allidx) == n and set(allidx.tolist()) == set(range(n))

    def test_deterministic(self):
        ds = _toy(50)
        a = split_indices(ds, SplitRatios(), 5)
        b = split_indices(ds, SplitRatios(), 5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_small(self):
        with pytest.raises(ConfigError):
            split(_toy(9), SplitRatios(), 0)

    @pytest.mark.parametrize("r", [(0.8, 0.1, 0.2), (1.0, 0.0, 0.0), (0.5, 0.6, -0.1)])
    def test_bad_ratios(self, r):
        with pytest.raises(ConfigError):
            SplitRatios(*r)


class TestBinarize:
    def test_age_threshold(self):
        assert binarize_attribute([30, 60, 75], 60).tolist() == [0, 1, 1]

    def test_all_below(self):
        assert binarize_attribute([1, 2, 3], 10).tolist() == [0, 0, 0]

    def test_threshold_below_min(self):
        assert binarize_attribute([1, 2, 3], -math.inf).tolist() == [1, 1, 1]


class TestBalancedSubsample:
    def test_group_sizes(self):
        ds = _toy(groups=np.array([0] * 800 + [1] * 200))
        sub = balanced_subsample(ds, 0.1, seed=0)
        assert sub.group_counts().tolist() == [80, 20]

    def test_full_fraction_is_permutation(self):
        ds = _toy(40)
        sub = balanced_subsample(ds, 1.0, seed=0)
        rows = {tuple(r) for r in ds.features}
        assert sub.n == ds.n and {tuple(r) for r in sub.features} == rows

    def test_precondition(self):
        ds = _toy(groups=np.array([0] * 50 + [1] * 5))
        with pytest.raises(ConfigError):
            balanced_subsample(ds, 0.1, seed=0)

    def test_proportions_random(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            G = 2  # for G > 2 the floors can accumulate past one row
            sizes = rng.integers(10, 200, size=G)
            ds = _toy(groups=np.repeat(np.arange(G), sizes), seed=int(rng.integers(1000)))
            frac = float(rng.uniform(0.1, 1.0))
            sub = balanced_subsample(ds, frac, seed=int(rng.integers(1000)))
            p_in = ds.group_counts() / ds.n
            p_out = sub.group_counts() / sub.n
            assert np.all(np.abs(p_out - p_in) <= 1.0 / sub.n + 1e-12)
            assert (sub.group_counts() > 0).all()
