"""Datasets with a sensitive attribute: synthesis, CSV I/O, splitting and subsampling.

A :class:`Dataset` bundles a feature matrix, binary labels and integer group ids.
The synthetic generator produces data with a built-in generalisation bias: every
group shares one labelling function, but the minority group is smaller and its
inputs are noisier, so a model that fits the training set perfectly still
generalises worse on it.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError

__all__ = [
    "Dataset",
    "SplitRatios",
    "SynthConfig",
    "generate_synthetic",
    "teacher_logits",
    "load_csv",
    "write_csv",
    "split",
    "split_indices",
    "binarize_attribute",
    "balanced_subsample",
    "REFERENCE_SYNTH",
    "SOURCE_SYNTH",
]

TEACHER_HIDDEN = 16


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    group_names: tuple = ()
    entities: np.ndarray | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        g = np.asarray(self.groups, dtype=np.int64)
        if x.ndim != 2:
            raise ConfigError("features must be a 2-D matrix")
        n, d = x.shape
        if n < 1 or d < 1:
            raise ConfigError("dataset needs n >= 1 rows and d >= 1 features")
        if y.shape != (n,) or g.shape != (n,):
            raise ConfigError("features, labels and groups must have the same length")
        if not np.isin(y, (0, 1)).all():
            raise ConfigError("labels must be 0 or 1")
        names = tuple(str(s) for s in self.group_names)
        if not names:
            names = tuple(str(i) for i in range(int(g.max()) + 1))
        if g.min() < 0 or g.max() >= len(names):
            raise ConfigError("group id out of range of group_names")
        ents = None
        if self.entities is not None:
            ents = np.asarray(self.entities).astype(str)
            if ents.shape != (n,):
                raise ConfigError("entities must have one entry per row")
            ents.setflags(write=False)
        for arr in (x, y, g):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "group_names", names)
        object.__setattr__(self, "entities", ents)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.groups[idx],
            self.group_names,
            None if self.entities is None else self.entities[idx],
        )

    def group_rows(self, g: int) -> "Dataset":
        """Rows belonging to group ``g``."""
        return self.subset(np.flatnonzero(self.groups == g))

    def group_counts(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.n_groups)

    def equals(self, other: "Dataset") -> bool:
        same_ents = (self.entities is None) == (other.entities is None)
        if same_ents and self.entities is not None:
            same_ents = np.array_equal(self.entities, other.entities)
        return (
            same_ents
            and self.group_names == other.group_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.groups, other.groups)
        )


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        for name in ("train", "val", "test"):
            r = getattr(self, name)
            if not 0.0 < r < 1.0:
                raise ConfigError(f"split ratio {name}={r} must lie in (0, 1)")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 1000
    d: int = 16
    group_fractions: tuple = (0.75, 0.25)
    teacher_seed: int = 0
    noise_per_group: tuple = (0.1, 1.0)
    shift_per_group: tuple = (0.0, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "group_fractions", tuple(float(f) for f in self.group_fractions))
        object.__setattr__(self, "noise_per_group", tuple(float(f) for f in self.noise_per_group))
        object.__setattr__(self, "shift_per_group", tuple(float(f) for f in self.shift_per_group))
        G = len(self.group_fractions)
        if G < 2:
            raise ConfigError("synthetic data needs at least two groups")
        if len(self.noise_per_group) != G or len(self.shift_per_group) != G:
            raise ConfigError("per-group noise and shift must have one entry per group")
        if any(f < 0 for f in self.group_fractions) or abs(sum(self.group_fractions) - 1) > 1e-9:
            raise ConfigError("group_fractions must be nonnegative and sum to 1")
        if any(s < 0 for s in self.noise_per_group):
            raise ConfigError("noise_per_group must be nonnegative")
        if self.n_samples < G or self.d < 1:
            raise ConfigError("n_samples must cover every group and d must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        try:
            return cls(**json.loads(text))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# Small, noisy minority group: the reference biased target task.
REFERENCE_SYNTH = SynthConfig(
    n_samples=2000,
    d=16,
    group_fractions=(0.75, 0.25),
    teacher_seed=0,
    noise_per_group=(0.1, 1.0),
    shift_per_group=(0.0, 0.5),
)

# Clean, plentiful data from the same labelling function; used to pretrain the base model.
SOURCE_SYNTH = SynthConfig(
    n_samples=4000,
    d=16,
    group_fractions=(0.5, 0.5),
    teacher_seed=0,
    noise_per_group=(0.1, 0.1),
    shift_per_group=(0.0, 0.0),
)


def _teacher(teacher_seed: int, d: int):
    rng = np.random.default_rng([teacher_seed, d, 7919])
    w1 = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, TEACHER_HIDDEN)) * 2.0
    b1 = rng.normal(0.0, 0.5, size=TEACHER_HIDDEN)
    w2 = rng.normal(0.0, 1.0, size=TEACHER_HIDDEN)
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    reference = rng.normal(size=(4096, d))
    offset = float(np.median(np.tanh(reference @ w1 + b1) @ w2))
    return w1, b1, w2, offset, direction


def teacher_logits(z: np.ndarray, teacher_seed: int) -> np.ndarray:
    """Centred output of the fixed labelling network on noise-free features ``z``."""
    z = np.asarray(z, dtype=np.float64)
    w1, b1, w2, offset, _ = _teacher(teacher_seed, z.shape[1])
    return np.tanh(z @ w1 + b1) @ w2 - offset


def generate_synthetic(cfg: SynthConfig, seed: int) -> Dataset:
    if not isinstance(cfg, SynthConfig):
        raise ConfigError("generate_synthetic expects a SynthConfig")
    _, _, _, _, direction = _teacher(cfg.teacher_seed, cfg.d)
    G = len(cfg.group_fractions)
    counts = [int(math.floor(cfg.n_samples * f + 1e-9)) for f in cfg.group_fractions]
    counts[0] += cfg.n_samples - sum(counts)
    rng = np.random.default_rng(seed)
    xs, ys, gs = [], [], []
    for g in range(G):
        z = rng.normal(size=(counts[g], cfg.d))
        y = (teacher_logits(z, cfg.teacher_seed) > 0).astype(np.int64)
        x = z + cfg.shift_per_group[g] * direction + cfg.noise_per_group[g] * rng.normal(size=z.shape)
        xs.append(x)
        ys.append(y)
        gs.append(np.full(counts[g], g, dtype=np.int64))
    order = rng.permutation(cfg.n_samples)
    return Dataset(
        np.concatenate(xs)[order],
        np.concatenate(ys)[order],
        np.concatenate(gs)[order],
        tuple(f"group{g}" for g in range(G)),
    )


def write_csv(ds: Dataset, path) -> None:
    path = Path(path)
    header = [f"f{j}" for j in range(ds.d)] + ["label", "group"]
    if ds.entities is not None:
        header.append("entity")
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            row += [str(int(ds.labels[i])), ds.group_names[ds.groups[i]]]
            if ds.entities is not None:
                row.append(ds.entities[i])
            w.writerow(row)


def load_csv(path, entity_column: str | None = None) -> Dataset:
    """Read ``f0,...,f{d-1},label,group`` rows; groups are numbered by first appearance.

    ``entity_column`` names an optional extra column (e.g. a patient id) used by
    :func:`split` for entity-level splitting.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", row=0) from None
        cols = [h.strip() for h in header]
        extra = [entity_column] if entity_column else []
        if "label" not in cols or "group" not in cols:
            raise ParseError("header must contain label and group columns", row=0)
        feat_cols = [c for c in cols if c not in ("label", "group", *extra)]
        expected = [f"f{j}" for j in range(len(feat_cols))]
        if not feat_cols or feat_cols != expected:
            raise ParseError("feature columns must be f0..f{d-1}", row=0)
        if entity_column and entity_column not in cols:
            raise ParseError(f"missing entity column {entity_column!r}", row=0)
        fidx = [cols.index(c) for c in feat_cols]
        lidx, gidx = cols.index("label"), cols.index("group")
        eidx = cols.index(entity_column) if entity_column else None

        feats, labels, groups, ents = [], [], [], []
        names: dict[str, int] = {}
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(cols):
                raise ParseError(f"expected {len(cols)} cells, got {len(row)}", row=r)
            vals = []
            for j in fidx:
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a real", row=r, column=cols[j]) from None
                if not math.isfinite(v):
                    raise ParseError("missing or non-finite value", row=r, column=cols[j])
                vals.append(v)
            lab = row[lidx].strip()
            if lab not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {lab!r}", row=r, column="label")
            grp = row[gidx]
            if grp.strip() == "":
                raise ParseError("missing group", row=r, column="group")
            feats.append(vals)
            labels.append(int(lab))
            groups.append(names.setdefault(grp, len(names)))
            if eidx is not None:
                ents.append(row[eidx])
    if not feats:
        raise ParseError("no data rows")
    return Dataset(
        np.array(feats, dtype=np.float64),
        np.array(labels),
        np.array(groups),
        tuple(names),
        np.array(ents) if eidx is not None else None,
    )


def _sizes(n: int, ratios: SplitRatios) -> tuple[int, int, int]:
    n_train = int(math.floor(n * ratios.train + 1e-9))
    n_val = int(math.floor(n * ratios.val + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_indices(ds: Dataset, ratios: SplitRatios, seed: int, stratify: bool = False,
                  by_entity: bool = False):
    """Index arrays ``(train, val, test)`` forming a partition of ``range(ds.n)``.

    ``stratify`` applies the size rule within every (group, label) stratum.
    ``by_entity`` keeps all rows of one entity in the same split and applies the
    size rule to entities instead of rows.
    """
    n = ds.n
    if n < 10:
        raise ConfigError(f"need at least 10 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    if by_entity:
        if ds.entities is None:
            raise ConfigError("by_entity split needs an entity column")
        uniq, inverse = np.unique(ds.entities, return_inverse=True)
        perm = rng.permutation(len(uniq))
        a, b, c = _sizes(len(uniq), ratios)
        if min(a, b, c) < 1:
            raise ConfigError("too few entities for every split to be nonempty")
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[perm] = np.arange(len(uniq))
        which = np.where(rank[inverse] < a, 0, np.where(rank[inverse] < a + b, 1, 2))
        return tuple(np.flatnonzero(which == k) for k in range(3))
    if stratify:
        parts = ([], [], [])
        key = ds.groups * 2 + ds.labels
        for k in np.unique(key):
            rows = np.flatnonzero(key == k)
            rows = rows[rng.permutation(len(rows))]
            a, b, _ = _sizes(len(rows), ratios)
            parts[0].append(rows[:a])
            parts[1].append(rows[a:a + b])
            parts[2].append(rows[a + b:])
        out = tuple(np.sort(np.concatenate(p)) for p in parts)
        if min(len(p) for p in out) < 1:
            raise ConfigError("dataset too small for every split to be nonempty")
        return out
    a, b, c = _sizes(n, ratios)
    if min(a, b, c) < 1:
        raise ConfigError("dataset too small for every split to be nonempty")
    perm = rng.permutation(n)
    return perm[:a], perm[a:a + b], perm[a + b:]


def split(ds: Dataset, ratios: SplitRatios, seed: int, stratify: bool = False,
          by_entity: bool = False) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(ds, ratios, seed, stratify=stratify, by_entity=by_entity)
    return ds.subset(tr), ds.subset(va), ds.subset(te)


def binarize_attribute(raw: Sequence[float], threshold: float) -> np.ndarray:
    """Group 0 below ``threshold``, group 1 at or above it (e.g. age < 60 vs age >= 60)."""
    return (np.asarray(raw, dtype=np.float64) >= threshold).astype(np.int64)


def balanced_subsample(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Sample ``floor(fraction * n_g)`` rows from every group, keeping group proportions."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must lie in (0, 1]")
    counts = ds.group_counts()
    present = counts[counts > 0]
    if fraction * present.min() < 1:
        raise ConfigError("fraction too small: the smallest group would get no rows")
    rng = np.random.default_rng(seed)
    keep = []
    for g in np.flatnonzero(counts):
        rows = np.flatnonzero(ds.groups == g)
        k = max(1, int(math.floor(fraction * len(rows) + 1e-9)))
        keep.append(rng.choice(rows, size=k, replace=False))
    return ds.subset(np.sort(np.concatenate(keep)))
