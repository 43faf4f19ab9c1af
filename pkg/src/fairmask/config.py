"""Experiment configuration: JSON files with every default materialised on load."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import REFERENCE_SYNTH, SOURCE_SYNTH, Dataset, SplitRatios, SynthConfig, generate_synthetic, load_csv, split
from .errors import ConfigError
from .metrics import ObjectiveKind
from .model import Architecture, ModelParams, load_checkpoint
from .pruner import ShConfig
from .search_space import KINDS, SearchSpace
from .tpe import TpeConfig
from .orchestrator import RunConfig
from .trainer import TrainConfig, pretrain

REFERENCE_ARCH = Architecture(d_in=16, d_model=32, n_blocks=4, mlp_hidden=64)
REFERENCE_PRETRAIN = TrainConfig(epochs=20, warmup_epochs=2, learning_rate=3e-3)


@dataclass(frozen=True)
class DataSection:
    csv: str | None = None
    entity_column: str | None = None
    synth: SynthConfig = REFERENCE_SYNTH
    synth_seed: int = 0
    split: SplitRatios = field(default_factory=SplitRatios)
    split_seed: int = 0
    stratify: bool = False


@dataclass(frozen=True)
class PretrainSection:
    checkpoint: str | None = None
    source: SynthConfig = SOURCE_SYNTH
    source_seed: int = 123
    train: TrainConfig = REFERENCE_PRETRAIN
    seed: int = 1
    reset_head: bool = True


@dataclass(frozen=True)
class SearchSection:
    n_trials: int = 40
    objective: str = ObjectiveKind.MIN_GROUP_AUC.value
    kinds: tuple = KINDS
    lr_range: tuple = (1e-5, 1e-1)
    tpe: TpeConfig = field(default_factory=TpeConfig)
    sh: ShConfig = field(default_factory=ShConfig)
    run_seed: int = 0
    workers: int = 1
    search_fraction: float = 1.0
    retrain_full: bool = False


@dataclass(frozen=True)
class BaselineSection:
    lr_grid: tuple | None = None
    methods: tuple = ("full_ft", "linear_readout", "attention_only", "layernorm_only", "scratch")
    objective: str = ObjectiveKind.MIN_GROUP_AUC.value
    scratch_seed: int = 0


@dataclass(frozen=True)
class ReportSection:
    runs: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    arch: Architecture = REFERENCE_ARCH
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchSection = field(default_factory=SearchSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    report: ReportSection = field(default_factory=ReportSection)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def space(self) -> SearchSpace:
        return SearchSpace(self.arch.n_blocks, tuple(self.search.kinds), tuple(self.search.lr_range))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, value, path: str):
    """Instantiate dataclass ``cls`` from a (possibly partial) dict, filling defaults."""
    if not isinstance(value, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in value:
            continue
        v = value[f.name]
        hint = hints[f.name]
        sub = f"{path}.{f.name}" if path else f.name
        if dataclasses.is_dataclass(hint):
            v = _build(hint, v, sub)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from exc


def _set_dotted(d: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            raise ConfigError(f"cannot override {dotted!r}: {k!r} is not a section")
        cur = cur[k]
    if keys[-1] not in cur:
        raise ConfigError(f"cannot override unknown key {dotted!r}")
    cur[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def config_from_dict(d: dict, overrides=()) -> ExperimentConfig:
    full = ExperimentConfig().to_dict()
    _deep_merge(full, d)
    for key, value in overrides:
        _set_dotted(full, key, value)
    cfg = _build(ExperimentConfig, full, "")
    ObjectiveKind.parse(cfg.search.objective)
    ObjectiveKind.parse(cfg.baselines.objective)
    cfg.space()
    return cfg


def _deep_merge(into: dict, new: dict):
    if not isinstance(new, dict):
        raise ConfigError("config must be a JSON object")
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(into.get(k), dict):
            _deep_merge(into[k], v)
        else:
            into[k] = v


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw, overrides)


def dataset(cfg: ExperimentConfig) -> Dataset:
    """The target-task data: the configured CSV if any, else the synthetic generator."""
    if cfg.data.csv:
        return load_csv(cfg.data.csv, entity_column=cfg.data.entity_column)
    return generate_synthetic(cfg.data.synth, cfg.data.synth_seed)


def splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    return split(dataset(cfg), cfg.data.split, cfg.data.split_seed, stratify=cfg.data.stratify,
                 by_entity=cfg.data.entity_column is not None)


def base_model(cfg: ExperimentConfig) -> ModelParams:
    """Load the configured checkpoint, or pretrain one on the synthetic source task."""
    if cfg.pretrain.checkpoint:
        params = load_checkpoint(cfg.pretrain.checkpoint)
        if params.arch != cfg.arch:
            raise ConfigError(f"checkpoint architecture {params.arch} differs from config {cfg.arch}")
        return params
    source = generate_synthetic(cfg.pretrain.source, cfg.pretrain.source_seed)
    return pretrain(cfg.arch, source, cfg.pretrain.train, cfg.pretrain.seed, reset_head=cfg.pretrain.reset_head)


def run_config(cfg: ExperimentConfig) -> RunConfig:
    s = cfg.search
    return RunConfig(
        n_trials=s.n_trials, objective=ObjectiveKind.parse(s.objective), space=cfg.space(),
        train_cfg=cfg.train, tpe_cfg=s.tpe, sh_cfg=s.sh, run_seed=s.run_seed, workers=s.workers,
        search_fraction=s.search_fraction, retrain_full=s.retrain_full,
    )
