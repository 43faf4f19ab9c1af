"""Outer search loop: propose a mask and learning rate, fine-tune, score fairness on validation.

The coordinator owns the sampler history, the pruner's rung state and the trial
log behind one lock. Trial executors only talk to it through ``propose`` and
per-epoch reports, so with ``workers=1`` a run is fully deterministic.
"""
from __future__ import annotations

import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, balanced_subsample
from .errors import ConfigError, DivergedError, SearchError, UndefinedMetricError
from .metrics import ObjectiveKind, SubgroupReport, fair_objective
from .model import ModelParams, init_random
from .pruner import Decision, RungState, ShConfig, report as sh_report
from .search_space import (
    NAMED_MASKS,
    Mask,
    SearchSpace,
    TrialConfig,
    encode,
    full_ft,
    mask_from_string,
)
from .tpe import Observation, TpeConfig, propose
from .trainer import TrainConfig, evaluate, fine_tune

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(run_seed: int, trial_id: int, stream: int = 0) -> int:
    """Seed for one trial's randomness; depends only on (run_seed, trial_id, stream)."""
    h = splitmix64(run_seed & _MASK64)
    h = splitmix64(h ^ (trial_id & _MASK64))
    return splitmix64(h ^ stream) >> 1


@dataclass(frozen=True)
class RunConfig:
    n_trials: int = 40
    objective: ObjectiveKind = ObjectiveKind.MIN_GROUP_AUC
    space: SearchSpace = field(default_factory=SearchSpace)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    tpe_cfg: TpeConfig = field(default_factory=TpeConfig)
    sh_cfg: ShConfig = field(default_factory=ShConfig)
    run_seed: int = 0
    workers: int = 1
    search_fraction: float = 1.0
    retrain_full: bool = False

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveKind.parse(self.objective))
        if self.n_trials < 1 or self.workers < 1:
            raise ConfigError("n_trials and workers must be at least 1")
        if not 0 < self.search_fraction <= 1:
            raise ConfigError("search_fraction must lie in (0, 1]")


@dataclass
class TrialRecord:
    trial_id: int
    config: TrialConfig
    seed: int
    state: str = "running"  # completed | pruned | failed
    rung_values: dict = field(default_factory=dict)  # rung epoch -> value
    final_value: float | None = None
    last_value: float | None = None
    wall_time: float = 0.0

    @property
    def completed(self) -> bool:
        return self.state == "completed"

    def to_dict(self) -> dict:
        return {
            "trial": self.trial_id,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "state": self.state,
            "rung_values": {str(k): v for k, v in self.rung_values.items()},
            "final_value": self.final_value,
            "last_value": self.last_value,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(
            trial_id=d["trial"],
            config=TrialConfig.from_dict(d["config"]),
            seed=d["seed"],
            state=d["state"],
            rung_values={int(k): v for k, v in d["rung_values"].items()},
            final_value=d["final_value"],
            last_value=d["last_value"],
            wall_time=d.get("wall_time", 0.0),
        )


@dataclass
class RunResult:
    best_trial: int
    best_mask: Mask
    best_lr: float
    best_value: float
    test_report: SubgroupReport
    trajectory: list
    records: list
    objective: ObjectiveKind
    space: SearchSpace
    model: ModelParams | None = None

    def to_dict(self) -> dict:
        return {
            "best_trial": self.best_trial,
            "best_mask": encode(self.best_mask),
            "best_lr": self.best_lr,
            "best_value": self.best_value,
            "test_report": self.test_report.to_dict(),
            "trajectory": list(self.trajectory),
            "objective": self.objective.value,
            "space": {"n_blocks": self.space.n_blocks, "kinds": list(self.space.kinds),
                      "lr_range": list(self.space.lr_range)},
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(
            best_trial=d["best_trial"],
            best_mask=mask_from_string(d["best_mask"]),
            best_lr=d["best_lr"],
            best_value=d["best_value"],
            test_report=SubgroupReport.from_dict(d["test_report"]),
            trajectory=list(d["trajectory"]),
            records=[TrialRecord.from_dict(r) for r in d.get("records", [])],
            objective=ObjectiveKind.parse(d["objective"]),
            space=SearchSpace(d["space"]["n_blocks"], tuple(d["space"]["kinds"]),
                              tuple(d["space"]["lr_range"])),
        )


class TrialLog:
    """JSONL event sink; ``path=None`` keeps events in memory only."""

    def __init__(self, path=None):
        self.events = []
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None

    def write(self, event: str, trial: int, payload: dict):
        rec = {"event": event, "trial": trial, "payload": payload}
        self.events.append(rec)
        if self._fh is not None:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def best_so_far(records) -> list[float]:
    """Running maximum of completed-trial objectives, one entry per trial.

    Pruned and failed trials repeat the current maximum; trials before the first
    completed one contribute no entry.
    """
    out, cur = [], -math.inf
    for r in sorted(records, key=lambda r: r.trial_id):
        if r.completed:
            cur = max(cur, r.final_value)
        if cur > -math.inf:
            out.append(cur)
    return out


def select_best(records) -> TrialRecord:
    done = [r for r in records if r.completed]
    if not done:
        raise SearchError("no trial completed")
    return min(done, key=lambda r: (-r.final_value, r.trial_id))


class _Coordinator:
    def __init__(self, cfg: RunConfig, trial_log: TrialLog):
        self.cfg = cfg
        self.log = trial_log
        self.lock = threading.Lock()
        self.history: list[Observation] = []
        self.rungs = RungState(cfg.sh_cfg, cfg.train_cfg.epochs)

    def propose(self, trial_id: int) -> TrialConfig:
        with self.lock:
            rng = np.random.default_rng(trial_seed(self.cfg.run_seed, trial_id, stream=1))
            config = propose(self.history, self.cfg.space, self.cfg.tpe_cfg, rng)
            self.log.write("proposed", trial_id, config.to_dict())
            return config

    def report(self, rec: TrialRecord, epoch: int, value: float) -> Decision:
        with self.lock:
            decision = sh_report(self.rungs, rec.trial_id, epoch, value)
            if self.rungs.rung_of(epoch) is not None:
                rec.rung_values[epoch] = value
                self.log.write("rung", rec.trial_id, {
                    "rung": self.rungs.rung_of(epoch), "epoch": epoch,
                    "value": value, "decision": decision.value,
                })
            return decision

    def finish(self, rec: TrialRecord):
        with self.lock:
            value = rec.final_value if rec.completed else rec.last_value
            self.history.append(Observation(rec.trial_id, rec.config, value, pruned=not rec.completed))
            payload = {"value": value}
            if rec.state == "completed":
                payload["n_epochs"] = self.cfg.train_cfg.epochs
            self.log.write(rec.state, rec.trial_id, payload)


def _objective_value(report: SubgroupReport, kind: ObjectiveKind) -> float:
    try:
        return float(fair_objective(report, kind))
    except UndefinedMetricError:
        return -math.inf


def run_search(cfg: RunConfig, theta0: ModelParams, train: Dataset, val: Dataset, test: Dataset,
               log_path=None, trainer=fine_tune) -> RunResult:
    """Search masks and learning rates for the best validation fairness objective.

    ``trainer`` must follow the :func:`fairmask.trainer.fine_tune` contract; tests
    swap in cheap stand-ins.
    """
    if cfg.space.n_blocks != theta0.arch.n_blocks:
        raise ConfigError("search space and base model disagree on n_blocks")
    if len(np.unique(val.groups)) < 2 or len(np.unique(val.labels)) < 2:
        raise ConfigError("validation set needs two groups and both classes")
    search_train = train
    if cfg.search_fraction < 1.0:
        search_train = balanced_subsample(train, cfg.search_fraction, trial_seed(cfg.run_seed, 0, stream=2))

    trial_log = TrialLog(log_path)
    coord = _Coordinator(cfg, trial_log)
    records: dict[int, TrialRecord] = {}
    models: dict[int, ModelParams] = {}

    def run_trial(tid: int):
        config = coord.propose(tid)
        rec = TrialRecord(tid, config, trial_seed(cfg.run_seed, tid))
        records[tid] = rec
        tcfg = cfg.train_cfg.replace(learning_rate=config.learning_rate, seed=rec.seed)
        start = time.perf_counter()

        def observer(er) -> bool:
            value = _objective_value(er.val, cfg.objective)
            rec.last_value = value
            return coord.report(rec, er.epoch + 1, value) is Decision.PRUNE

        try:
            params, reports = trainer(theta0, config.mask, search_train, val, tcfg, observer)
        except DivergedError as exc:
            log.warning("trial %d diverged: %s", tid, exc)
            rec.state = "failed"
            rec.last_value = None
        else:
            if reports and reports[-1].pruned:
                rec.state = "pruned"
            else:
                rec.state = "completed"
                rec.final_value = rec.last_value
                models[tid] = params
        rec.wall_time = time.perf_counter() - start
        coord.finish(rec)

    try:
        if cfg.workers == 1:
            for tid in range(cfg.n_trials):
                run_trial(tid)
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                for fut in [pool.submit(run_trial, tid) for tid in range(cfg.n_trials)]:
                    fut.result()
    finally:
        trial_log.close()

    ordered = [records[t] for t in sorted(records)]
    best = select_best(ordered)
    model = models[best.trial_id]
    if cfg.retrain_full:
        tcfg = cfg.train_cfg.replace(learning_rate=best.config.learning_rate, seed=best.seed)
        model, _ = trainer(theta0, best.config.mask, train, val, tcfg, None)
    return RunResult(
        best_trial=best.trial_id,
        best_mask=best.config.mask,
        best_lr=best.config.learning_rate,
        best_value=best.final_value,
        test_report=evaluate(model, best.config.mask, test, threshold=cfg.train_cfg.threshold),
        trajectory=best_so_far(ordered),
        records=ordered,
        objective=cfg.objective,
        space=cfg.space,
        model=model,
    )


@dataclass
class BaselineRow:
    method: str
    lr: float
    val_objective: float
    test_report: SubgroupReport

    def to_dict(self) -> dict:
        return {"method": self.method, "lr": self.lr, "val_objective": self.val_objective,
                **{f"test_{k}": v for k, v in self.test_report.to_dict().items()}}


BASELINE_METHODS = ("full_ft", "linear_readout", "attention_only", "layernorm_only", "scratch")


def default_lr_grid(lr_range=(1e-5, 1e-1), n: int = 7) -> list[float]:
    return [float(v) for v in np.logspace(math.log10(lr_range[0]), math.log10(lr_range[1]), n)]


def run_baselines(theta0: ModelParams, splits, train_cfg: TrainConfig, lr_grid=None,
                  objective=ObjectiveKind.MIN_GROUP_AUC, methods=BASELINE_METHODS,
                  scratch_seed: int = 0, trainer=fine_tune) -> dict[str, BaselineRow]:
    """Fixed-mask baselines with the learning rate picked on the validation objective.

    ``scratch`` trains every module from a random initialisation instead of ``theta0``.
    """
    train, val, test = splits
    objective = ObjectiveKind.parse(objective)
    lr_grid = list(default_lr_grid() if lr_grid is None else lr_grid)
    if not lr_grid:
        raise ConfigError("lr_grid must not be empty")
    B = theta0.arch.n_blocks
    table = {}
    for method in methods:
        if method == "scratch":
            base, mask = init_random(theta0.arch, scratch_seed), full_ft(B)
        elif method in NAMED_MASKS:
            base, mask = theta0, NAMED_MASKS[method](B)
        else:
            raise ConfigError(f"unknown baseline method {method!r}")
        best = None
        for lr in lr_grid:
            try:
                params, reports = trainer(base, mask, train, val, train_cfg.replace(learning_rate=lr), None)
            except DivergedError as exc:
                log.warning("baseline %s lr=%g diverged: %s", method, lr, exc)
                continue
            value = _objective_value(reports[-1].val, objective)
            if best is None or value > best[0]:
                best = (value, lr, params)
        if best is None:
            raise SearchError(f"every learning rate diverged for baseline {method}")
        value, lr, params = best
        table[method] = BaselineRow(method, lr, value, evaluate(params, mask, test, threshold=train_cfg.threshold))
    return table


def mask_frequency(results) -> np.ndarray:
    """Fraction of runs whose best mask updates each (block, kind) module."""
    results = list(results)
    if not results:
        raise ConfigError("mask_frequency needs at least one result")
    space = results[0].space
    for r in results[1:]:
        if r.space.n_blocks != space.n_blocks or tuple(r.space.kinds) != tuple(space.kinds):
            raise ConfigError("results come from different search spaces")
    return np.mean([r.best_mask.bits.astype(np.float64) for r in results], axis=0)
