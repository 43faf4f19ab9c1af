"""Masked fine-tuning with AdamW and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .data import Dataset, SplitRatios, split
from .errors import ConfigError, DivergedError, NumericError
from .metrics import SubgroupReport, subgroup_report
from .model import (
    HEAD_TENSORS,
    Architecture,
    ModelParams,
    backward,
    block_index,
    forward,
    init_random,
    module_kind,
    predict_proba,
    zero_delta,
)
from .search_space import Mask, full_ft


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    warmup_epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eta_min: float = 0.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs]")
        if self.learning_rate < 0 or self.eta_min < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate, eta_min and weight_decay must be nonnegative")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0 <= b < 1:
                raise ConfigError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            return cls(**json.loads(text))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val: SubgroupReport
    pruned: bool = False


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Linear ramp 0 -> lr over the warmup steps, then cosine decay towards ``eta_min``."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    peak = cfg.learning_rate
    warmup = (total_steps * cfg.warmup_epochs) // cfg.epochs
    if step < warmup:
        return peak * step / warmup
    t = (step - warmup) / (total_steps - warmup)
    return cfg.eta_min + (peak - cfg.eta_min) * 0.5 * (1.0 + math.cos(math.pi * t))


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean two-class softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    b = logits.shape[0]
    if logits.shape != (b, 2) or y.shape != (b,):
        raise ConfigError("logits must be (b, 2) and labels (b,)")
    rows = np.arange(b)
    margin = logits[rows, 1 - y] - logits[rows, y]
    loss = float(np.logaddexp(0.0, margin).mean())
    p1 = 0.5 * (1.0 + np.tanh(0.5 * (logits[:, 1] - logits[:, 0])))
    probs = np.stack([1.0 - p1, p1], axis=1)
    probs[rows, y] -= 1.0
    return loss, probs / b


def trainable_names(p: ModelParams, mask: Mask) -> list[str]:
    return [
        k for k in p.delta
        if k in HEAD_TENSORS or mask.selects(block_index(k), module_kind(k))
    ]


def evaluate(p: ModelParams, mask: Mask, ds: Dataset, threshold: float = 0.5,
             strict: bool = False) -> SubgroupReport:
    scores = predict_proba(p, mask, ds.features)
    return subgroup_report(scores, ds.labels, ds.groups, threshold=threshold, strict=strict)


class _AdamW:
    def __init__(self, params: dict, names, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(params[k]) for k in names}
        self.v = {k: np.zeros_like(params[k]) for k in names}
        self.t = 0

    def step(self, grads: dict, lr: float):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.adam_beta1 ** self.t
        bc2 = 1.0 - c.adam_beta2 ** self.t
        for k, m in self.m.items():
            g = grads[k]
            v = self.v[k]
            w = self.params[k]
            if c.weight_decay:
                w *= 1.0 - lr * c.weight_decay
            m *= c.adam_beta1
            m += (1.0 - c.adam_beta1) * g
            v *= c.adam_beta2
            v += (1.0 - c.adam_beta2) * g * g
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


Observer = Callable[[EpochReport], Optional[bool]]


def fine_tune(theta0: ModelParams, mask: Mask, train: Dataset, val: Dataset, cfg: TrainConfig,
              observer: Observer | None = None, on_step: Callable[[int, float], None] | None = None
              ) -> tuple[ModelParams, list[EpochReport]]:
    """Learn deltas for the head and the mask-selected modules on top of ``theta0.base``.

    ``observer`` is called after every epoch; a truthy return stops training and
    the last report is flagged ``pruned``. ``on_step(step, loss)`` sees every
    mini-batch loss.
    """
    if mask.n_blocks != theta0.arch.n_blocks:
        raise ConfigError("mask does not match the architecture")
    if train.d != theta0.arch.d_in or val.d != theta0.arch.d_in:
        raise ConfigError("dataset width does not match the architecture")
    p = ModelParams(theta0.arch, theta0.base, zero_delta(theta0.arch))
    opt = _AdamW(p.delta, trainable_names(p, mask), cfg)
    rng = np.random.default_rng(cfg.seed)
    n = train.n
    steps_per_epoch = -(-n // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    x_all, y_all = train.features, train.labels
    step = 0
    reports = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            try:
                logits, cache = forward(p, mask, x_all[idx])
            except NumericError as exc:
                raise DivergedError(f"non-finite activation ({exc})", epoch=epoch, step=step) from exc
            loss, dlogits = cross_entropy(logits, y_all[idx])
            if not math.isfinite(loss):
                raise DivergedError("non-finite loss", epoch=epoch, step=step)
            if on_step is not None:
                on_step(step, loss)
            grads = backward(p, mask, cache, dlogits)
            opt.step(grads, lr_at(cfg, step, total))
            p.version += 1
            loss_sum += loss * len(idx)
            step += 1
        try:
            val_report = evaluate(p, mask, val, threshold=cfg.threshold)
        except NumericError as exc:
            raise DivergedError(f"non-finite activation ({exc})", epoch=epoch, step=step) from exc
        report = EpochReport(epoch, loss_sum / n, val_report)
        reports.append(report)
        if observer is not None and observer(report):
            report.pruned = True
            break
    return p, reports


def pretrain(arch: Architecture, source: Dataset, cfg: TrainConfig, seed: int,
             val: Dataset | None = None, reset_head: bool = True) -> ModelParams:
    """Train every module from a random init; the result (zero delta) serves as a base model.

    With ``reset_head`` the trained classification head is replaced by a fresh
    random one, as when a pretrained backbone is transferred to a new task.
    """
    init = init_random(arch, seed)
    if val is None:
        source, val, _ = split(source, SplitRatios(0.85, 0.1, 0.05), seed)
    mask = full_ft(arch.n_blocks)
    trained, _ = fine_tune(init, mask, source, val, cfg)
    out = trained.merged(mask)
    if reset_head:
        fresh = init_random(arch, seed + 1)
        for k in HEAD_TENSORS:
            out.base[k] = fresh.base[k]
    return out
