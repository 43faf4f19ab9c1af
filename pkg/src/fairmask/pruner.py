"""Asynchronous successive halving.

Rungs sit at ``min_resource * reduction_factor**k`` epochs. When a trial reports
at a rung it continues only if it ranks within the top
``max(1, n // reduction_factor)`` of all values recorded at that rung so far.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import ConfigError


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    PRUNE = "prune"


@dataclass(frozen=True)
class ShConfig:
    reduction_factor: int = 4
    min_resource: int = 1

    def __post_init__(self):
        if self.reduction_factor < 2:
            raise ConfigError("reduction_factor must be at least 2")
        if self.min_resource < 1:
            raise ConfigError("min_resource must be at least 1")

    def rungs(self, total_epochs: int) -> list[int]:
        """Rung epochs strictly before the end of training."""
        out, r = [], self.min_resource
        while r < total_epochs:
            out.append(r)
            r *= self.reduction_factor
        return out


@dataclass
class RungState:
    config: ShConfig
    total_epochs: int
    values: dict = field(default_factory=dict)  # rung index -> {trial id: value}

    def __post_init__(self):
        self.rung_epochs = self.config.rungs(self.total_epochs)
        self.values = {k: {} for k in range(len(self.rung_epochs))}

    def rung_of(self, epoch: int) -> int | None:
        try:
            return self.rung_epochs.index(epoch)
        except ValueError:
            return None


def _top(values: dict, eta: int) -> set:
    keep = max(1, len(values) // eta)
    ranked = sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))
    return {tid for tid, _ in ranked[:keep]}


def report(state: RungState, trial_id: int, epoch: int, value: float) -> Decision:
    """Record ``value`` for a trial that has completed ``epoch`` epochs and decide its fate."""
    k = state.rung_of(epoch)
    if k is None:
        return Decision.CONTINUE
    rung = state.values[k]
    if trial_id in rung:
        raise ConfigError(f"trial {trial_id} already reported at rung {k} (epoch {epoch})")
    rung[trial_id] = float(value)
    return Decision.CONTINUE if trial_id in _top(rung, state.config.reduction_factor) else Decision.PRUNE


def promoted(state: RungState, rung: int) -> set:
    """Trials in the top fraction of rung ``rung`` given everything recorded there now."""
    return _top(state.values[rung], state.config.reduction_factor)
