"""Tree-structured Parzen Estimator over mask bits and a log-uniform learning rate.

Each dimension is modelled independently. Mask bits use smoothed Bernoulli
estimates; log10(lr) uses a truncated Gaussian kernel density mixed with the
uniform prior. Candidates are drawn from the good-trial density ``l`` and the
one with the largest ``l/g`` ratio is returned.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, SearchError
from .search_space import SearchSpace, TrialConfig, sample_prior


@dataclass(frozen=True)
class TpeConfig:
    gamma: float = 0.25
    n_candidates: int = 24
    n_startup: int = 10
    prior_weight: float = 1.0
    min_bandwidth: float = 1e-3

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.n_candidates < 1 or self.n_startup < 0:
            raise ConfigError("n_candidates must be positive and n_startup nonnegative")
        if self.prior_weight <= 0 or self.min_bandwidth <= 0:
            raise ConfigError("prior_weight and min_bandwidth must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class Observation:
    """One finished trial as seen by the sampler.

    ``value`` is the final objective for completed trials, the last reported
    intermediate value for pruned ones, and ``None`` for failed ones.
    """

    trial_id: int
    config: TrialConfig
    value: float | None
    pruned: bool = False

    @property
    def completed(self) -> bool:
        return not self.pruned and self.value is not None


def split_history(history, gamma: float) -> tuple[list[Observation], list[Observation]]:
    """Top ``ceil(gamma * n_completed)`` completed trials vs everything else."""
    completed = [o for o in history if o.completed]
    if len(completed) < 2:
        raise SearchError("need at least two completed trials to split the history")
    n_good = max(1, math.ceil(gamma * len(completed) - 1e-12))
    ranked = sorted(completed, key=lambda o: (-o.value, o.trial_id))
    good = ranked[:n_good]
    good_ids = {o.trial_id for o in good}
    bad = [o for o in sorted(history, key=lambda o: o.trial_id) if o.trial_id not in good_ids]
    return good, bad


def bit_probabilities(obs, space: SearchSpace, prior_weight: float) -> np.ndarray:
    """Smoothed P(bit = 1) for every searched bit."""
    if obs:
        counts = np.sum([space.flat_bits(o.config.mask) for o in obs], axis=0)
    else:
        counts = np.zeros(space.n_bits)
    return (counts + 0.5 * prior_weight) / (len(obs) + prior_weight)


class _LogLrDensity:
    """Truncated Gaussian kernels on log10(lr) plus a uniform prior component."""

    def __init__(self, obs, space: SearchSpace, cfg: TpeConfig):
        self.lo, self.hi = (math.log10(v) for v in space.lr_range)
        self.mus = np.array([math.log10(o.config.learning_rate) for o in obs], dtype=np.float64)
        n = len(self.mus)
        sd = float(np.std(self.mus)) if n > 1 else 0.0
        scott = sd * n ** (-1.0 / 5.0) if n else 0.0
        # the range-relative floor keeps repeated lrs from collapsing the kernel to a spike
        self.bw = max(scott, cfg.min_bandwidth, (self.hi - self.lo) / min(100, n + 1))
        w = np.concatenate([np.ones(n), [cfg.prior_weight]])
        self.weights = w / w.sum()
        # probability mass of each kernel inside [lo, hi]
        self.mass = ndtr((self.hi - self.mus) / self.bw) - ndtr((self.lo - self.mus) / self.bw)

    def sample(self, rng: np.random.Generator) -> float:
        k = rng.choice(len(self.weights), p=self.weights)
        if k == len(self.mus):
            return rng.uniform(self.lo, self.hi)
        while True:
            v = rng.normal(self.mus[k], self.bw)
            if self.lo <= v <= self.hi:
                return v

    def log_pdf(self, v: float) -> float:
        dens = self.weights[-1] / (self.hi - self.lo)
        if self.mus.size:
            z = (v - self.mus) / self.bw
            kern = np.exp(-0.5 * z * z) / (self.bw * math.sqrt(2 * math.pi) * self.mass)
            dens += float(np.dot(self.weights[:-1], kern))
        return math.log(max(dens, 1e-300))


def propose(history, space: SearchSpace, cfg: TpeConfig, rng: np.random.Generator) -> TrialConfig:
    history = list(history)
    completed = sum(o.completed for o in history)
    if len(history) < cfg.n_startup or completed < 2:
        return sample_prior(space, rng)
    good, bad = split_history(history, cfg.gamma)
    pl = bit_probabilities(good, space, cfg.prior_weight)
    pg = bit_probabilities(bad, space, cfg.prior_weight)
    dl = _LogLrDensity(good, space, cfg)
    dg = _LogLrDensity(bad, space, cfg)

    best, best_score = None, -math.inf
    for _ in range(cfg.n_candidates):
        bits = rng.random(space.n_bits) < pl
        log_lr = dl.sample(rng)
        score = float(np.sum(np.where(bits, np.log(pl) - np.log(pg), np.log1p(-pl) - np.log1p(-pg))))
        score += dl.log_pdf(log_lr) - dg.log_pdf(log_lr)
        if score > best_score:
            best, best_score = (bits, log_lr), score
    bits, log_lr = best
    lo, hi = space.lr_range
    return TrialConfig(space.mask_from_flat(bits), float(min(max(10.0 ** log_lr, lo), hi)))
