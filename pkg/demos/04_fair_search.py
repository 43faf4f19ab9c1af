"""
Searching masks for the worst-off group
=======================================

The outer loop proposes a mask and a learning rate with TPE, fine-tunes, and
scores the minority-aware objective on validation. Successive halving stops
unpromising trials early. We compare the winner with full fine-tuning whose
learning rate was tuned on the same objective.

Pass a trial count on the command line for a quicker look, e.g. ``python 04_fair_search.py 12``.
"""
import sys
from dataclasses import replace

import numpy as np

from fairmask.config import ExperimentConfig, base_model, run_config, splits
from fairmask.orchestrator import mask_frequency, run_baselines, run_search
from fairmask.search_space import KINDS, encode

n_trials = int(sys.argv[1]) if len(sys.argv) > 1 else 40
cfg = ExperimentConfig()
cfg = replace(cfg, search=replace(cfg.search, n_trials=n_trials))
theta0 = base_model(cfg)
data = splits(cfg)

result = run_search(run_config(cfg), theta0, *data)
states = [r.state for r in result.records]
print(f"{n_trials} trials: {states.count('completed')} completed, {states.count('pruned')} pruned, "
      f"{states.count('failed')} failed")
print(f"best trial {result.best_trial}: mask {encode(result.best_mask)} lr {result.best_lr:.2e} "
      f"val min-AUC {result.best_value:.3f}")

# %%
# The tuned full fine-tuning reference.
ft = run_baselines(theta0, data, cfg.train, methods=("full_ft",))["full_ft"]
for name, rep in [("search", result.test_report), ("full FT", ft.test_report)]:
    print(f"{name:>8}: test min-AUC {rep.min_auc:.3f}  gap {rep.gap_auc:.3f}  overall {rep.overall_auc:.3f}")

# %%
# Best-so-far curve (per finished trial) and which modules the winner updates.
print("best so far:", " ".join(f"{v:.3f}" for v in result.trajectory))
freq = mask_frequency([result])
print("block  " + "  ".join(KINDS))
for b, row in enumerate(freq):
    print(f"{b:>5}  " + "  ".join(f"{v:4.0f}" for v in row))
print("modules updated:", int(np.sum(freq)), "of", freq.size)
