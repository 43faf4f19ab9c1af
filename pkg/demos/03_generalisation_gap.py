"""
Bias that only shows up at test time
====================================

Full fine-tuning fits the training set almost perfectly for both groups, so
training metrics look fair. The minority group is smaller and noisier, and its
test AUROC falls well behind the majority's. Tuning on a validation fairness
objective is what exposes this.
"""
from dataclasses import replace

import numpy as np

from fairmask.config import ExperimentConfig, base_model, splits
from fairmask.search_space import full_ft
from fairmask.trainer import evaluate, fine_tune

base = ExperimentConfig()
theta0 = base_model(base)
mask = full_ft(base.arch.n_blocks)

print(f"{'seed':>4} {'train maj':>9} {'train min':>9} {'test maj':>9} {'test min':>9}")
gaps = []
for seed in range(3):
    cfg = replace(base, data=replace(base.data, synth_seed=seed, split_seed=seed))
    train, val, test = splits(cfg)
    params, _ = fine_tune(theta0, mask, train, val, cfg.train.replace(learning_rate=1e-2, seed=seed))
    tr, te = evaluate(params, mask, train), evaluate(params, mask, test)
    gaps.append(te.per_group_auc[0] - te.per_group_auc[1])
    print(f"{seed:>4} {tr.per_group_auc[0]:9.4f} {tr.per_group_auc[1]:9.4f} "
          f"{te.per_group_auc[0]:9.4f} {te.per_group_auc[1]:9.4f}")

print(f"median test gap (majority - minority): {np.median(gaps):.3f}")
