"""
Group fairness metrics on a toy classifier
==========================================

Two groups, one classifier. We look at the same scores through the metrics the
search can optimise: per-group AUROC (and the worst of them), the AUROC gap,
equalized-odds difference and demographic-parity difference.
"""
import numpy as np

from fairmask.metrics import ObjectiveKind, auroc, fair_objective, subgroup_report

rng = np.random.default_rng(0)

# %%
# A scorer that separates the majority group well and the minority group less so.
n_major, n_minor = 300, 100
groups = np.r_[np.zeros(n_major, int), np.ones(n_minor, int)]
labels = rng.integers(0, 2, size=groups.size)
signal = np.where(groups == 0, 2.0, 0.7)
scores = 1 / (1 + np.exp(-(signal * (2 * labels - 1) + rng.normal(size=groups.size))))

# %%
# AUROC is the Mann-Whitney statistic; ties count one half.
print("tied scores give 0.5:", auroc([0.3, 0.3], [0, 1]))
print("overall AUROC: %.3f" % auroc(scores, labels))

# %%
# The subgroup report collects everything at once. Hard predictions use a 0.5 threshold.
rep = subgroup_report(scores, labels, groups)
for g, a in rep.per_group_auc.items():
    print(f"group {g}: AUROC {a:.3f}")
print(f"min-group AUROC {rep.min_auc:.3f}, gap {rep.gap_auc:.3f}")
print(f"EOddsD {rep.eoddsd:.3f}, DPD {rep.dpd:.3f}")

# %%
# Every objective is "higher is better", so the gap-style metrics come negated.
for kind in ObjectiveKind:
    print(f"{kind.value:>12}: {fair_objective(rep, kind):+.3f}")
