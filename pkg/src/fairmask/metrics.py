"""AUROC and group-fairness measures.

All objectives exposed through :func:`fair_objective` are higher-is-better.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, UndefinedMetricError


class ObjectiveKind(str, enum.Enum):
    MIN_GROUP_AUC = "MinGroupAUC"
    OVERALL_AUC = "OverallAUC"
    NEG_GAP = "NegGap"
    NEG_EODDSD = "NegEOddsD"
    NEG_DPD = "NegDPD"

    @classmethod
    def parse(cls, value) -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown objective {value!r}; choose from {[k.value for k in cls]}") from None


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midranks for tied scores.

    Equals the fraction of (positive, negative) pairs where the positive scores
    higher, counting ties as one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ConfigError("scores and labels must be 1-D of equal length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _rates(preds, labels, groups, target):
    out = {}
    for g in np.unique(groups):
        sel = (groups == g) & (labels == target)
        if not sel.any():
            kind = "true positive" if target == 1 else "false positive"
            raise UndefinedMetricError(f"{kind} rate undefined: no {'positive' if target else 'negative'} labels", group=int(g))
        out[int(g)] = float(preds[sel].mean())
    return out


def eodds_diff(preds, labels, groups) -> float:
    """Larger of the cross-group spreads of true-positive and false-positive rates."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    tpr = _rates(preds, labels, groups, 1)
    fpr = _rates(preds, labels, groups, 0)
    spread = lambda r: max(r.values()) - min(r.values())
    return float(max(spread(tpr), spread(fpr)))


def dp_diff(preds, groups, n_groups: int | None = None) -> float:
    """Spread between the highest and lowest per-group selection rates."""
    preds = np.asarray(preds)
    groups = np.asarray(groups)
    ids = range(n_groups) if n_groups is not None else np.unique(groups)
    rates = []
    for g in ids:
        sel = groups == g
        if not sel.any():
            raise UndefinedMetricError("selection rate undefined: empty group", group=int(g))
        rates.append(float(preds[sel].mean()))
    return float(max(rates) - min(rates))


@dataclass
class SubgroupReport:
    overall_auc: float
    per_group_auc: dict
    min_auc: float
    gap_auc: float
    eoddsd: float | None
    dpd: float
    undefined_groups: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall_auc": self.overall_auc,
            "per_group_auc": {str(k): v for k, v in sorted(self.per_group_auc.items())},
            "min_auc": self.min_auc,
            "gap_auc": self.gap_auc,
            "eoddsd": self.eoddsd,
            "dpd": self.dpd,
            "undefined_groups": sorted(self.undefined_groups),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SubgroupReport":
        return cls(
            overall_auc=d["overall_auc"],
            per_group_auc={int(k): v for k, v in d["per_group_auc"].items()},
            min_auc=d["min_auc"],
            gap_auc=d["gap_auc"],
            eoddsd=d["eoddsd"],
            dpd=d["dpd"],
            undefined_groups=list(d.get("undefined_groups", [])),
        )


def subgroup_report(scores, labels, groups, threshold: float = 0.5, strict: bool = False) -> SubgroupReport:
    """Overall and per-group AUROC plus EOddsD and DPD at a hard threshold.

    Groups with a single class get no AUROC. In ``strict`` mode that raises;
    otherwise they are listed in ``undefined_groups`` and left out of min and gap,
    and EOddsD is reported as ``None`` if any group lacks a rate.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if scores.size < 2:
        raise ConfigError("subgroup_report needs at least two rows")
    overall = auroc(scores, labels)
    per_group, undefined = {}, []
    for g in np.unique(groups):
        sel = groups == g
        try:
            per_group[int(g)] = auroc(scores[sel], labels[sel])
        except UndefinedMetricError:
            if strict:
                raise UndefinedMetricError("per-group AUROC undefined", group=int(g)) from None
            undefined.append(int(g))
    defined = list(per_group.values())
    if not defined:
        raise UndefinedMetricError("no group has both classes")
    preds = (scores >= threshold).astype(np.int64)
    try:
        eo = eodds_diff(preds, labels, groups)
    except UndefinedMetricError:
        if strict:
            raise
        eo = None
    return SubgroupReport(
        overall_auc=overall,
        per_group_auc=per_group,
        min_auc=min(defined),
        gap_auc=max(defined) - min(defined),
        eoddsd=eo,
        dpd=dp_diff(preds, groups),
        undefined_groups=undefined,
    )


def fair_objective(report: SubgroupReport, kind) -> float:
    kind = ObjectiveKind.parse(kind)
    if kind is ObjectiveKind.MIN_GROUP_AUC:
        return report.min_auc
    if kind is ObjectiveKind.OVERALL_AUC:
        return report.overall_auc
    if kind is ObjectiveKind.NEG_GAP:
        return -report.gap_auc
    if kind is ObjectiveKind.NEG_EODDSD:
        if report.eoddsd is None:
            raise UndefinedMetricError("EOddsD undefined for this report")
        return -report.eoddsd
    return -report.dpd
