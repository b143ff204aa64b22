"""Confusion matrices and balanced authentication error rates."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InsufficientDataError, InvalidArgumentError


def is_authentic_label(label):
    return "_" not in label


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels; ``percent`` is row-normalized."""

    rows: list
    cols: list
    counts: list
    percent: list

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def confusion(records, rows=None, cols=None):
    """Build a row-normalized confusion matrix from classification records.

    Each record needs ``true_label`` and ``predicted_label``. ``rows`` and
    ``cols`` fix the label order; by default they are the labels seen, in
    first-appearance order.
    """
    records = list(records)
    if not records:
        raise InvalidArgumentError("no classification records")
    if rows is None:
        rows = list(dict.fromkeys(r["true_label"] for r in records))
    if cols is None:
        cols = list(dict.fromkeys(r["predicted_label"] for r in records))
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for r in records:
        if r["true_label"] not in rows or r["predicted_label"] not in cols:
            raise InvalidArgumentError(
                f"record labels {r['true_label']}->{r['predicted_label']} outside the class set")
        counts[rows.index(r["true_label"]), cols.index(r["predicted_label"])] += 1
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(totals > 0, 100.0 * counts / np.maximum(totals, 1), 0.0)
    return ConfusionMatrix(list(rows), list(cols), counts.tolist(), pct.tolist())


@dataclass
class MetricsReport:
    """Balanced authentication error.

    ``p_err = (mean_p_miss + mean_p_fa) / 2`` where the means run over the
    per-class rates (authentic classes for misses, counterfeit classes for
    false accepts).
    """

    p_miss: dict
    p_fa: dict
    mean_p_miss: float
    mean_p_fa: float
    p_err: float
    counts: dict
    confusion: ConfusionMatrix = None
    accuracy: float = None
    fingerprint: str = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        if self.confusion is None:
            d["confusion"] = None
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("confusion") is not None:
            d["confusion"] = ConfusionMatrix.from_dict(d["confusion"])
        return cls(**d)


def balanced_error(mean_p_miss, mean_p_fa):
    return (mean_p_miss + mean_p_fa) / 2.0


def auth_metrics(records):
    """Per-class and mean P_miss / P_fa and their average P_err.

    Each record needs ``true_label`` and ``verdict`` (``"Authentic"`` or
    ``"Counterfeit"``). A probe is authentic when its true label has no
    reprint suffix.
    """
    miss, fa, counts = {}, {}, {}
    for r in records:
        label = r["true_label"]
        accepted = r["verdict"] == "Authentic"
        counts[label] = counts.get(label, 0) + 1
        if is_authentic_label(label):
            miss[label] = miss.get(label, 0) + (not accepted)
        else:
            fa[label] = fa.get(label, 0) + accepted
    if not miss or not fa:
        raise InsufficientDataError("auth_metrics needs both authentic and counterfeit probes")
    p_miss = {k: miss[k] / counts[k] for k in sorted(miss)}
    p_fa = {k: fa[k] / counts[k] for k in sorted(fa)}
    mean_miss = float(np.mean(list(p_miss.values())))
    mean_fa = float(np.mean(list(p_fa.values())))
    return MetricsReport(p_miss, p_fa, mean_miss, mean_fa, balanced_error(mean_miss, mean_fa),
                         dict(sorted(counts.items())))


def group_rates(report, groups):
    """One row per named group of counterfeit classes: mean P_miss over all
    authentic classes, mean P_fa over the group, and their P_err.
    """
    out = {}
    for name, labels in groups.items():
        missing = [lbl for lbl in labels if lbl not in report.p_fa]
        if missing:
            raise InsufficientDataError(f"group {name}: no probes for {missing}")
        pfa = float(np.mean([report.p_fa[lbl] for lbl in labels]))
        out[name] = {"classes": list(labels), "p_miss": report.mean_p_miss, "p_fa": pfa,
                     "p_err": balanced_error(report.mean_p_miss, pfa)}
    return out
