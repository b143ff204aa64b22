"""Template-similarity authenticators: NCC and SSIM with per-printer thresholds."""

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .classify import AuthDecision, Verdict
from .errors import DegenerateInputError, InsufficientDataError, InvalidArgumentError

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def ncc(a, b):
    """Zero-mean, unit-norm cross-correlation of two equally shaped images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(np.sum(a * a)), np.sqrt(np.sum(b * b))
    if na == 0 or nb == 0:
        raise DegenerateInputError("NCC is undefined for a constant image")
    return float(np.clip(np.sum(a * b) / (na * nb), -1.0, 1.0))


def ssim(a, b, window=SSIM_WINDOW, k1=SSIM_K1, k2=SSIM_K2, data_range=1.0):
    """Mean SSIM over all ``window x window`` patches (stride 1, uniform weights)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < window:
        raise InvalidArgumentError(f"images must be 2-D and at least {window} pixels on a side")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    pa = sliding_window_view(a, (window, window))
    pb = sliding_window_view(b, (window, window))
    mu_a = pa.mean(axis=(-1, -2))
    mu_b = pb.mean(axis=(-1, -2))
    var_a = pa.var(axis=(-1, -2))
    var_b = pb.var(axis=(-1, -2))
    cov = (pa * pb).mean(axis=(-1, -2)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


METRICS = {"ncc": ncc, "ssim": ssim}


def error_rates(authentic, counterfeit, threshold):
    """``(P_miss, P_fa)`` when accepting scores ``>= threshold``."""
    authentic = np.asarray(authentic, dtype=np.float64)
    counterfeit = np.asarray(counterfeit, dtype=np.float64)
    return float(np.mean(authentic < threshold)), float(np.mean(counterfeit >= threshold))


def equal_error_threshold(authentic, counterfeit):
    """Threshold among the observed scores (plus one above all of them)
    minimizing ``|P_miss - P_fa|``; remaining ties prefer the lower
    balanced error, then the lower threshold.
    """
    authentic = np.asarray(authentic, dtype=np.float64)
    counterfeit = np.asarray(counterfeit, dtype=np.float64)
    if authentic.size == 0 or counterfeit.size == 0:
        raise InsufficientDataError("calibration needs both authentic and counterfeit scores")
    pooled = np.concatenate([authentic, counterfeit])
    candidates = np.unique(np.append(pooled, np.nextafter(pooled.max(), np.inf)))
    best = None
    for thr in candidates:
        pm, pf = error_rates(authentic, counterfeit, thr)
        key = (abs(pm - pf), pm + pf, thr)
        if best is None or key < best:
            best = key
    return float(best[2])


@dataclass
class ThresholdTable:
    """``entries[metric][authentic label] -> threshold``."""

    entries: dict
    rule: str = "equal-error"

    def threshold(self, metric, label):
        try:
            return self.entries[metric][label]
        except KeyError:
            raise InvalidArgumentError(f"no {metric} threshold for class {label}") from None

    def to_dict(self):
        return {"rule": self.rule, "entries": self.entries}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls({m: {k: float(v) for k, v in e.items()} for m, e in d["entries"].items()},
                   d.get("rule", "equal-error"))


def calibrate(scores, rule="equal-error"):
    """Per-class thresholds from validation scores.

    ``scores[metric][label] = (authentic_scores, counterfeit_scores)`` where
    ``label`` is the authentic printer the probes claim.
    """
    if rule != "equal-error":
        raise InvalidArgumentError(f"unknown calibration rule {rule!r}")
    entries = {}
    for metric, per_class in scores.items():
        entries[metric] = {}
        for label, (auth, fake) in per_class.items():
            if len(auth) == 0 or len(fake) == 0:
                raise InsufficientDataError(f"{metric}/{label}: need authentic and counterfeit scores")
            entries[metric][label] = equal_error_threshold(auth, fake)
    return ThresholdTable(entries, rule)


def authenticate_similarity(probe, template, c_star, table, metric="ncc"):
    """Authentic iff ``metric(probe, template) >= threshold[c_star]``."""
    thr = table.threshold(metric, c_star)
    score = METRICS[metric](probe, template)
    verdict = Verdict.AUTHENTIC if score >= thr else Verdict.COUNTERFEIT
    return AuthDecision(None, c_star, verdict, score)
