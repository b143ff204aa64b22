"""Classification by minimum noise-prediction error, and the authentication rule.

Each candidate printer class conditions the denoiser in turn; the class
whose conditioning best predicts the injected noise wins. All classes are
scored against the same ``(t, eps)`` draws, and trial ``j`` depends only
on ``(seed, j)``.
"""

import enum
import json
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError
from .schedule import q_sample, to_signed
from .seeding import rng as seeded_rng


class Verdict(str, enum.Enum):
    AUTHENTIC = "Authentic"
    COUNTERFEIT = "Counterfeit"


@dataclass(frozen=True)
class ClassScores:
    """Mean squared noise-prediction error per candidate class id."""

    classes: tuple
    errors: tuple
    n_trials: int
    seed: int

    def as_dict(self):
        return {int(c): float(e) for c, e in zip(self.classes, self.errors)}

    def argmin(self):
        errs = np.asarray(self.errors)
        best = errs.min()
        return min(c for c, e in zip(self.classes, errs) if e == best)


@dataclass(frozen=True)
class AuthDecision:
    predicted_class: object
    expected_class: object
    verdict: Verdict
    scores: object = None


def trial_draws(seed, n_trials, T, shape):
    """Timesteps uniform on [1, T] and standard-normal noise, one pair per trial."""
    ts = np.empty(n_trials, dtype=np.int64)
    eps = np.empty((n_trials,) + tuple(shape), dtype=np.float64)
    for j in range(n_trials):
        gen = seeded_rng(seed, "trial", j)
        ts[j] = gen.integers(1, T + 1)
        eps[j] = gen.standard_normal(shape)
    return ts, eps


def _dtype(model):
    try:
        return next(model.parameters()).dtype
    except (AttributeError, StopIteration):
        return torch.float64


@torch.no_grad()
def class_errors(model, schedule, x0, z, classes, n_trials, seed):
    """Per-class errors for one probe, as a float64 array aligned with ``classes``.

    ``x0`` and ``z`` are pixel images in [0, 1]; they are mapped to [-1, 1]
    before noising. The error of a trial is the squared L2 norm over all
    pixels.
    """
    if n_trials < 1:
        raise InvalidArgumentError(f"n_trials must be >= 1, got {n_trials}")
    classes = list(classes)
    if not classes:
        raise InvalidArgumentError("no candidate classes")
    n_known = getattr(model, "n_classes", None)
    if n_known is not None and not all(0 <= c < n_known for c in classes):
        raise InvalidArgumentError(f"unknown class id in {classes}; model knows {n_known} classes")
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x0.shape != z.shape:
        raise InvalidArgumentError(f"template {x0.shape} and probe {z.shape} shapes differ")
    ts, eps = trial_draws(seed, n_trials, schedule.T, x0.shape)
    x_t = q_sample(np.broadcast_to(to_signed(x0), eps.shape), ts, eps, schedule)
    dtype = _dtype(model)
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    k = len(classes)
    xb = torch.as_tensor(np.tile(x_t, (k, 1, 1)), dtype=dtype)[:, None]
    zb = torch.as_tensor(np.broadcast_to(to_signed(z), (k * n_trials,) + z.shape).copy(), dtype=dtype)[:, None]
    tb = torch.as_tensor(np.tile(ts, k), dtype=torch.long)
    cb = torch.as_tensor(np.repeat(np.asarray(classes, dtype=np.int64), n_trials), dtype=torch.long)
    pred = model(xb, tb, zb, cb).to(torch.float64).numpy()[:, 0]
    if was_training:
        model.train()
    sq = ((np.tile(eps, (k, 1, 1)) - pred) ** 2).reshape(k, n_trials, -1).sum(axis=2)
    return sq.mean(axis=1)


def class_error(model, schedule, x0, z, c, n_trials, seed):
    return float(class_errors(model, schedule, x0, z, [c], n_trials, seed)[0])


def classify(model, schedule, template, probe, classes, n_trials=50, seed=0):
    """Return ``(predicted class id, ClassScores)``; ties go to the lowest id."""
    classes = sorted(int(c) for c in classes)
    if not classes:
        raise InvalidArgumentError("empty candidate class set")
    errs = class_errors(model, schedule, template, probe, classes, n_trials, seed)
    scores = ClassScores(tuple(classes), tuple(float(e) for e in errs), n_trials, seed)
    return scores.argmin(), scores


def authenticate(c_hat, c_star, labels, scores=None):
    """Authentic iff the predicted class is the expected authentic printer.

    ``labels`` maps class ids to labels; ``c_star`` must name an authentic
    (``HPXX``) class.
    """
    n = len(labels)
    if not (0 <= c_hat < n and 0 <= c_star < n):
        raise InvalidArgumentError(f"class ids must be in [0, {n})")
    if "_" in labels[c_star]:
        raise InvalidArgumentError(f"expected class {labels[c_star]} is a counterfeit class")
    verdict = Verdict.AUTHENTIC if c_hat == c_star else Verdict.COUNTERFEIT
    return AuthDecision(c_hat, c_star, verdict, scores)


def probe_record(template_id, true_label, c_star_label, labels, scores, c_hat, decision):
    """One JSON-lines record for a classified probe."""
    return {
        "template_id": int(template_id),
        "true_label": true_label,
        "true_class": labels.index(true_label) if true_label in labels else None,
        "expected_label": c_star_label,
        "expected_class": labels.index(c_star_label),
        "scores": {labels[c]: e for c, e in scores.as_dict().items()},
        "predicted_class": int(c_hat),
        "predicted_label": labels[c_hat],
        "verdict": decision.verdict.value,
        "n_trials": scores.n_trials,
        "seed": scores.seed,
    }


def write_records(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_records(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
