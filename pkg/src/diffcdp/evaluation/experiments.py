"""Experiment runners: main classification/authentication, unseen
counterfeits, and the two input ablations.

Each runner trains (or reuses) a denoiser, classifies every clean test
probe against the model's class set, and aggregates records sorted by
``(template_id, label order)``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..baselines import METRICS, authenticate_similarity, calibrate
from ..classify import authenticate, classify, probe_record
from ..denoiser import Hyperparams, init_model, train
from ..errors import CompatibilityError, InvalidConfigurationError
from ..synthcdp import build_dataset
from .metrics import auth_metrics, confusion, group_rates, is_authentic_label
from .split import split_by_template

KINDS = ("main", "unseen_counterfeit", "ablation_no_template", "ablation_identity")

# variant name -> (training labels key, identity mode override, x0 source)
VARIANTS = {
    "main": (None, None, "template"),
    "unseen": ("unseen_train_classes", None, "template"),
    "no_template": (None, None, "printed"),
    "index": (None, "index", "template"),
    "structured": (None, "structured", "template"),
}

KIND_VARIANTS = {
    "main": ("main",),
    "unseen_counterfeit": ("unseen",),
    "ablation_no_template": ("no_template",),
    "ablation_identity": ("index", "structured"),
}


@dataclass
class ExperimentResult:
    kind: str
    reports: dict
    records: dict
    fingerprint: str
    baselines: dict = field(default_factory=dict)
    thresholds: object = None
    checkpoints: dict = field(default_factory=dict)

    @property
    def report(self):
        return next(iter(self.reports.values()))


def prepare_data(config):
    classes = config.classes()
    manifest = build_dataset(classes, config.raw["dataset"]["n_templates"], config.seed_for("dataset"),
                             config.raw["dataset"]["side"])
    split = split_by_template(manifest, config.raw["eval"]["fractions"], config.seed_for("split"))
    return manifest, split


def variant_labels(config, variant):
    key = VARIANTS[variant][0]
    return list(config.raw["dataset"]["classes"] if key is None else config.raw["eval"][key])


def hyperparams(config, variant):
    tr = config.raw["train"]
    return Hyperparams(epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"],
                       warmup_steps=tr["warmup_steps"], weight_decay=tr["weight_decay"],
                       grad_clip=tr["grad_clip"], seed=config.seed_for("train", variant),
                       augment=config.augment(), x0_source=VARIANTS[variant][2])


def fit_variant(config, variant, manifest, split, log=None):
    labels = variant_labels(config, variant)
    mode = VARIANTS[variant][1]
    model_cfg = config.denoiser_config(**({"identity_mode": mode} if mode else {}))
    model = init_model(model_cfg, config.seed_for("init", variant), labels)
    ckpt = train(model, manifest, split, hyperparams(config, variant), config.schedule(),
                 class_index={lbl: i for i, lbl in enumerate(labels)}, log=log)
    ckpt.metadata.update({"variant": variant, "config_fingerprint": config.fingerprint()})
    return ckpt


def check_compatible(ckpt, config, variant):
    """Raise CompatibilityError unless ``ckpt`` is what ``variant`` needs."""
    want = variant_labels(config, variant)
    if list(ckpt.labels) != want:
        raise CompatibilityError(
            f"checkpoint classes {list(ckpt.labels)} do not match the {variant!r} class set {want}")
    mode = VARIANTS[variant][1] or config.raw["model"]["identity_mode"]
    if ckpt.config.identity_mode != mode:
        raise CompatibilityError(f"checkpoint identity_mode {ckpt.config.identity_mode!r}, need {mode!r}")
    x0_source = ckpt.metadata.get("hyperparams", {}).get("x0_source", "template")
    if x0_source != VARIANTS[variant][2]:
        raise CompatibilityError(f"checkpoint trained with x0 from {x0_source!r}, need {VARIANTS[variant][2]!r}")
    if ckpt.schedule != config.schedule():
        raise CompatibilityError("checkpoint noise schedule differs from the configured one")
    if ckpt.config.image_side != config.raw["dataset"]["side"]:
        raise CompatibilityError("checkpoint image side differs from dataset.side")


def probe_samples(manifest, split):
    order = {c.label: c.class_id for c in manifest.classes}
    ids = set(split.test)
    return sorted((r for r in manifest.samples if r.template_id in ids),
                  key=lambda r: (r.template_id, order[r.label]))


def classify_probes(ckpt, manifest, probes, n_trials, seed, x0_source="template", workers=1):
    """Classify each probe against the checkpoint's full class set."""
    labels = list(ckpt.labels)
    candidates = list(range(len(labels)))
    model, schedule = ckpt.model, ckpt.schedule

    def one(rec):
        probe = manifest.image_pixels(rec)
        x0 = manifest.template_pixels(rec).astype(np.float64) if x0_source == "template" else probe
        c_hat, scores = classify(model, schedule, x0, probe, candidates, n_trials, seed)
        c_star = manifest.class_by_label(rec.label).claimed_label
        decision = authenticate(c_hat, labels.index(c_star), labels, scores)
        return probe_record(rec.template_id, rec.label, c_star, labels, scores, c_hat, decision)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, probes))
    return [one(r) for r in probes]


def records_report(records, row_labels, col_labels, fingerprint):
    report = auth_metrics(records)
    report.confusion = confusion(records, rows=row_labels, cols=col_labels)
    known = [r for r in records if r["true_label"] in col_labels]
    report.accuracy = float(np.mean([r["predicted_label"] == r["true_label"] for r in known]))
    report.fingerprint = fingerprint
    return report


def run_baselines(config, manifest, split):
    """Per-class calibrated NCC/SSIM thresholds (validation) scored on test."""
    metrics = config.raw["eval"]["baselines"]
    val_ids = set(split.val)

    def claimed(rec):
        return manifest.class_by_label(rec.label).claimed_label

    cal = {m: {} for m in metrics}
    for rec in manifest.samples:
        if rec.template_id not in val_ids:
            continue
        probe, tpl = manifest.image_pixels(rec), manifest.template_pixels(rec)
        for m in metrics:
            pair = cal[m].setdefault(claimed(rec), ([], []))
            pair[0 if is_authentic_label(rec.label) else 1].append(METRICS[m](probe, tpl))
    table = calibrate(cal)
    reports = {}
    for m in metrics:
        recs = []
        for rec in probe_samples(manifest, split):
            d = authenticate_similarity(manifest.image_pixels(rec), manifest.template_pixels(rec),
                                        claimed(rec), table, m)
            recs.append({"true_label": rec.label, "verdict": d.verdict.value, "score": d.scores})
        rep = auth_metrics(recs)
        rep.fingerprint = config.fingerprint()
        reports[m] = rep
    return reports, table


def run_experiment(kind, config, checkpoints=None, data=None, train_missing=True, log=None):
    """Run one experiment kind and return its reports and records.

    ``checkpoints`` maps variant names to pre-trained checkpoints; missing
    variants are trained when ``train_missing`` is true and otherwise raise
    InvalidConfigurationError.
    """
    if kind not in KINDS:
        raise InvalidConfigurationError(f"unknown experiment kind {kind!r}; choose from {KINDS}", "kind")
    checkpoints = dict(checkpoints or {})
    manifest, split = data if data is not None else prepare_data(config)
    fingerprint = config.fingerprint()
    all_labels = [c.label for c in manifest.classes]
    probes = probe_samples(manifest, split)
    result = ExperimentResult(kind, {}, {}, fingerprint)
    for variant in KIND_VARIANTS[kind]:
        if variant in checkpoints:
            check_compatible(checkpoints[variant], config, variant)
        elif train_missing:
            checkpoints[variant] = fit_variant(config, variant, manifest, split, log=log)
        else:
            raise InvalidConfigurationError(f"experiment {kind!r} needs a trained {variant!r} checkpoint",
                                            "checkpoint")
        ckpt = checkpoints[variant]
        records = classify_probes(ckpt, manifest, probes, config.n_trials, config.seed_for("classify"),
                                  VARIANTS[variant][2], config.workers)
        report = records_report(records, all_labels, list(ckpt.labels), fingerprint)
        if kind == "unseen_counterfeit":
            ev = config.raw["eval"]
            report.extra["groups"] = group_rates(report, {
                "known": ev["known_counterfeits"], "unseen": ev["unseen_counterfeits"]})
        report.extra["variant"] = variant
        result.reports[variant] = report
        result.records[variant] = records
        result.checkpoints[variant] = ckpt
    if kind == "main" and config.raw["eval"]["baselines"]:
        result.baselines, result.thresholds = run_baselines(config, manifest, split)
    return result
