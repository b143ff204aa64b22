"""Command-line entry point.

    diffcdp synth       --config run.yaml
    diffcdp train       --config run.yaml [--variant main|unseen|...]
    diffcdp train-codec --config run.yaml
    diffcdp classify    --checkpoint ckpt --template t.png --probe p.png --expected HP55
    diffcdp eval        --config run.yaml --kind main [--checkpoint ckpt]
    diffcdp report      --run runs/default/eval/main

``--set section.field=value`` overrides any config field. Exit codes: 0
success, 2 invalid input or configuration, 3 I/O failure, 4 training
diverged.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import plotting
from .classify import authenticate, classify, probe_record, read_records, write_records
from .codec import generic_corpus, recon_mse, save_codec, train_codec
from .config import load_config
from .denoiser import load_checkpoint, save_checkpoint
from .errors import CdpError, TrainingDivergedError
from .evaluation.experiments import KIND_VARIANTS, VARIANTS, fit_variant, run_experiment
from .evaluation.metrics import MetricsReport
from .evaluation.split import split_by_template
from .synthcdp import DatasetManifest, build_dataset, gen_template

log = logging.getLogger("diffcdp")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4


def _out(config, *parts):
    path = config.output_dir.joinpath(*parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def cmd_synth(config):
    """Write the dataset (PNG images + manifest.json) under ``output_dir/dataset``."""
    config.write(config.output_dir)
    ds = config.raw["dataset"]
    manifest = build_dataset(config.classes(), ds["n_templates"], config.seed_for("dataset"), ds["side"])
    path = manifest.write(config.output_dir / "dataset")
    log.info("wrote %d samples to %s", len(manifest.samples), path)
    return path


def _load_manifest(config, path=None):
    path = Path(path) if path else config.output_dir / "dataset" / "manifest.json"
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    manifest = DatasetManifest.load(path)
    if manifest.seed != config.seed_for("dataset") or [c.label for c in manifest.classes] != config.raw["dataset"]["classes"]:
        raise CdpError(f"manifest {path} was not produced by this configuration")
    return manifest


def checkpoint_path(config, variant):
    return config.output_dir / "checkpoints" / f"{variant}.ckpt"


def cmd_train(config, manifest_path=None, variant="main"):
    if variant not in VARIANTS:
        raise CdpError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    manifest = _load_manifest(config, manifest_path)
    config.write(config.output_dir)
    split = split_by_template(manifest, config.raw["eval"]["fractions"], config.seed_for("split"))
    ckpt = fit_variant(config, variant, manifest, split, log=log.info)
    path = save_checkpoint(checkpoint_path(config, variant), ckpt)
    _write_text(path.with_suffix(".loss.json"),
                json.dumps({"loss_curve": ckpt.metadata["loss_curve"],
                            "loss_curve_smoothed": ckpt.metadata["loss_curve_smoothed"]}, indent=2) + "\n")
    log.info("saved %s (fingerprint %s)", path, config.fingerprint())
    return path


def cmd_train_codec(config):
    """Fit template- and generic-corpus codecs and compare them on held-out templates."""
    config.write(config.output_dir)
    c, side = config.raw["codec"], config.raw["dataset"]["side"]
    root = config.seed_for("codec")
    templates = [gen_template(root + i, side).pixels.astype(np.float64)
                 for i in range(c["n_train"] + c["n_heldout"])]
    train_set, heldout = templates[:c["n_train"]], templates[c["n_train"]:]
    results = {}
    for corpus, images in (("templates", train_set),
                           ("generic", list(generic_corpus(c["n_train"], side, root)))):
        codec, curve = train_codec(images, config.codec_hyperparams(corpus), config.codec_config(),
                                   corpus, log=log.info)
        save_codec(_out(config, "codec", f"{corpus}.ckpt"), codec,
                   {"loss_curve": curve, "config_fingerprint": config.fingerprint()})
        results[corpus] = {"heldout_mse": recon_mse(codec, heldout), "train_curve": curve}
    results["ratio"] = results["templates"]["heldout_mse"] / results["generic"]["heldout_mse"]
    results["fingerprint"] = config.fingerprint()
    path = _write_text(config.output_dir / "codec" / "report.json",
                       json.dumps(results, indent=2, sort_keys=True) + "\n")
    log.info("codec held-out MSE: templates %.4f, generic %.4f",
             results["templates"]["heldout_mse"], results["generic"]["heldout_mse"])
    return path


def _read_png(path, binary=False):
    data = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return (data >= 0.5).astype(np.float64) if binary else data


def cmd_classify(checkpoint, template, probe, expected, n_trials=50, seed=0):
    ckpt = load_checkpoint(checkpoint)
    labels = list(ckpt.labels)
    if expected not in labels:
        raise CdpError(f"expected class {expected!r} not in checkpoint classes {labels}")
    c_hat, scores = classify(ckpt.model, ckpt.schedule, _read_png(template, binary=True),
                             _read_png(probe), range(len(labels)), n_trials, seed)
    decision = authenticate(c_hat, labels.index(expected), labels, scores)
    return probe_record(-1, None, expected, labels, scores, c_hat, decision)


def report_text(kind, reports, baselines):
    lines = [f"experiment: {kind}"]
    header = f"{'method':<14}{'P_err':>8}{'P_miss':>8}{'P_fa':>8}{'acc':>8}"
    lines += [header, "-" * len(header)]
    for name, rep in list(reports.items()) + [(f"baseline:{m}", r) for m, r in baselines.items()]:
        acc = "" if rep.accuracy is None else f"{rep.accuracy:.3f}"
        lines.append(f"{name:<14}{rep.p_err:>8.3f}{rep.mean_p_miss:>8.3f}{rep.mean_p_fa:>8.3f}{acc:>8}")
    for name, rep in reports.items():
        lines.append("")
        lines.append(f"[{name}] per-class rates")
        for lbl, v in rep.p_miss.items():
            lines.append(f"  P_miss {lbl:<10}{v:.3f}")
        for lbl, v in rep.p_fa.items():
            lines.append(f"  P_fa   {lbl:<10}{v:.3f}")
        for gname, g in rep.extra.get("groups", {}).items():
            lines.append(f"  {gname:<8} P_err {g['p_err']:.3f}  P_miss {g['p_miss']:.3f}  P_fa {g['p_fa']:.3f}")
        if rep.confusion is not None:
            cm = rep.confusion
            lines.append(f"[{name}] confusion matrix (%), rows = true")
            lines.append(" " * 10 + "".join(f"{c:>9}" for c in cm.cols))
            for lbl, row in zip(cm.rows, cm.percent):
                lines.append(f"{lbl:<10}" + "".join(f"{v:>9.1f}" for v in row))
    return "\n".join(lines) + "\n"


def cmd_eval(config, kind, checkpoint=None, manifest_path=None):
    """Run an experiment and write report.json, report.txt and records under ``output_dir/eval/<kind>``."""
    config.write(config.output_dir)
    variants = KIND_VARIANTS[kind] if kind in KIND_VARIANTS else ()
    checkpoints = {}
    if checkpoint is not None:
        checkpoints[variants[0]] = load_checkpoint(checkpoint)
    for v in variants:
        path = checkpoint_path(config, v)
        if v not in checkpoints and path.exists():
            checkpoints[v] = load_checkpoint(path)
    data = None
    if manifest_path is not None or (config.output_dir / "dataset" / "manifest.json").exists():
        manifest = _load_manifest(config, manifest_path)
        data = (manifest, split_by_template(manifest, config.raw["eval"]["fractions"], config.seed_for("split")))
    train_missing = kind in ("ablation_no_template", "ablation_identity")
    result = run_experiment(kind, config, checkpoints, data, train_missing=train_missing, log=log.info)
    out = config.output_dir / "eval" / kind
    out.mkdir(parents=True, exist_ok=True)
    for v, ckpt in result.checkpoints.items():
        if v not in checkpoints:
            save_checkpoint(checkpoint_path(config, v), ckpt)
    doc = {
        "kind": kind,
        "fingerprint": result.fingerprint,
        "reports": {v: r.to_dict() for v, r in result.reports.items()},
        "baselines": {m: r.to_dict() for m, r in result.baselines.items()},
        "loss_curves": {v: c.metadata.get("loss_curve", []) for v, c in result.checkpoints.items()},
    }
    _write_text(out / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_text(out / "report.txt", report_text(kind, result.reports, result.baselines))
    if result.thresholds is not None:
        _write_text(out / "thresholds.json", result.thresholds.to_json())
    for v, records in result.records.items():
        write_records(out / f"records_{v}.jsonl", records)
    return out / "report.json"


def _tsv(path, header, rows):
    lines = ["\t".join(header)] + ["\t".join(str(x) for x in row) for row in rows]
    return _write_text(path, "\n".join(lines) + "\n")


def cmd_report(run_dir, out_dir=None):
    """Render TSV tables and PNG figures from an eval directory."""
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "report.json").read_text())
    out = Path(out_dir) if out_dir else run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    reports = {v: MetricsReport.from_dict(r) for v, r in doc["reports"].items()}
    baselines = {f"baseline:{m}": MetricsReport.from_dict(r) for m, r in doc.get("baselines", {}).items()}
    rows = [(name, f"{r.p_err:.4f}", f"{r.mean_p_miss:.4f}", f"{r.mean_p_fa:.4f}",
             "" if r.accuracy is None else f"{r.accuracy:.4f}")
            for name, r in {**reports, **baselines}.items()]
    written = [_tsv(out / "summary.tsv", ["method", "p_err", "p_miss", "p_fa", "accuracy"], rows)]
    for v, rep in reports.items():
        per_class = [("p_miss", k, f"{x:.4f}") for k, x in rep.p_miss.items()]
        per_class += [("p_fa", k, f"{x:.4f}") for k, x in rep.p_fa.items()]
        written.append(_tsv(out / f"per_class_{v}.tsv", ["rate", "class", "value"], per_class))
        if rep.confusion is not None:
            cm = rep.confusion
            written.append(_tsv(out / f"confusion_{v}.tsv", ["true\\pred"] + cm.cols,
                                [[lbl] + [f"{x:.1f}" for x in row] for lbl, row in zip(cm.rows, cm.percent)]))
            written.append(plotting.confusion_figure(cm, out / f"confusion_{v}.png",
                                                     f"{doc['kind']} / {v}: confusion (%)"))
        groups = rep.extra.get("groups")
        if groups:
            written.append(_tsv(out / f"groups_{v}.tsv", ["group", "p_err", "p_miss", "p_fa"],
                                [(g, f"{x['p_err']:.4f}", f"{x['p_miss']:.4f}", f"{x['p_fa']:.4f}")
                                 for g, x in groups.items()]))
        rec_path = run_dir / f"records_{v}.jsonl"
        if rec_path.exists():
            written.append(plotting.score_figure(read_records(rec_path), out / f"margins_{v}.png"))
    written.append(plotting.error_rate_figure({**reports, **baselines}, out / "error_rates.png"))
    curves = {v: c for v, c in doc.get("loss_curves", {}).items() if c}
    if curves:
        written.append(plotting.loss_figure(curves, out / "loss_curves.png"))
    return written


def build_parser():
    p = argparse.ArgumentParser(prog="diffcdp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train.epochs=5")
        sp.add_argument("--output-dir", help="shortcut for --set output_dir=...")
        return sp

    with_config(sub.add_parser("synth", help="synthesize the dataset"))
    sp = with_config(sub.add_parser("train", help="train a denoiser"))
    sp.add_argument("--manifest")
    sp.add_argument("--variant", default="main", choices=sorted(VARIANTS))
    with_config(sub.add_parser("train-codec", help="run the codec reconstruction study"))
    sp = sub.add_parser("classify", help="classify and authenticate a single probe")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--template", required=True)
    sp.add_argument("--probe", required=True)
    sp.add_argument("--expected", required=True, help="label of the expected authentic printer")
    sp.add_argument("--n-trials", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp = with_config(sub.add_parser("eval", help="run an experiment"))
    sp.add_argument("--kind", default="main", choices=["main", "unseen_counterfeit",
                                                       "ablation_no_template", "ablation_identity"])
    sp.add_argument("--checkpoint")
    sp.add_argument("--manifest")
    sp = sub.add_parser("report", help="render tables and figures for an eval directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out")
    return p


def _config(args):
    overrides = list(args.set)
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    return load_config(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            print(cmd_synth(_config(args)))
        elif args.command == "train":
            print(cmd_train(_config(args), args.manifest, args.variant))
        elif args.command == "train-codec":
            print(cmd_train_codec(_config(args)))
        elif args.command == "classify":
            rec = cmd_classify(args.checkpoint, args.template, args.probe, args.expected,
                               args.n_trials, args.seed)
            print(json.dumps(rec, sort_keys=True))
        elif args.command == "eval":
            print(cmd_eval(_config(args), args.kind, args.checkpoint, args.manifest))
        elif args.command == "report":
            for path in cmd_report(args.run, args.out):
                print(path)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
