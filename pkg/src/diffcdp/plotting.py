"""Figures for evaluation reports, written straight to files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    # fixed metadata keeps PNG bytes reproducible
    "svg.hashsalt": "diffcdp",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def confusion_figure(cm, path, title="Confusion matrix (%)"):
    """Heatmap of a row-normalized ConfusionMatrix."""
    pct = np.asarray(cm.percent)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(0.6 * len(cm.cols) + 2.2, 0.5 * len(cm.rows) + 1.5))
        im = ax.imshow(pct, cmap="Blues", vmin=0, vmax=100)
        ax.set_xticks(range(len(cm.cols)), cm.cols, rotation=45, ha="right")
        ax.set_yticks(range(len(cm.rows)), cm.rows)
        ax.set_xlabel("predicted class")
        ax.set_ylabel("true class")
        ax.set_title(title)
        for i in range(pct.shape[0]):
            for j in range(pct.shape[1]):
                ax.text(j, i, f"{pct[i, j]:.0f}", ha="center", va="center",
                        color="white" if pct[i, j] > 50 else "black", fontsize=7)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)


def loss_figure(curves, path):
    """``curves`` maps a name to a per-epoch loss sequence."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for name, curve in curves.items():
            ax.plot(np.arange(1, len(curve) + 1), curve, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss (MSE)")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def error_rate_figure(reports, path):
    """Grouped bars of P_miss / P_fa / P_err for each named MetricsReport."""
    names = list(reports)
    values = np.array([[r.mean_p_miss, r.mean_p_fa, r.p_err] for r in reports.values()])
    x = np.arange(len(names))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2.5, 3.0))
        for k, lbl in enumerate(("P_miss", "P_fa", "P_err")):
            ax.bar(x + (k - 1) * 0.25, values[:, k], width=0.25, label=lbl)
        ax.set_xticks(x, names)
        ax.set_ylabel("error rate")
        ax.set_ylim(0, max(0.05, float(values.max()) * 1.15))
        ax.legend(frameon=False)
        return _save(fig, path)


def score_figure(records, path):
    """Per-probe score margin: true-class error minus best wrong-class error."""
    margins = {}
    for r in records:
        if r["true_label"] not in r["scores"]:
            continue
        own = r["scores"][r["true_label"]]
        others = [v for k, v in r["scores"].items() if k != r["true_label"]]
        if others:
            margins.setdefault(r["true_label"], []).append(own - min(others))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        labels = list(margins)
        ax.boxplot([margins[k] for k in labels])
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=45, ha="right")
        ax.axhline(0.0, color="grey", lw=0.8, ls="--")
        ax.set_ylabel("true minus best other error")
        return _save(fig, path)
