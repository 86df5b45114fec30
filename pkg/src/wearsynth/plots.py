"""Report figures.  Every figure is written as ``<stem>.png`` next to a data
sidecar (``<stem>.csv`` or ``<stem>.json``) holding the plotted numbers."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ingest import CHANNELS  # noqa: E402
from .quality import CorrelationReport, PcaResult, distribution_histogram  # noqa: E402

REAL_COLOR, SYNTH_COLOR = "#1f77b4", "#d62728"
LABEL_NAMES = {0: "non-stress", 1: "stress"}


def _save(fig, stem, header=None, rows=None, data=None) -> list[Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    png = stem.with_suffix(".png")
    fig.savefig(png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    if data is not None:
        side = stem.with_suffix(".json")
        side.write_text(json.dumps(data, indent=2, sort_keys=True))
    else:
        side = stem.with_suffix(".csv")
        with open(side, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    return [png, side]


def _scatter_rows(points, origin, labels):
    return [[f"{x:.6g}", f"{y:.6g}", o, int(lab)] for (x, y), o, lab in zip(points, origin, labels)]


def projection_overlay(real_pts, synth_pts, real_labels, synth_labels, stem, title="PCA",
                       axis_names=("PC1", "PC2")) -> list[Path]:
    """Real and synthetic points in one 2-D projection, marker by label."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    for pts, labels, color, name in ((real_pts, real_labels, REAL_COLOR, "real"),
                                     (synth_pts, synth_labels, SYNTH_COLOR, "synthetic")):
        for y, marker in ((0, "o"), (1, "^")):
            sel = np.asarray(labels) == y
            if sel.any():
                ax.scatter(pts[sel, 0], pts[sel, 1], s=8, alpha=0.5, c=color, marker=marker,
                           label=f"{name} {LABEL_NAMES[y]}")
    ax.set_xlabel(axis_names[0])
    ax.set_ylabel(axis_names[1])
    ax.set_title(title)
    ax.legend(fontsize=7, markerscale=1.5)
    rows = (_scatter_rows(real_pts, ["real"] * len(real_pts), real_labels)
            + _scatter_rows(synth_pts, ["synthetic"] * len(synth_pts), synth_labels))
    return _save(fig, stem, ["x", "y", "origin", "label"], rows)


def pca_overlay(pca: PcaResult, real_labels, synth_labels, stem) -> list[Path]:
    ev = pca.explained_variance_ratio
    return projection_overlay(pca.real_points, pca.synth_points, real_labels, synth_labels, stem,
                              "PCA (fit on real)", (f"PC1 ({ev[0]:.1%})", f"PC2 ({ev[1]:.1%})"))


def correlation_heatmap(report: CorrelationReport, stem, title="Pearson correlation") -> list[Path]:
    """r in the upper triangle and diagonal, p-values in the lower triangle."""
    k = len(report.columns)
    shown = np.where(np.triu(np.ones((k, k), bool)), report.r, np.nan)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(shown, cmap="coolwarm", vmin=-1, vmax=1)
    for i in range(k):
        for j in range(k):
            if i <= j:
                v, fmt = report.r[i, j], "{:.2f}"
            else:
                v, fmt = report.p[i, j], "p={:.2g}"
            ax.text(j, i, "n/a" if not np.isfinite(v) else fmt.format(v), ha="center", va="center",
                    fontsize=6)
    ax.set_xticks(range(k), report.columns, rotation=45, ha="right")
    ax.set_yticks(range(k), report.columns)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, stem, data=report.to_dict())


def signal_histograms(real, synth, stem, bins: int = 50) -> list[Path]:
    """Per-signal value densities, real vs synthetic, split by label."""
    fig, axes = plt.subplots(2, len(CHANNELS), figsize=(3 * len(CHANNELS), 5), sharex=True)
    rows = []
    for y in (0, 1):
        for j, name in enumerate(CHANNELS):
            ax = axes[y, j]
            for ws, color, origin in ((real, REAL_COLOR, "real"), (synth, SYNTH_COLOR, "synthetic")):
                if ws is None:
                    continue
                dens, edges = distribution_histogram(ws.windows[ws.labels == y][:, :, j], bins)
                if dens.size:
                    ax.stairs(dens, edges, color=color, label=origin)
                    rows += [[name, y, origin, f"{lo:.4f}", f"{d:.6g}"] for lo, d in zip(edges[:-1], dens)]
            ax.set_title(f"{name} {LABEL_NAMES[y]}", fontsize=8)
    axes[0, 0].legend(fontsize=7)
    return _save(fig, stem, ["signal", "label", "origin", "bin_start", "density"], rows)


def baseline_bars(rows: list[dict], stem, top: int = 63) -> list[Path]:
    """F1 per signal combination, best first."""
    ranked = sorted(rows, key=lambda r: -r["f1"])[:top]
    names = ["+".join(r["combo"]) for r in ranked]
    fig, ax = plt.subplots(figsize=(6, max(3, 0.18 * len(ranked))))
    ax.barh(range(len(ranked)), [r["f1"] for r in ranked], color=REAL_COLOR)
    ax.set_yticks(range(len(ranked)), names, fontsize=6)
    ax.invert_yaxis()
    ax.set_xlabel("LOSO F1 (%)")
    ax.set_xlim(0, 100)
    return _save(fig, stem, ["combo", "f1", "accuracy"],
                 [[n, f"{r['f1']:.4f}", f"{r['accuracy']:.4f}"] for n, r in zip(names, ranked)])


def coefficient_bars(coefficients: dict, stem) -> list[Path]:
    names = list(coefficients)
    vals = [coefficients[n] for n in names]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(names, vals, color=[SYNTH_COLOR if v > 0 else REAL_COLOR for v in vals])
    ax.axhline(0, color="k", lw=0.6)
    ax.set_ylabel("coefficient (standardised power)")
    ax.tick_params(axis="x", rotation=45)
    return _save(fig, stem, ["signal", "coefficient"], [[n, f"{v:.6g}"] for n, v in zip(names, vals)])


def power_change_bars(change: dict, stem) -> list[Path]:
    """Percentage change of spectral power between stress and non-stress."""
    per = change["per_signal"]
    names = list(per)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(names, [per[n] for n in names],
           color=[SYNTH_COLOR if change["higher_under_stress"][n] else REAL_COLOR for n in names])
    ax.set_ylabel("change (%)")
    ax.set_title(f"overall {change['overall']:.1f}%")
    ax.tick_params(axis="x", rotation=45)
    rows = [[n, f"{per[n]:.6g}", change["higher_under_stress"][n]] for n in names]
    rows.append(["overall", f"{change['overall']:.6g}", ""])
    return _save(fig, stem, ["signal", "percent_change", "higher_under_stress"], rows)


def subject_signals(windows, labels, stem, title="") -> list[Path]:
    """Consecutive windows of one subject laid end to end, stress shaded."""
    x = np.asarray(windows).reshape(-1, len(CHANNELS))
    lab = np.repeat(np.asarray(labels), np.asarray(windows).shape[1])
    t = np.arange(len(x))
    fig, axes = plt.subplots(len(CHANNELS), 1, figsize=(9, 8), sharex=True)
    for j, (ax, name) in enumerate(zip(axes, CHANNELS)):
        ax.plot(t, x[:, j], lw=0.6, color=REAL_COLOR)
        ax.fill_between(t, 0, 1, where=lab == 1, color=SYNTH_COLOR, alpha=0.15, step="mid")
        ax.set_ylabel(name, fontsize=7)
        ax.set_ylim(0, 1)
    axes[-1].set_xlabel("second")
    axes[0].set_title(title)
    rows = [[int(i), int(lab[i]), *(f"{v:.6g}" for v in x[i])] for i in t]
    return _save(fig, stem, ["second", "label", *CHANNELS], rows)


def loso_per_subject(report, stem) -> list[Path]:
    means = report.per_subject_mean()
    subjects = list(means)
    f1 = [means[s]["f1"] for s in subjects]
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.bar([str(s) for s in subjects], f1, color=REAL_COLOR)
    ax.axhline(report.grand_f1, color=SYNTH_COLOR, ls="--", label=f"mean {report.grand_f1:.2f}")
    ax.set_ylim(0, 100)
    ax.set_xlabel("held-out subject")
    ax.set_ylabel("F1 (%)")
    ax.legend(fontsize=7)
    rows = [[s, f"{means[s]['f1']:.4f}", f"{means[s]['accuracy']:.4f}", means[s]["failed_repeats"]]
            for s in subjects]
    return _save(fig, stem, ["subject", "f1", "accuracy", "failed_repeats"], rows)
