"""Report figures written next to the delimited/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}
# no Software/date chunks, so reruns produce identical files
_META = {"Software": None}


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_META)
    plt.close(fig)


def plot_pr_curves(report, path: Path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        for cls, (rec, prec) in sorted(report.curves.items()):
            if len(rec):
                env = np.maximum.accumulate(prec[::-1])[::-1]
                ax.step(rec, env, where="post", label=f"class {cls} (AP {report.per_class_ap[cls]:.3f})")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision (envelope)")
        ax.set_title(f"mAP@{report.iou_thresh:g} = {report.map50:.3f}")
        if report.curves:
            ax.legend(loc="lower left", fontsize=7)
        _save(fig, path)


def plot_anchors(shapes: np.ndarray, anchors: np.ndarray, path: Path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter(shapes[:, 0], shapes[:, 1], s=6, alpha=0.4, label="boxes")
        ax.scatter(anchors[:, 0], anchors[:, 1], s=40, marker="x", color="C3", label="anchors")
        ax.set_xlabel("width (px)")
        ax.set_ylabel("height (px)")
        ax.legend(loc="upper left")
        _save(fig, path)


def plot_bench(rows: list[dict], path: Path):
    blocks = sorted({r["block"] for r in rows})
    sizes = sorted({r["size"] for r in rows})
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        width = 0.8 / max(len(blocks), 1)
        x = np.arange(len(sizes))
        for i, b in enumerate(blocks):
            fps = [next(r["fps"] for r in rows if r["block"] == b and r["size"] == s) for s in sizes]
            ax.bar(x + i * width, fps, width, label=b)
        ax.set_xticks(x + width * (len(blocks) - 1) / 2)
        ax.set_xticklabels([f"{s}x{s}" for s in sizes])
        ax.set_yscale("log")
        ax.set_ylabel("FPS")
        ax.legend(fontsize=7)
        _save(fig, path)
