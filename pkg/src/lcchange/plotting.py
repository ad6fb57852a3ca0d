"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from lcchange import taxonomy  # noqa: E402
from lcchange.raster import colorize  # noqa: E402
from lcchange.scoring import CLASS_NAMES  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _hex(rgb):
    return "#%02x%02x%02x" % tuple(rgb)


def iou_bars(pooled: dict, out) -> None:
    """Grouped bars of per-class IoU for each method, mean IoU in the legend."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(7, 3))
        n = len(pooled)
        width = 0.8 / max(n, 1)
        x = np.arange(len(CLASS_NAMES))
        for k, (method, rep) in enumerate(pooled.items()):
            vals = np.nan_to_num(np.asarray(rep.iou, dtype=float))
            ax.bar(x + (k - (n - 1) / 2) * width, vals, width, label=f"{method} (mean {rep.mean_iou:.3f})")
        ax.set_xticks(x, CLASS_NAMES)
        ax.set_ylim(0, 1)
        ax.set_ylabel("IoU")
        ax.legend(frameon=False, loc="upper left", ncol=min(n, 3))
        fig.savefig(out)
        plt.close(fig)


def change_panels(image_t1, image_t2, maps: dict, out, table=None) -> None:
    """One row: both images in false colour, then each method's change map.

    Changed pixels are drawn in their gain colour with the loss colour on a
    checkerboard, so a single panel carries both halves of the pair.
    """
    table = table or taxonomy.default_taxonomy()
    pal = table.change_palette()
    panels = [("image t1", _rgb(image_t1)), ("image t2", _rgb(image_t2))]
    for name, cm in maps.items():
        loss = colorize(cm.loss, pal)
        gain = colorize(cm.gain, pal)
        yy, xx = np.indices(cm.loss.shape)
        checker = ((yy // 4 + xx // 4) % 2 == 0)[..., None]
        panels.append((name, np.where(checker, loss, gain)))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.2 * len(panels), 2.4))
        for ax, (title, img) in zip(np.atleast_1d(axes), panels):
            ax.imshow(img, interpolation="nearest")
            ax.set_title(title)
            ax.set_axis_off()
        handles = [plt.Rectangle((0, 0), 1, 1, color=_hex(pal[c])) for c in range(1, taxonomy.N_CHANGE)]
        fig.legend(handles, CLASS_NAMES, loc="lower center", ncol=8, frameon=False)
        fig.savefig(out)
        plt.close(fig)


def training_curves(logs: dict, out) -> None:
    """Per-epoch mean loss, one line per trained model."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        for k, (label, history) in enumerate(logs.items()):
            ax.plot([r["epoch"] for r in history], [r["mean_loss"] for r in history],
                    label=label, color=f"C{k % 10}", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross-entropy")
        if len(logs) <= 8:
            ax.legend(frameon=False)
        fig.savefig(out)
        plt.close(fig)


def _rgb(image) -> np.ndarray:
    a = image.data[:3].transpose(1, 2, 0).astype(np.float64)
    if image.dtype == 0:
        a = a / 255.0
    lo, hi = np.percentile(a, [1, 99])
    return np.clip((a - lo) / max(hi - lo, 1e-6), 0, 1)
