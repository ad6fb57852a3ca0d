"""IoU scoring of loss/gain change maps, plus pixel-level diagnostics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from lcchange import taxonomy
from lcchange.change import ChangeMap, _grid
from lcchange.errors import DimensionMismatchError, EmptyEvaluationError, InvalidCodeError, OutOfRangeError

CLASS_NAMES = taxonomy.change_code_names()[1:]
LOSS_CODES = tuple(range(1, 1 + taxonomy.N_TARGET))
GAIN_CODES = tuple(range(1 + taxonomy.N_TARGET, taxonomy.N_CHANGE))


@dataclass(frozen=True)
class ScoreReport:
    intersection: tuple[int, ...]
    union: tuple[int, ...]
    iou: tuple[float, ...]  # nan where the class was excluded
    mean_iou: float
    excluded: tuple[str, ...]
    masked_pixels: int
    evaluated_pixels: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "intersection", "union", "iou"])
        for name, i, u, v in zip(CLASS_NAMES, self.intersection, self.union, self.iou):
            w.writerow([name, i, u, "" if math.isnan(v) else repr(v)])
        w.writerow(["mean", "", "", "" if math.isnan(self.mean_iou) else repr(self.mean_iou)])
        return buf.getvalue()

    def summary_line(self, label: str = "") -> str:
        """One row in the style of a baseline table: eight class IoUs then the mean."""
        cells = ["  -  " if math.isnan(v) else f"{v:.3f}" for v in self.iou]
        mean = "  -  " if math.isnan(self.mean_iou) else f"{self.mean_iou:.3f}"
        return (f"{label} " if label else "") + " ".join(cells) + f" | {mean}"

    @staticmethod
    def header_line(label_width: int = 0) -> str:
        pad = " " * (label_width + 1) if label_width else ""
        return pad + " ".join(f"{n:>5}" for n in CLASS_NAMES) + " |  avg."


def _pair(m) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, ChangeMap):
        return m.loss, m.gain
    loss, gain = m
    return _grid(loss), _grid(gain)


def _check_codes(a, allowed, what):
    bad = ~np.isin(a, (0,) + allowed)
    if bad.any():
        raise InvalidCodeError(f"{what} contains code {int(a[bad].flat[0])}")


def confusion_counts(pred, truth, roi=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Per change class intersection and union counts (int64) and the evaluated pixel count."""
    pl, pg = _pair(pred)
    tl, tg = _pair(truth)
    shape = pl.shape
    for a in (pg, tl, tg):
        if a.shape != shape:
            raise DimensionMismatchError("prediction, truth and roi must share dimensions")
    valid = np.ones(shape, dtype=bool) if roi is None else _grid(roi).astype(bool)
    if valid.shape != shape:
        raise DimensionMismatchError("prediction, truth and roi must share dimensions")
    _check_codes(pl, LOSS_CODES, "loss map")
    _check_codes(tl, LOSS_CODES, "truth loss map")
    _check_codes(pg, GAIN_CODES, "gain map")
    _check_codes(tg, GAIN_CODES, "truth gain map")
    n_eval = int(valid.sum())
    if n_eval == 0:
        raise EmptyEvaluationError("roi selects no pixels")
    inter = np.zeros(8, dtype=np.int64)
    union = np.zeros(8, dtype=np.int64)
    for j, (c, p, t) in enumerate([(c, pl, tl) for c in LOSS_CODES] + [(c, pg, tg) for c in GAIN_CODES]):
        pc = (p == c) & valid
        tc = (t == c) & valid
        inter[j] = np.count_nonzero(pc & tc)
        union[j] = np.count_nonzero(pc | tc)
    return inter, union, n_eval


def score(pred, truth, roi=None, empty_union: str = "exclude") -> ScoreReport:
    """Per-class IoU over the eight loss/gain classes and their mean.

    Only pixels with ``roi`` set are counted.  Classes whose union is empty
    are left out of the mean (``empty_union="exclude"``) or scored 0
    (``"zero"``).
    """
    if empty_union not in ("exclude", "zero"):
        raise ValueError("empty_union must be 'exclude' or 'zero'")
    inter, union, n_eval = confusion_counts(pred, truth, roi)
    iou = []
    excluded = []
    for name, i, u in zip(CLASS_NAMES, inter, union):
        if u > 0:
            iou.append(float(i) / float(u))
        elif empty_union == "zero":
            iou.append(0.0)
        else:
            iou.append(math.nan)
            excluded.append(name)
    kept = [v for v in iou if not math.isnan(v)]
    mean = float(np.mean(kept)) if kept else math.nan
    total = _pair(pred)[0].size
    return ScoreReport(tuple(int(v) for v in inter), tuple(int(v) for v in union), tuple(iou), mean,
                       tuple(excluded), total - n_eval, n_eval)


def iou_from_f1(f: float) -> float:
    if not 0.0 <= f <= 1.0:
        raise OutOfRangeError(f"F1 score must be in [0, 1], got {f}")
    return f / (2.0 - f)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else math.nan


def pixel_accuracy(pred, truth, roi=None) -> float:
    p, t = _grid(pred), _grid(truth)
    if p.shape != t.shape:
        raise DimensionMismatchError("prediction and truth must share dimensions")
    valid = np.ones(p.shape, dtype=bool) if roi is None else _grid(roi).astype(bool)
    return float((p == t)[valid].mean())


def class_boundaries(ids: np.ndarray) -> np.ndarray:
    """Pixels whose right or lower neighbour has a different id."""
    ids = np.asarray(ids)
    b = np.zeros(ids.shape, dtype=bool)
    b[:, :-1] |= ids[:, :-1] != ids[:, 1:]
    b[:-1, :] |= ids[:-1, :] != ids[1:, :]
    return b


def boundary_displacement(pred, truth) -> float:
    """Mean distance (px) from each predicted class-boundary pixel to the nearest true one."""
    pb = class_boundaries(_grid(pred))
    tb = class_boundaries(_grid(truth))
    if not pb.any():
        return 0.0 if not tb.any() else math.inf
    if not tb.any():
        return math.inf
    dist = ndimage.distance_transform_edt(~tb)
    return float(dist[pb].mean())
