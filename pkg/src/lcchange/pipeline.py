"""End-to-end baseline comparison over a set of scenes.

Methods:

``nlcd-diff``
    change between the two coarse label layers.
``fcn-tile``
    two FCNs per scene (one per epoch), each fit to that scene only.
``fcn-global``
    two FCNs (one per epoch) fit to all scenes at once.

Per-scene change maps are scored and the counts pooled over scenes, the
way a single evaluation over many tiles would.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lcchange import change, scoring
from lcchange.nn.model import ConvNet, ConvNetSpec
from lcchange.synthgen import SyntheticScene
from lcchange.training import Sample, TrainConfig, predict_tile, train

log = logging.getLogger(__name__)

METHODS = ("nlcd-diff", "fcn-tile", "fcn-global")


@dataclass
class ExperimentResult:
    change_maps: dict[str, list[change.ChangeMap]] = field(default_factory=dict)
    reports: dict[str, list[scoring.ScoreReport]] = field(default_factory=dict)
    pooled: dict[str, scoring.ScoreReport] = field(default_factory=dict)
    models: dict[str, list[ConvNet]] = field(default_factory=dict)
    logs: dict[str, list[list[dict]]] = field(default_factory=dict)

    def mean_iou(self, method: str) -> float:
        return self.pooled[method].mean_iou


def pool_reports(reports: list[scoring.ScoreReport], empty_union: str = "exclude") -> scoring.ScoreReport:
    """Sum intersection/union counts over reports and recompute the IoUs."""
    inter = np.sum([r.intersection for r in reports], axis=0)
    union = np.sum([r.union for r in reports], axis=0)
    iou, excluded = [], []
    for name, i, u in zip(scoring.CLASS_NAMES, inter, union):
        if u:
            iou.append(float(i) / float(u))
        elif empty_union == "zero":
            iou.append(0.0)
        else:
            iou.append(float("nan"))
            excluded.append(name)
    kept = [v for v in iou if v == v]
    return scoring.ScoreReport(
        tuple(int(v) for v in inter), tuple(int(v) for v in union), tuple(iou),
        float(np.mean(kept)) if kept else float("nan"), tuple(excluded),
        sum(r.masked_pixels for r in reports), sum(r.evaluated_pixels for r in reports),
    )


def _predict(args):
    net, image = args
    return predict_tile(net, image)


def predict_many(pairs: list[tuple[ConvNet, object]], jobs: int = 1):
    if jobs <= 1 or len(pairs) <= 1:
        return [_predict(p) for p in pairs]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_predict, pairs))


def training_samples(scenes: list[SyntheticScene], epoch: int, label_epoch: int | None = None) -> list[Sample]:
    """Image of ``epoch`` paired with coarse labels of ``label_epoch`` (default: the same epoch)."""
    label_epoch = label_epoch or epoch
    out = []
    for i, s in enumerate(scenes):
        image = s.image_t1 if epoch == 1 else s.image_t2
        labels = s.coarse_t1 if label_epoch == 1 else s.coarse_t2
        out.append(Sample(f"scene{i:03d}_t{epoch}", image, labels, s.roi))
    return out


def run_experiment(scenes: list[SyntheticScene], cfg: TrainConfig, spec: ConvNetSpec | None = None,
                   methods=METHODS, jobs: int = 1, label_epoch: int | None = None,
                   empty_union: str = "exclude") -> ExperimentResult:
    spec = spec or ConvNetSpec()
    res = ExperimentResult()
    truths = [change.ChangeMap(*s.truth_change()) for s in scenes]

    def record(method, maps):
        res.change_maps[method] = maps
        res.reports[method] = [scoring.score(m, t, s.roi, empty_union) for m, t, s in zip(maps, truths, scenes)]
        res.pooled[method] = pool_reports(res.reports[method], empty_union)
        log.info("%s mean IoU %.3f", method, res.pooled[method].mean_iou)

    if "nlcd-diff" in methods:
        record("nlcd-diff", [change.baseline_nlcd_diff(s.coarse_t1, s.coarse_t2) for s in scenes])

    for method in ("fcn-tile", "fcn-global"):
        if method not in methods:
            continue
        mode = "per-tile" if method == "fcn-tile" else "global"
        nets = {}
        for epoch in (1, 2):
            ecfg = cfg.replace(mode=mode, seed=cfg.seed * 2 + epoch - 1)
            out = train(training_samples(scenes, epoch, label_epoch), ecfg, spec, jobs=jobs)
            pairs = out if mode == "per-tile" else [out] * len(scenes)
            nets[epoch] = [n for n, _ in pairs]
            res.logs.setdefault(method, []).extend(h for _, h in (out if mode == "per-tile" else [out]))
        images = [s.image_t1 for s in scenes] + [s.image_t2 for s in scenes]
        probs = predict_many(list(zip(nets[1] + nets[2], images)), jobs)
        n = len(scenes)
        record(method, [change.baseline_fcn_change(probs[i], probs[n + i]) for i in range(n)])
        res.models[method] = nets[1] + nets[2] if mode == "per-tile" else [nets[1][0], nets[2][0]]
    return res
