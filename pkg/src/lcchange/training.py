"""Patch sampling, per-tile / global training, and full-tile inference."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lcchange import taxonomy
from lcchange.errors import DataError, PatchLargerThanTileError, ShapeMismatchError, UsageError
from lcchange.nn import ops
from lcchange.nn.model import ConvNet, ConvNetSpec, adam_step, forward_nhwc, init_net, loss_and_grad_nhwc, sgd_step
from lcchange.raster import U8, Raster

log = logging.getLogger(__name__)

MODES = ("per-tile", "global")


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 60
    patches_per_epoch: int = 40
    epochs: int = 10
    batch_size: int = 4
    lr: float = 0.001
    momentum: float = 0.9
    lr_decay: float = 0.1
    # fraction of the epochs after which the learning rate is decayed
    decay_at: float = 2 / 3
    seed: int = 0
    mode: str = "global"
    optimizer: str = "adam"

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("patch_size", "patches_per_epoch", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise UsageError("optimizer must be 'sgd' or 'adam'")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise UsageError("lr must be >= 0 and momentum in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        decay_epoch = int(np.ceil(self.decay_at * self.epochs))
        return self.lr * (self.lr_decay if epoch >= decay_epoch else 1.0)

    @classmethod
    def from_mapping(cls, m: dict) -> TrainConfig:
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in m.items():
            k = k.replace("-", "_")
            if k not in fields:
                raise UsageError(f"unknown training option {k!r}")
            default = getattr(cls(), k)
            kw[k] = type(default)(v) if not isinstance(v, type(default)) else v
        return cls(**kw)

    def replace(self, **kw) -> TrainConfig:
        return dataclasses.replace(self, **kw)


def read_key_values(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_key_values(path, m: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in m.items()))


@dataclass(frozen=True, eq=False)
class Sample:
    tile_id: str
    image: Raster
    labels: Raster
    mask: Raster | None = None

    def __post_init__(self):
        if (self.labels.height, self.labels.width) != (self.image.height, self.image.width):
            raise ShapeMismatchError(f"{self.tile_id}: image and labels differ in size")
        if self.mask is not None and (self.mask.height, self.mask.width) != (self.image.height, self.image.width):
            raise ShapeMismatchError(f"{self.tile_id}: mask differs in size")
        if self.labels.dtype != U8 or self.labels.bands != 1:
            raise DataError(f"{self.tile_id}: labels must be a single-band u8 raster")
        if int(self.labels.data.max()) >= taxonomy.N_NLCD:
            raise DataError(f"{self.tile_id}: label ids must be NLCD ids 0-14")


def labels_block_constant(labels: np.ndarray, block: int = 30) -> bool:
    """True when every origin-aligned ``block x block`` cell holds one value."""
    h, w = labels.shape
    ref = labels[::block, ::block]
    up = np.repeat(np.repeat(ref, block, 0), block, 1)[:h, :w]
    return bool(np.array_equal(up, labels))


def normalized_image(image: Raster) -> np.ndarray:
    """``(H, W, C)`` float32 in [0, 1]; u8 imagery is divided by 255."""
    a = image.data
    if image.dtype == U8:
        a = a.astype(np.float32) / 255.0
    return np.ascontiguousarray(a.transpose(1, 2, 0), dtype=np.float32)


def _eligible(sample: Sample, p: int) -> int:
    return max(0, sample.image.height - p + 1) * max(0, sample.image.width - p + 1)


def sample_patches(samples: list[Sample], cfg: TrainConfig, epoch: int, tile: int | None = None,
                   stream: int = 0):
    """Yield ``(x, y, mask)`` batches for one epoch.

    ``x`` is ``(batch, channels, p, p)`` in [0, 1]; ``y`` and ``mask`` are
    ``(batch, p, p)``.  With ``tile`` set only that sample is drawn from;
    otherwise tiles are chosen in proportion to their number of patch origins,
    which makes every (tile, origin) pair equally likely.  Patches never cross
    a tile edge.  The sequence depends only on ``(cfg.seed, stream, epoch)``.
    """
    if not samples:
        raise DataError("empty sample set")
    p = cfg.patch_size
    pool = [tile] if tile is not None else list(range(len(samples)))
    for i in pool:
        s = samples[i]
        if p > s.image.height or p > s.image.width:
            raise PatchLargerThanTileError(f"patch {p} larger than tile {s.tile_id} ({s.image.width}x{s.image.height})")
    weights = np.array([_eligible(samples[i], p) for i in pool], dtype=np.float64)
    weights /= weights.sum()
    rng = np.random.default_rng([cfg.seed, stream, epoch])
    images = {}
    remaining = cfg.patches_per_epoch
    while remaining > 0:
        b = min(cfg.batch_size, remaining)
        remaining -= b
        which = rng.choice(len(pool), size=b, p=weights) if len(pool) > 1 else np.zeros(b, dtype=int)
        xs, ys, ms = [], [], []
        for j in which:
            s = samples[pool[j]]
            oy = int(rng.integers(0, s.image.height - p + 1))
            ox = int(rng.integers(0, s.image.width - p + 1))
            if pool[j] not in images:
                images[pool[j]] = normalized_image(s.image)
            xs.append(images[pool[j]][oy:oy + p, ox:ox + p])
            ys.append(s.labels.band(0)[oy:oy + p, ox:ox + p])
            if s.mask is None:
                ms.append(np.ones((p, p), dtype=bool))
            else:
                ms.append(s.mask.band(0)[oy:oy + p, ox:ox + p].astype(bool))
        x = np.stack(xs).transpose(0, 3, 1, 2)
        yield np.ascontiguousarray(x), np.stack(ys).astype(np.int64), np.stack(ms)


def _tile_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def fit(samples: list[Sample], cfg: TrainConfig, spec: ConvNetSpec, tile: int | None = None,
        init_seed: int | None = None, stream: int = 0) -> tuple[ConvNet, list[dict]]:
    """Train one network; returns it with a per-epoch log."""
    if spec.classes != taxonomy.N_NLCD:
        raise UsageError(f"networks must predict {taxonomy.N_NLCD} NLCD classes")
    if cfg.patch_size % spec.downsample:
        raise UsageError(f"patch size {cfg.patch_size} must be a multiple of {spec.downsample} for this network")
    net = init_net(spec, seed=cfg.seed if init_seed is None else init_seed)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        losses, weights = [], []
        for x, y, m in sample_patches(samples, cfg, epoch, tile=tile, stream=stream):
            xn = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
            if not m.any():
                continue
            loss, grads = loss_and_grad_nhwc(net, xn, y, m)
            if cfg.optimizer == "adam":
                net = adam_step(net, grads, lr, beta1=cfg.momentum)
            else:
                net = sgd_step(net, grads, lr, cfg.momentum)
            losses.append(loss)
            weights.append(len(x))
        mean = float(np.average(losses, weights=weights)) if losses else float("nan")
        history.append({"epoch": epoch, "mean_loss": mean, "lr": lr, "wall_seconds": time.perf_counter() - t0})
        log.info("epoch %d  loss %.4f  lr %g", epoch, mean, lr)
    net.velocity = None
    return net, history


def train(samples: list[Sample], cfg: TrainConfig, spec: ConvNetSpec, jobs: int = 1):
    """Global mode: one ``(net, log)``.  Per-tile mode: a list with one per sample.

    Per-tile models are seeded from ``(cfg.seed, tile index)``, so the result
    does not depend on ``jobs``.
    """
    if cfg.mode == "global":
        return fit(samples, cfg, spec)
    tasks = [([s], cfg, spec, i) for i, s in enumerate(samples)]
    if jobs <= 1 or len(tasks) == 1:
        return [_fit_single(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_fit_single, tasks))


def _fit_single(args):
    samples, cfg, spec, i = args
    return fit(samples, cfg, spec, tile=0, init_seed=_tile_seed(cfg.seed, i), stream=i + 1)


def format_log(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["epoch", "mean_loss", "lr", "wall_seconds"], lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({"epoch": row["epoch"], "mean_loss": f"{row['mean_loss']:.6f}", "lr": f"{row['lr']:g}",
                    "wall_seconds": f"{row['wall_seconds']:.3f}"})
    return buf.getvalue()


def default_margin(spec: ConvNetSpec) -> int:
    if spec.arch == "fcn":
        return spec.receptive_field() // 2
    return 2 * spec.downsample * (spec.kernel // 2 + 1) * 2


def predict_tile(net: ConvNet, image: Raster, window: int = 200, margin: int | None = None) -> Raster:
    """Per-pixel softmax over the 15 NLCD classes as a 15-band f32 raster.

    The tile is cut into ``window``-sized cores, each evaluated with
    ``margin`` pixels of context and cropped back to its core, so every pixel
    is predicted exactly once.  For the FCN a margin of at least half its
    receptive field reproduces whole-tile evaluation.
    """
    spec = net.spec
    if image.bands != spec.in_channels:
        raise ShapeMismatchError(f"image has {image.bands} bands, network expects {spec.in_channels}")
    if margin is None:
        margin = default_margin(spec)
    x = normalized_image(image)
    h, w = x.shape[:2]
    d = spec.downsample
    out = np.empty((spec.classes, h, w), dtype=np.float32)
    for r0 in range(0, h, window):
        r1 = min(h, r0 + window)
        for c0 in range(0, w, window):
            c1 = min(w, c0 + window)
            y0, y1 = max(0, r0 - margin), min(h, r1 + margin)
            x0, x1 = max(0, c0 - margin), min(w, c1 + margin)
            win = x[y0:y1, x0:x1]
            ph, pw = (-win.shape[0]) % d, (-win.shape[1]) % d
            if ph or pw:
                win = np.pad(win, ((0, ph), (0, pw), (0, 0)))
            logits = forward_nhwc(net, win[None])[0]
            prob = ops.softmax(logits)
            out[:, r0:r1, c0:c1] = prob[r0 - y0:r1 - y0, c0 - x0:c1 - x0].transpose(2, 0, 1)
    return Raster(out)
