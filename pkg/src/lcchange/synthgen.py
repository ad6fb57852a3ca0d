"""Deterministic synthetic bitemporal scenes with coarse 30 px block labels.

A scene carries two 4-band images, their 1 px target-class truth, block-
constant NLCD labels for each epoch, and an ROI mask.  Pure-blob scenes
(:func:`generate`) give every region one target class; mixed-block scenes
(:func:`mixed_block_variant`) label blocks with NLCD classes whose pixels
follow that class's target-class mixing frequencies.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from lcchange import raster, taxonomy
from lcchange.change import diff_maps
from lcchange.errors import InfeasibleChangeFractionError, UsageError
from lcchange.raster import Raster

BLOCK = 30
CHANGE_TOLERANCE = 0.02

# mean (R, G, B, NIR) reflectance per target class
DEFAULT_COLORS = (
    (0.10, 0.16, 0.28, 0.05),  # water
    (0.12, 0.30, 0.14, 0.55),  # tree canopy
    (0.42, 0.56, 0.30, 0.62),  # low vegetation
    (0.58, 0.52, 0.52, 0.36),  # impervious
)


@dataclass(frozen=True)
class SceneConfig:
    tile_size: int = 600
    seed: int = 0
    blob_diameter: float = 100.0
    change_fraction: float = 0.40
    colors: tuple = DEFAULT_COLORS
    noise_scale: float = 0.05
    t2_gain: float | tuple = 0.85
    t2_offset: float | tuple = 0.05
    label_noise: float = 0.05
    temporal_mismatch: bool = False
    mismatch_fraction: float = 0.3
    # NLCD id standing in for each target class: Open Water, Deciduous, Pasture/Hay, Developed Medium
    representative: tuple = (0, 6, 11, 3)
    # side of the square cells that share one target draw in mixed-block scenes
    mix_cell: int = 5

    def __post_init__(self):
        if self.tile_size < BLOCK or self.tile_size % BLOCK:
            raise UsageError(f"tile size must be a positive multiple of {BLOCK}")
        if not 0.0 <= self.change_fraction <= 1.0:
            raise UsageError("change fraction must be in [0, 1]")
        for name in ("label_noise", "mismatch_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise UsageError(f"{name} must be in [0, 1]")
        if self.blob_diameter <= 0 or self.noise_scale < 0:
            raise UsageError("blob diameter must be positive and noise scale nonnegative")
        if len(self.representative) != taxonomy.N_TARGET or len(self.colors) != taxonomy.N_TARGET:
            raise UsageError("need one representative NLCD class and one color per target class")
        if BLOCK % self.mix_cell:
            raise UsageError(f"mix_cell must divide {BLOCK}")

    def min_color_distance(self) -> float:
        c = np.asarray(self.colors, dtype=np.float64)
        d = np.linalg.norm(c[:, None] - c[None], axis=-1)
        return float(d[np.triu_indices(len(c), 1)].min())

    def replace(self, **kw) -> SceneConfig:
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    truth_t1: Raster
    truth_t2: Raster
    image_t1: Raster
    image_t2: Raster
    coarse_t1: Raster
    coarse_t2: Raster
    roi: Raster
    meta: dict = field(default_factory=dict)

    ROLES = {
        "image_t1": raster.RAW, "image_t2": raster.RAW,
        "nlcd_t1": raster.NLCD, "nlcd_t2": raster.NLCD,
        "truth_t1": raster.TARGET, "truth_t2": raster.TARGET,
        "truth_loss": raster.CHANGE, "truth_gain": raster.CHANGE,
        "roi": raster.MASK,
    }

    def truth_change(self) -> tuple[np.ndarray, np.ndarray]:
        return diff_maps(self.truth_t1, self.truth_t2)

    def change_fraction(self) -> float:
        a, b = self.truth_t1.band(0), self.truth_t2.band(0)
        roi = self.roi.band(0).astype(bool)
        return float((a != b)[roi].mean())

    def role_rasters(self) -> dict[str, Raster]:
        loss, gain = self.truth_change()
        return {
            "image_t1": self.image_t1, "image_t2": self.image_t2,
            "nlcd_t1": self.coarse_t1, "nlcd_t2": self.coarse_t2,
            "truth_t1": self.truth_t1, "truth_t2": self.truth_t2,
            "truth_loss": Raster(loss), "truth_gain": Raster(gain),
            "roi": self.roi,
        }

    def __eq__(self, other):
        if not isinstance(other, SyntheticScene):
            return NotImplemented
        a, b = self.role_rasters(), other.role_rasters()
        return all(a[k] == b[k] for k in a)


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def jittered_voronoi(size: int, spacing: float, rng: np.random.Generator, cell: int = 1) -> np.ndarray:
    """Region index per ``cell x cell`` unit of a ``size x size`` grid.

    One site is dropped uniformly at random in each ``spacing``-sized grid
    cell and every unit goes to its nearest site (measured from its centre).
    """
    n = max(1, int(np.ceil(size / spacing)))
    gy, gx = np.mgrid[0:n, 0:n]
    jitter = rng.uniform(0.0, 1.0, (n, n, 2))
    sites = np.stack([(gy + jitter[..., 0]) * spacing, (gx + jitter[..., 1]) * spacing], axis=-1).reshape(-1, 2)
    m = size // cell
    centres = (np.arange(m) + 0.5) * cell
    py, px = np.meshgrid(centres, centres, indexing="ij")
    _, idx = cKDTree(sites).query(np.stack([py.ravel(), px.ravel()], axis=-1))
    return idx.reshape(m, m)


def block_majority(ids: np.ndarray, n_classes: int, block: int = BLOCK) -> np.ndarray:
    """Most frequent id per ``block x block`` cell (ties to the lowest id), one value per block."""
    h, w = ids.shape
    by, bx = h // block, w // block
    cells = ids.reshape(by, block, bx, block).transpose(0, 2, 1, 3).reshape(by, bx, -1)
    counts = (cells[..., None] == np.arange(n_classes)).sum(axis=2)
    return np.argmax(counts, axis=-1)


def upsample_blocks(blocks: np.ndarray, block: int = BLOCK) -> np.ndarray:
    return np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)


def render_image(truth: np.ndarray, cfg: SceneConfig, rng: np.random.Generator, epoch: int) -> np.ndarray:
    """4-band float image in [0, 1]; epoch 2 goes through the per-band affine shift."""
    colors = np.asarray(cfg.colors, dtype=np.float64)
    img = colors[truth] + rng.normal(0.0, cfg.noise_scale, truth.shape + (4,))
    if epoch == 2:
        gain = np.broadcast_to(np.asarray(cfg.t2_gain, dtype=np.float64), (4,))
        offset = np.broadcast_to(np.asarray(cfg.t2_offset, dtype=np.float64), (4,))
        img = img * gain + offset
    return np.clip(img, 0.0, 1.0).astype(np.float32).transpose(2, 0, 1)


def _flip_regions(region, sizes, target_pixels, tol_pixels, rng, realized_change, attempts: int = 32):
    """Greedily pick regions in random order until the realised change is within tolerance.

    ``realized_change(r)`` returns how many pixels flipping region ``r`` would
    change.  A pass that ends outside the tolerance is retried with a fresh
    order, up to ``attempts`` passes.  Returns the chosen region ids in pick
    order.
    """
    if target_pixels <= tol_pixels:
        return []
    best = 0
    for _ in range(attempts):
        chosen = []
        acc = 0
        for r in rng.permutation(len(sizes)):
            if sizes[r] == 0:
                continue
            gain = realized_change(r)
            if acc + gain > target_pixels + tol_pixels:
                continue
            acc += gain
            chosen.append(int(r))
            if acc >= target_pixels - tol_pixels:
                return chosen
        best = max(best, acc)
    raise InfeasibleChangeFractionError(
        f"could only reach {best} of {target_pixels} +- {tol_pixels} changed pixels; "
        "reduce blob_diameter or the tolerance"
    )


def _noisy_labels(blocks, rng, rate, choices):
    """Relabel each block with probability ``rate`` to a different entry of ``choices``."""
    out = blocks.copy()
    hit = rng.uniform(size=blocks.shape) < rate
    choices = np.asarray(choices)
    for idx in zip(*np.nonzero(hit)):
        others = choices[choices != blocks[idx]]
        if others.size:
            out[idx] = rng.choice(others)
    return out


def generate(cfg: SceneConfig) -> SyntheticScene:
    """Pure-blob scene: every region has one target class."""
    r_part, r_change, r_img1, r_img2, r_noise1, r_noise2, r_lag = _rngs(cfg.seed, 7)
    size = cfg.tile_size
    region = jittered_voronoi(size, cfg.blob_diameter, r_part)
    n_regions = int(region.max()) + 1
    cls1 = r_part.integers(0, taxonomy.N_TARGET, n_regions)
    sizes = np.bincount(region.ravel(), minlength=n_regions)

    total = size * size
    chosen = _flip_regions(
        region, sizes, round(cfg.change_fraction * total), int(CHANGE_TOLERANCE * total),
        r_change, lambda r: sizes[r],
    )
    cls2 = cls1.copy()
    for r in chosen:
        cls2[r] = (cls1[r] + r_change.integers(1, taxonomy.N_TARGET)) % taxonomy.N_TARGET
    truth1 = cls1[region].astype(np.uint8)
    truth2 = cls2[region].astype(np.uint8)

    # coarse labels may lag behind: some change events are missing from epoch 2
    lagged = cls2.copy()
    if cfg.temporal_mismatch and chosen:
        n_lag = int(round(cfg.mismatch_fraction * len(chosen)))
        for r in r_lag.permutation(chosen)[:n_lag]:
            lagged[r] = cls1[r]
    rep = np.asarray(cfg.representative, dtype=np.uint8)
    coarse = []
    for ids, rng in ((truth1, r_noise1), (lagged[region], r_noise2)):
        blocks = rep[block_majority(ids, taxonomy.N_TARGET)]
        blocks = _noisy_labels(blocks, rng, cfg.label_noise, rep)
        coarse.append(upsample_blocks(blocks).astype(np.uint8))

    return SyntheticScene(
        truth_t1=Raster(truth1),
        truth_t2=Raster(truth2),
        image_t1=Raster(render_image(truth1, cfg, r_img1, 1)),
        image_t2=Raster(render_image(truth2, cfg, r_img2, 2)),
        coarse_t1=Raster(coarse[0]),
        coarse_t2=Raster(coarse[1]),
        roi=Raster(np.ones((size, size), dtype=np.uint8)),
        meta={"kind": "blob", "seed": cfg.seed, "flipped_regions": len(chosen)},
    )


def mixed_block_variant(cfg: SceneConfig, mixing=None) -> SyntheticScene:
    """Scene whose blocks carry NLCD classes with mixed target-class content.

    Regions of whole blocks share an NLCD class drawn uniformly from the 15;
    every ``mix_cell`` square inside a block draws its target class from
    that NLCD class's row of ``mixing`` (default: the taxonomy frequencies).
    """
    if mixing is None:
        mixing = taxonomy.default_taxonomy().mixing
    mixing = np.asarray(mixing, dtype=np.float64)
    if mixing.shape != (taxonomy.N_NLCD, taxonomy.N_TARGET) or np.any(np.abs(mixing.sum(1) - 1) > 1e-9):
        raise UsageError("mixing must be a row-normalised 15 x 4 table")
    r_part, r_change, r_img1, r_img2, r_noise1, r_noise2, r_lag, r_draw = _rngs(cfg.seed, 8)
    size = cfg.tile_size
    nb = size // BLOCK
    cell = cfg.mix_cell
    per_block = BLOCK // cell
    region = jittered_voronoi(size, cfg.blob_diameter, r_part, cell=BLOCK)
    n_regions = int(region.max()) + 1
    nlcd1 = r_part.integers(0, taxonomy.N_NLCD, n_regions)

    cdf = np.cumsum(mixing, axis=1)
    cdf[:, -1] = 1.0

    def draw(block_classes, rng):
        u = rng.uniform(size=(nb * per_block, nb * per_block))
        cls = np.repeat(np.repeat(block_classes, per_block, 0), per_block, 1)
        cells = (u[..., None] >= cdf[cls]).sum(axis=-1)
        return np.repeat(np.repeat(cells, cell, 0), cell, 1).astype(np.uint8)

    blocks1 = nlcd1[region]
    truth1 = draw(blocks1, r_draw)

    # candidate epoch-2 content for every region, pre-drawn so the greedy pick is cheap
    nlcd_alt = (nlcd1 + r_change.integers(1, taxonomy.N_NLCD, n_regions)) % taxonomy.N_NLCD
    alt_truth = draw(nlcd_alt[region], r_draw)
    region_px = upsample_blocks(region)
    diff_px = np.bincount(region_px.ravel(), weights=(alt_truth != truth1).ravel(), minlength=n_regions)
    sizes = np.bincount(region.ravel(), minlength=n_regions)
    total = size * size
    chosen = _flip_regions(
        region, sizes, round(cfg.change_fraction * total), int(CHANGE_TOLERANCE * total),
        r_change, lambda r: int(diff_px[r]),
    )
    nlcd2 = nlcd1.copy()
    nlcd2[chosen] = nlcd_alt[chosen]
    flip_px = np.isin(region_px, chosen)
    truth2 = np.where(flip_px, alt_truth, truth1).astype(np.uint8)

    lagged = nlcd2.copy()
    if cfg.temporal_mismatch and chosen:
        n_lag = int(round(cfg.mismatch_fraction * len(chosen)))
        for r in r_lag.permutation(chosen)[:n_lag]:
            lagged[r] = nlcd1[r]
    all_nlcd = np.arange(taxonomy.N_NLCD)
    coarse1 = _noisy_labels(nlcd1[region], r_noise1, cfg.label_noise, all_nlcd)
    coarse2 = _noisy_labels(lagged[region], r_noise2, cfg.label_noise, all_nlcd)

    return SyntheticScene(
        truth_t1=Raster(truth1),
        truth_t2=Raster(truth2),
        image_t1=Raster(render_image(truth1, cfg, r_img1, 1)),
        image_t2=Raster(render_image(truth2, cfg, r_img2, 2)),
        coarse_t1=Raster(upsample_blocks(coarse1).astype(np.uint8)),
        coarse_t2=Raster(upsample_blocks(coarse2).astype(np.uint8)),
        roi=Raster(np.ones((size, size), dtype=np.uint8)),
        meta={"kind": "mixed", "seed": cfg.seed, "flipped_regions": len(chosen)},
    )


# scene files -------------------------------------------------------------------

MANIFEST = "manifest.txt"


def write_scene(scene: SyntheticScene, directory) -> dict[str, Path]:
    """Write every role as an LCRT tile; returns role -> path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, r in scene.role_rasters().items():
        p = d / f"{role}.lcrt"
        raster.write_tile(p, r, SyntheticScene.ROLES[role])
        paths[role] = p
    return paths


def format_manifest_line(name: str, paths: dict[str, Path], base) -> str:
    base = Path(base)
    parts = [name] + [f"{role}={Path(p).relative_to(base).as_posix()}" for role, p in paths.items()]
    return "\t".join(parts)


def read_manifest(path) -> list[tuple[str, dict[str, Path]]]:
    """Parse a scene manifest into ``(scene name, role -> absolute path)`` entries."""
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, *fields = line.split("\t")
        roles = {}
        for f in fields:
            role, _, rel = f.partition("=")
            roles[role] = path.parent / rel
        entries.append((name, roles))
    return entries
