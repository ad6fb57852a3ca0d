"""NLCD, target and change-code class schemes and the mappings between them."""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from lcchange.errors import DataError, DegenerateMassError, InvalidClassIdError, NotAProbabilityVectorError

log = logging.getLogger(__name__)

N_NLCD = 15
N_TARGET = 4
N_CHANGE = 9

WATER, TREE_CANOPY, LOW_VEGETATION, IMPERVIOUS = range(N_TARGET)
TARGET_KEYS = ("W", "TC", "LV", "I")
NO_CHANGE = 0

# collapse_probs falls back to the diff-override one-hot below this mass
DEGENERATE_MASS = 1e-6

# pixel counters for conditions worth reporting but not raising on
diagnostics: collections.Counter = collections.Counter()


def loss_code(target_id):
    return 1 + target_id


def gain_code(target_id):
    return 1 + N_TARGET + target_id


def change_code_names() -> list[str]:
    """Short names for codes 0-8, e.g. ``-TC`` for loss of tree canopy."""
    return ["none"] + [f"-{k}" for k in TARGET_KEYS] + [f"+{k}" for k in TARGET_KEYS]


def _hex_rgb(s: str) -> tuple[int, int, int]:
    return int(s[0:2], 16), int(s[2:4], 16), int(s[4:6], 16)


@dataclass(frozen=True)
class NlcdClass:
    id: int
    name: str
    code: int
    color: tuple[int, int, int]


@dataclass(frozen=True)
class TargetClass:
    id: int
    key: str
    name: str
    loss_color: tuple[int, int, int]
    gain_color: tuple[int, int, int]


@dataclass(frozen=True, eq=False)
class TaxonomyTable:
    """Class lists plus mapping arrays.

    ``hard_map[i]`` is the target id of NLCD class ``i`` or -1 for the three
    classes without a dominant target.  ``diff_map`` is total.  ``mixing`` is a
    ``(15, 4)`` row-stochastic matrix of target-class frequencies.
    """

    nlcd: tuple[NlcdClass, ...]
    targets: tuple[TargetClass, ...]
    hard_map: np.ndarray
    diff_map: np.ndarray
    mixing_percent: np.ndarray

    def __post_init__(self):
        if len(self.nlcd) != N_NLCD or [c.id for c in self.nlcd] != list(range(N_NLCD)):
            raise DataError("taxonomy needs exactly 15 NLCD classes with dense ids 0-14")
        if len(self.targets) != N_TARGET or [t.id for t in self.targets] != list(range(N_TARGET)):
            raise DataError("taxonomy needs exactly 4 target classes with ids 0-3")
        hard = np.asarray(self.hard_map)
        diff = np.asarray(self.diff_map)
        defined = hard >= 0
        if not np.array_equal(hard[defined], diff[defined]):
            raise DataError("diff-override map must agree with the hard map where the latter is defined")
        if diff.min() < 0 or diff.max() >= N_TARGET:
            raise DataError("diff-override map must be total over target ids")
        for a in (self.hard_map, self.diff_map, self.mixing_percent):
            a.flags.writeable = False

    @property
    def mixing(self) -> np.ndarray:
        m = self.mixing_percent.astype(np.float64)
        return m / m.sum(axis=1, keepdims=True)

    @property
    def unmapped(self) -> np.ndarray:
        return np.flatnonzero(self.hard_map < 0)

    def collapse_matrix(self) -> np.ndarray:
        """``(15, 4)`` 0/1 matrix summing NLCD probabilities into targets."""
        m = np.zeros((N_NLCD, N_TARGET))
        for i, t in enumerate(self.hard_map):
            if t >= 0:
                m[i, t] = 1.0
        return m

    def nlcd_code_alias(self) -> dict[int, int]:
        """Standard NLCD legend code -> internal id."""
        return {c.code: c.id for c in self.nlcd}

    def nlcd_palette(self) -> dict[int, tuple[int, int, int]]:
        return {c.id: c.color for c in self.nlcd}

    def target_palette(self) -> dict[int, tuple[int, int, int]]:
        return {t.id: t.gain_color for t in self.targets}

    def change_palette(self) -> dict[int, tuple[int, int, int]]:
        pal = {NO_CHANGE: (0, 0, 0)}
        for t in self.targets:
            pal[loss_code(t.id)] = t.loss_color
            pal[gain_code(t.id)] = t.gain_color
        return pal


def parse_taxonomy(text: str) -> TaxonomyTable:
    nlcd, targets, hard, diff, mix = [], [], [], [], []
    rows = [ln.split("\t") for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    target_rows = [r for r in rows if r[0] == "target"]
    keys = {r[2]: int(r[1]) for r in target_rows}
    for r in target_rows:
        targets.append(TargetClass(int(r[1]), r[2], r[3], _hex_rgb(r[4]), _hex_rgb(r[5])))
    for r in rows:
        if r[0] == "target":
            continue
        if r[0] != "nlcd" or len(r) != 11:
            raise DataError(f"malformed taxonomy row: {r}")
        nlcd.append(NlcdClass(int(r[1]), r[2], int(r[3]), _hex_rgb(r[10])))
        hard.append(-1 if r[4] == "-" else keys[r[4]])
        diff.append(keys[r[5]])
        mix.append([int(v) for v in r[6:10]])
    targets.sort(key=lambda t: t.id)
    return TaxonomyTable(
        tuple(nlcd),
        tuple(targets),
        np.array(hard, dtype=np.int64),
        np.array(diff, dtype=np.int64),
        np.array(mix, dtype=np.int64),
    )


def format_taxonomy(table: TaxonomyTable) -> str:
    keys = [t.key for t in table.targets]
    lines = []
    for c in table.nlcd:
        h = table.hard_map[c.id]
        fields = [
            "nlcd", str(c.id), c.name, str(c.code),
            "-" if h < 0 else keys[h], keys[table.diff_map[c.id]],
            *(str(int(v)) for v in table.mixing_percent[c.id]),
            "%02x%02x%02x" % c.color,
        ]
        lines.append("\t".join(fields))
    for t in table.targets:
        lines.append("\t".join(["target", str(t.id), t.key, t.name,
                                "%02x%02x%02x" % t.loss_color, "%02x%02x%02x" % t.gain_color]))
    return "\n".join(lines) + "\n"


def load_taxonomy(path=None) -> TaxonomyTable:
    if path is None:
        return default_taxonomy()
    return parse_taxonomy(Path(path).read_text())


@lru_cache(maxsize=1)
def default_taxonomy() -> TaxonomyTable:
    text = resources.files("lcchange").joinpath("data/taxonomy.tsv").read_text()
    return parse_taxonomy(text)


def _check_nlcd(labels: np.ndarray) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= N_NLCD):
        raise InvalidClassIdError("NLCD ids must be in 0-14")


def nlcd_diff_map(labels, table: TaxonomyTable | None = None) -> np.ndarray:
    """Map NLCD ids to target ids with the diff-override mapping (uint8 result)."""
    table = table or default_taxonomy()
    labels = np.asarray(labels)
    _check_nlcd(labels)
    return table.diff_map.astype(np.uint8)[labels]


def hard_target_map(labels, table: TaxonomyTable | None = None) -> np.ndarray:
    """Hard Table mapping; unmapped classes come back as -1."""
    table = table or default_taxonomy()
    labels = np.asarray(labels)
    _check_nlcd(labels)
    return table.hard_map[labels]


def collapse_probs(p, table: TaxonomyTable | None = None, axis: int = -1, strict: bool = False) -> np.ndarray:
    """Collapse 15-class NLCD probabilities into 4 target-class probabilities.

    The unmapped classes are zeroed, the rest renormalised and summed per
    target.  Where less than ``DEGENERATE_MASS`` survives the zeroing the
    output is the one-hot diff-override target of the NLCD argmax (or
    :class:`DegenerateMassError` with ``strict=True``).
    """
    table = table or default_taxonomy()
    p = np.moveaxis(np.asarray(p, dtype=np.float64), axis, -1)
    if p.shape[-1] != N_NLCD:
        raise NotAProbabilityVectorError(f"expected {N_NLCD} classes along axis {axis}, got {p.shape[-1]}")
    if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0:
        raise NotAProbabilityVectorError("probabilities must be finite and nonnegative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-5):
        raise NotAProbabilityVectorError("probability vectors must sum to 1 +- 1e-5")

    kept = p.copy()
    kept[..., table.unmapped] = 0.0
    mass = kept.sum(axis=-1, keepdims=True)
    degenerate = mass[..., 0] < DEGENERATE_MASS
    if strict and degenerate.any():
        raise DegenerateMassError(f"{int(degenerate.sum())} vectors have no mass on mapped classes")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (kept / mass) @ table.collapse_matrix()
    if degenerate.any():
        fallback = table.diff_map[np.argmax(p[degenerate], axis=-1)]
        out[degenerate] = np.eye(N_TARGET)[fallback]
        diagnostics["collapse_degenerate"] += int(degenerate.sum())
    return np.moveaxis(out, -1, axis)


def argmax_target(p, axis: int = -1, counter: collections.Counter | None = None) -> np.ndarray:
    """Index of the largest target probability, ties to the lowest id."""
    p = np.asarray(p)
    idx = np.argmax(p, axis=axis).astype(np.uint8)
    zero = np.all(p == 0, axis=axis)
    n = int(zero.sum())
    if n:
        (counter if counter is not None else diagnostics)["argmax_all_zero"] += n
        log.warning("argmax_target: %d all-zero probability vectors resolved to water", n)
    return idx
