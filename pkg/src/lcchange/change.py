"""Bitemporal land-cover maps to loss/gain change codes, and the two map-level baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lcchange import taxonomy
from lcchange.errors import DimensionMismatchError, InvalidClassIdError
from lcchange.raster import Raster


def _grid(a) -> np.ndarray:
    if isinstance(a, Raster):
        if a.bands != 1:
            raise DimensionMismatchError("expected a single-band raster")
        return a.band(0)
    return np.asarray(a)


@dataclass(frozen=True, eq=False)
class ChangeMap:
    """Aligned loss and gain code grids (0 = no change, 1-4 loss, 5-8 gain)."""

    loss: np.ndarray
    gain: np.ndarray
    mask: np.ndarray | None = None

    def rasters(self) -> tuple[Raster, Raster]:
        return Raster(self.loss), Raster(self.gain)

    def __eq__(self, other):
        return (
            isinstance(other, ChangeMap)
            and np.array_equal(self.loss, other.loss)
            and np.array_equal(self.gain, other.gain)
        )


def diff_maps(map_t1, map_t2) -> tuple[np.ndarray, np.ndarray]:
    """Loss and gain code grids for two target-id maps.

    Pixels with ``c1 != c2`` become loss of ``c1`` and gain of ``c2``; equal
    pixels are 0 in both outputs.
    """
    a = _grid(map_t1)
    b = _grid(map_t2)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"map shapes differ: {a.shape} vs {b.shape}")
    for m in (a, b):
        if m.size and (m.min() < 0 or m.max() >= taxonomy.N_TARGET):
            raise InvalidClassIdError("target ids must be in 0-3")
    a = a.astype(np.uint8)
    b = b.astype(np.uint8)
    changed = a != b
    loss = np.where(changed, taxonomy.loss_code(a), 0).astype(np.uint8)
    gain = np.where(changed, taxonomy.gain_code(b), 0).astype(np.uint8)
    return loss, gain


def baseline_nlcd_diff(nlcd_t1, nlcd_t2, table=None) -> ChangeMap:
    """Change from the two coarse label layers alone."""
    a = _grid(nlcd_t1)
    b = _grid(nlcd_t2)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"label shapes differ: {a.shape} vs {b.shape}")
    loss, gain = diff_maps(taxonomy.nlcd_diff_map(a, table), taxonomy.nlcd_diff_map(b, table))
    return ChangeMap(loss, gain)


def probs_to_target(p, table=None) -> np.ndarray:
    """``(15, H, W)`` NLCD probabilities -> ``(H, W)`` target ids."""
    if isinstance(p, Raster):
        p = p.data
    return taxonomy.argmax_target(taxonomy.collapse_probs(p, table, axis=0), axis=0)


def baseline_fcn_change(p_t1, p_t2, table=None) -> ChangeMap:
    """Change from two per-pixel 15-class probability rasters."""
    m1 = probs_to_target(p_t1, table)
    m2 = probs_to_target(p_t2, table)
    if m1.shape != m2.shape:
        raise DimensionMismatchError(f"probability raster shapes differ: {m1.shape} vs {m2.shape}")
    return ChangeMap(*diff_maps(m1, m2))
