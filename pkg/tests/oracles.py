"""Independent reference implementations used by the tests."""

import numpy as np


def brute_force_counts(pl, pg, tl, tg, roi):
    """Per-pixel double loop over the eight change classes (1-4 loss, 5-8 gain)."""
    inter = [0] * 8
    union = [0] * 8
    h, w = pl.shape
    for i in range(h):
        for j in range(w):
            if not roi[i, j]:
                continue
            for c in range(1, 9):
                if c <= 4:
                    p, t = pl[i, j] == c, tl[i, j] == c
                else:
                    p, t = pg[i, j] == c, tg[i, j] == c
                inter[c - 1] += int(p and t)
                union[c - 1] += int(p or t)
    return inter, union


def pixel_change(a, b):
    """Loss/gain codes of one pixel written straight from the definition."""
    if a == b:
        return 0, 0
    return 1 + a, 5 + b


def random_change_pair(rng, shape, p_change=0.4):
    t1 = rng.integers(0, 4, shape)
    t2 = np.where(rng.uniform(size=shape) < p_change, rng.integers(0, 4, shape), t1)
    loss = np.zeros(shape, np.uint8)
    gain = np.zeros(shape, np.uint8)
    for idx in np.ndindex(shape):
        loss[idx], gain[idx] = pixel_change(int(t1[idx]), int(t2[idx]))
    return loss, gain
