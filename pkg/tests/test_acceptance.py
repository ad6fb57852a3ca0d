"""Acceptance criteria, one test each.

Every test prints a ``criterion N: PASS|FAIL`` line (collected again in the
terminal summary by conftest).  Run standalone with
``python3 tests/test_acceptance.py`` to see only those lines.
"""

import math
import time

import numpy as np
import pytest
from oracles import brute_force_counts, random_change_pair

from lcchange import cli, raster, taxonomy
from lcchange.change import diff_maps, probs_to_target
from lcchange.nn.gradcheck import grad_check
from lcchange.nn.model import ConvNetSpec, param_count
from lcchange.scoring import boundary_displacement, f1_from_counts, iou_from_f1, pixel_accuracy, score
from lcchange.synthgen import SceneConfig, generate, mixed_block_variant
from lcchange.training import Sample, TrainConfig, fit, predict_tile

RESULTS = []


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_01_parameter_count():
    n = param_count(ConvNetSpec())
    assert report(1, n == 151_055, f"FCN parameters = {n} (expected 151055)")


def test_02_gradients():
    t0 = time.perf_counter()
    fcn = grad_check(ConvNetSpec(depth=2, width=3), trials=2, seed=1)
    enc = grad_check(ConvNetSpec(arch="encdec", width=3, stages=1), trials=2, seed=1)
    wall = time.perf_counter() - t0
    ok = fcn < 1e-6 and enc < 1e-6 and wall < 60
    assert report(2, ok, f"max rel. error fcn {fcn:.2e}, encdec {enc:.2e} (< 1e-6), {wall:.1f}s")


def test_03_scorer_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    count_mismatch = 0
    worst_identity = 0.0
    for _ in range(1000):
        pl, pg = random_change_pair(rng, (32, 32))
        tl, tg = random_change_pair(rng, (32, 32))
        roi = rng.uniform(size=(32, 32)) < 0.9
        inter, union = brute_force_counts(pl, pg, tl, tg, roi)
        rep = score((pl, pg), (tl, tg), roi)
        count_mismatch += list(rep.intersection) != inter or list(rep.union) != union
        for c in range(8):
            if union[c]:
                tp = inter[c]
                fp_fn = union[c] - inter[c]
                # F1 from tp and fp + fn; the split between fp and fn does not enter F1
                f = f1_from_counts(tp, fp_fn, 0)
                worst_identity = max(worst_identity, abs(iou_from_f1(f) - rep.iou[c]))
    wall = time.perf_counter() - t0
    ok = count_mismatch == 0 and worst_identity <= 1e-12 and wall < 60
    assert report(3, ok, f"{count_mismatch} count mismatches in 1000 pairs, "
                         f"max |IoU - f/(2-f)| = {worst_identity:.1e}, {wall:.1f}s")


def test_04_taxonomy_collapse():
    table = taxonomy.default_taxonomy()
    out = taxonomy.collapse_probs(np.full(15, 1 / 15))
    expected = np.array([1, 6, 3, 2]) / 12
    err_uniform = float(np.max(np.abs(out - expected)))
    p = np.random.default_rng(4).dirichlet(np.ones(15), size=10_000)
    err_sum = float(np.max(np.abs(taxonomy.collapse_probs(p).sum(axis=1) - 1)))
    fired = []
    for cid in (5, 1, 2):  # barren, developed open space, developed low
        taxonomy.diagnostics.clear()
        res = taxonomy.collapse_probs(np.eye(15)[cid])
        fired.append(taxonomy.diagnostics["collapse_degenerate"] == 1
                     and np.array_equal(res, np.eye(4)[table.diff_map[cid]]))
    ok = err_uniform <= 1e-12 and err_sum <= 1e-6 and all(fired)
    assert report(4, ok, f"uniform error {err_uniform:.1e}, max |sum-1| {err_sum:.1e}, "
                         f"fallback fired on barren/dev-open/dev-low: {fired}")


def test_05_pairing_invariant():
    rng = np.random.default_rng(5)
    bad_pairing = bad_identity = 0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 33, 2))
        a = rng.integers(0, 4, shape)
        b = np.where(rng.uniform(size=shape) < 0.5, rng.integers(0, 4, shape), a)
        loss, gain = diff_maps(a, b)
        bad_pairing += not np.array_equal(loss != 0, gain != 0)
        ll, gg = diff_maps(a, a)
        bad_identity += bool(ll.any() or gg.any())
    ok = bad_pairing == 0 and bad_identity == 0
    assert report(5, ok, f"pairing violations {bad_pairing}, non-zero self-diffs {bad_identity} (1000 pairs)")


def _pooled_means(out):
    means = {}
    for m in ("nlcd-diff", "fcn-tile", "fcn-global"):
        rows = (out / "scores" / f"{m}.csv").read_text().splitlines()
        means[m] = float(rows[-1].split(",")[-1])
    return means


@pytest.mark.slow
def test_06_end_to_end_ordering(tmp_path):
    t0 = time.perf_counter()
    # five 600x600 scenes, default settings with the temporal-mismatch flag on
    assert cli.main(["repro", "--seed", "0", "--scenes", "5", "--out", str(tmp_path)]) == 0
    wall = time.perf_counter() - t0
    m = _pooled_means(tmp_path)
    g, t, n = m["fcn-global"], m["fcn-tile"], m["nlcd-diff"]
    ok = g - t >= 0.03 and t - n >= 0.03 and g >= 0.60 and wall <= 900
    assert report(6, ok, f"mean IoU global {g:.3f} / per-tile {t:.3f} / nlcd-diff {n:.3f} "
                         f"(gaps {g - t:+.3f}, {t - n:+.3f}; need >= 0.03 each, global >= 0.60), {wall:.0f}s")


@pytest.mark.slow
def test_07_label_super_resolution():
    t0 = time.perf_counter()
    wins, rows = 0, []
    for seed in range(5):
        s = mixed_block_variant(SceneConfig(seed=seed))
        net, _ = fit([Sample("t1", s.image_t1, s.coarse_t1)], TrainConfig(seed=seed), ConvNetSpec())
        pred = probs_to_target(predict_tile(net, s.image_t1))
        acc_fcn = pixel_accuracy(pred, s.truth_t1)
        acc_coarse = pixel_accuracy(taxonomy.nlcd_diff_map(s.coarse_t1.band(0)), s.truth_t1)
        wins += acc_fcn > acc_coarse
        rows.append(f"{acc_fcn:.3f}>{acc_coarse:.3f}" if acc_fcn > acc_coarse else f"{acc_fcn:.3f}<={acc_coarse:.3f}")
    wall = time.perf_counter() - t0
    ok = wins >= 4 and wall <= 900
    assert report(7, ok, f"FCN beats coarse labels on {wins}/5 seeds [{', '.join(rows)}], {wall:.0f}s")


@pytest.mark.slow
def test_08_receptive_field_blur():
    t0 = time.perf_counter()
    # three stages give the encoder-decoder a window wider than two coarse blocks
    specs = {"fcn": (ConvNetSpec(), 60), "encdec": (ConvNetSpec(arch="encdec", stages=3), 64)}
    wins, rows = 0, []
    for seed in range(5):
        s = generate(SceneConfig(seed=seed))
        d = {}
        for name, (spec, patch) in specs.items():
            net, _ = fit([Sample("t1", s.image_t1, s.coarse_t1)], TrainConfig(seed=seed, patch_size=patch), spec)
            d[name] = boundary_displacement(probs_to_target(predict_tile(net, s.image_t1)), s.truth_t1)
        wins += d["encdec"] > d["fcn"]
        rows.append(f"{d['encdec']:.2f} vs {d['fcn']:.2f}")
    wall = time.perf_counter() - t0
    ok = wins >= 4 and wall <= 600
    assert report(8, ok, f"encdec displacement exceeds fcn on {wins}/5 seeds "
                         f"[{', '.join(rows)}] px, {wall:.0f}s")


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.suffix in (".lcnn", ".lcrt", ".csv") and not p.name.endswith(".log.csv")}


@pytest.mark.slow
def test_09_jobs_determinism(tmp_path):
    cfg = tmp_path / "repro.cfg"
    cfg.write_text("scenes = 3\ntile_size = 300\nwidth = 16\nepochs = 4\npatches_per_epoch = 20\n")
    t0 = time.perf_counter()
    for jobs in (1, 4):
        assert cli.main(["repro", "--seed", "7", "--jobs", str(jobs), "--config", str(cfg),
                         "--out", str(tmp_path / f"j{jobs}")]) == 0
    wall = time.perf_counter() - t0
    a, b = _tree(tmp_path / "j1"), _tree(tmp_path / "j4")
    kinds = {k: sum(p.endswith(k) for p in a) for k in (".lcnn", ".lcrt", ".csv")}
    differ = sorted(k for k in a if a[k] != b.get(k)) + sorted(set(b) - set(a))
    ok = not differ and all(kinds.values()) and wall <= 900
    assert report(9, ok, f"{len(a)} files ({kinds}) identical for --jobs 1 and 4: {not differ}, {wall:.0f}s")


def test_10_format_round_trip():
    rng = np.random.default_rng(10)
    failures = 0
    for _ in range(1000):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 17)), int(rng.integers(1, 17)))
        if rng.uniform() < 0.5:
            # any 32-bit pattern, NaN payloads and infinities included
            data = rng.integers(0, 2**32, shape, dtype=np.uint32).view(np.float32)
            tag = raster.RAW
        else:
            tag = int(rng.integers(0, 5))
            hi = raster.SCHEME_ID_LIMIT.get(tag, 256)
            data = rng.integers(0, hi, shape).astype(np.uint8)
        r = raster.Raster(data)
        back, back_tag = raster.decode_tile(raster.encode_tile(r, tag))
        failures += not (back.data.tobytes() == data.tobytes() and back.shape == data.shape
                         and back.dtype == r.dtype and back_tag == tag)
    assert report(10, failures == 0, f"{failures} of 1000 random rasters failed the bit-exact round trip")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
