"""``lcchange`` command line.

Subcommands: synth, train, predict, diff, score, render, repro.  Options may
come from a ``key = value`` file given with ``--config``; command-line flags
win over the file.  The log level is read from ``LCCHANGE_LOG``.

Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from lcchange import __version__, change, raster, scoring, synthgen, taxonomy
from lcchange.errors import DataError, IoFailureError, LcChangeError, UsageError
from lcchange.nn.model import ConvNetSpec, load_checkpoint, save_checkpoint
from lcchange.synthgen import SceneConfig
from lcchange.training import Sample, TrainConfig, format_log, predict_tile, read_key_values, train

log = logging.getLogger("lcchange")

RUN_LOG = "runs.tsv"
# options that are not fields of any config dataclass
CLI_KEYS = {"seed", "jobs", "scenes", "variant", "methods", "empty_union", "window", "label_epoch"}
_SECTIONS = (SceneConfig, TrainConfig, ConvNetSpec)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# config handling ---------------------------------------------------------------

def _coerce(default, value: str, key: str):
    if isinstance(value, str) and not isinstance(default, str):
        try:
            if isinstance(default, bool):
                low = value.lower()
                if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(value)
                return low in ("1", "true", "yes", "on")
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
            if isinstance(default, tuple) or default is None:
                return tuple(float(v) if "." in v else int(v) for v in value.split(","))
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def load_config(path) -> dict[str, str]:
    if path is None:
        return {}
    try:
        raw = read_key_values(path)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    out = {}
    known = set(CLI_KEYS)
    for cls in _SECTIONS:
        known |= {f.name for f in dataclasses.fields(cls)}
    for k, v in raw.items():
        k = k.replace("-", "_")
        if k not in known:
            raise UsageError(f"{path}: unknown option {k!r}")
        out[k] = v
    return out


def _build(cls, opts: dict, **fixed):
    kw = {}
    defaults = cls()
    for f in dataclasses.fields(cls):
        if f.name in opts and f.name not in fixed:
            kw[f.name] = _coerce(getattr(defaults, f.name), opts[f.name], f.name)
    kw.update(fixed)
    return cls(**kw)


def merged_options(args, defaults: dict) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    opts = dict(defaults)
    opts.update(load_config(getattr(args, "config", None)))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "func"):
            opts[k] = v
    return opts


def _int(opts, key):
    return int(_coerce(0, opts[key], key))


# run log -----------------------------------------------------------------------

def append_run_log(directory, command, config, inputs, outputs, seed, wall) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fields = [
        f"subcommand={command}", f"config={config or '-'}",
        "inputs=" + (",".join(str(p) for p in inputs) or "-"),
        "outputs=" + (",".join(str(p) for p in outputs) or "-"),
        f"seed={seed if seed is not None else '-'}", f"version={__version__}", f"wall_seconds={wall:.3f}",
    ]
    with open(d / RUN_LOG, "a") as fh:
        fh.write("\t".join(fields) + "\n")


def _read(path, expect=None) -> raster.Raster:
    try:
        r, tag = raster.read_tile(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    if expect is not None and tag not in expect:
        raise DataError(f"{path}: unexpected scheme tag {tag}")
    return r


def _write(path, r, tag):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    raster.write_tile(path, r, tag)
    return Path(path)


# subcommands -------------------------------------------------------------------

def synth_scenes(opts: dict, out: Path) -> tuple[list[Path], Path]:
    """Generate ``scenes`` scenes with seeds ``seed, seed+1, ...`` and a manifest."""
    n = _int(opts, "scenes")
    if n < 1:
        raise UsageError("--scenes must be >= 1")
    seed = _int(opts, "seed")
    base = _build(SceneConfig, opts, seed=seed)
    make = synthgen.mixed_block_variant if opts.get("variant", "blob") == "mixed" else synthgen.generate
    out.mkdir(parents=True, exist_ok=True)
    lines, written = [], []
    for i in range(n):
        name = f"scene{i:03d}"
        paths = synthgen.write_scene(make(base.replace(seed=seed + i)), out / name)
        lines.append(synthgen.format_manifest_line(name, paths, out))
        written += paths.values()
    manifest = out / synthgen.MANIFEST
    manifest.write_text("\n".join(lines) + "\n")
    return written, manifest


def cmd_synth(args) -> tuple[list, list, int]:
    opts = merged_options(args, {"seed": 0, "scenes": 1, "variant": "blob"})
    if args.mismatch:
        opts["temporal_mismatch"] = True
    written, manifest = synth_scenes(opts, Path(args.out))
    print(manifest)
    return [], written + [manifest], _int(opts, "seed")


def _training_inputs(args, epoch: int) -> tuple[list[Sample], list[str], list[Path]]:
    if args.manifest:
        if args.image or args.labels:
            raise UsageError("give either --manifest or --image/--labels, not both")
        entries = synthgen.read_manifest(args.manifest)
        if not entries:
            raise DataError(f"{args.manifest}: no scenes")
        samples, names, inputs = [], [], []
        for name, roles in entries:
            img, lab = roles.get(f"image_t{epoch}"), roles.get(f"nlcd_t{epoch}")
            if img is None or lab is None:
                raise UsageError(f"{args.manifest}: scene {name} lacks image/labels for epoch {epoch}")
            mask = _read(roles["roi"]) if "roi" in roles else None
            samples.append(Sample(name, _read(img), _read(lab, {raster.NLCD}), mask))
            names.append(name)
            inputs += [img, lab]
        return samples, names, inputs
    if not args.image:
        raise UsageError("training needs --manifest or --image")
    if not args.labels or len(args.labels) != len(args.image):
        raise UsageError("every --image needs a matching --labels")
    samples, names = [], []
    for k, (img, lab) in enumerate(zip(args.image, args.labels)):
        samples.append(Sample(Path(img).stem, _read(img), _read(lab, {raster.NLCD})))
        names.append(f"tile{k:03d}")
    return samples, names, [Path(p) for p in args.image + args.labels]


def _spec_from(opts) -> ConvNetSpec:
    return _build(ConvNetSpec, opts)


def cmd_train(args):
    opts = merged_options(args, {"seed": 0, "jobs": 1})
    epoch = args.epoch
    samples, names, inputs = _training_inputs(args, epoch)
    cfg = _build(TrainConfig, opts, seed=_int(opts, "seed"))
    spec = _spec_from(opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(samples, cfg, spec, jobs=_int(opts, "jobs"))
    if cfg.mode == "global":
        result, names = [result], ["global"]
    written = []
    for name, (net, history) in zip(names, result):
        ckpt = out / f"{name}_t{epoch}.lcnn"
        save_checkpoint(net, ckpt)
        (out / f"{name}_t{epoch}.log.csv").write_text(format_log(history))
        written.append(ckpt)
        print(ckpt)
    return inputs, written, cfg.seed


def cmd_predict(args):
    net = load_checkpoint(args.checkpoint)
    image = _read(args.image, {raster.RAW})
    probs = predict_tile(net, image, window=args.window)
    out = _write(args.out, probs, raster.RAW)
    print(out)
    return [Path(args.checkpoint), Path(args.image)], [out], None


def cmd_diff(args):
    a = _read(args.t1)
    b = _read(args.t2)
    baseline = args.baseline
    if baseline == "auto":
        baseline = "nlcd" if a.bands == 1 else "fcn"
    if baseline == "nlcd":
        if a.bands != 1 or b.bands != 1:
            raise DataError("nlcd baseline needs single-band NLCD label rasters")
        cm = change.baseline_nlcd_diff(a, b)
    else:
        if a.bands != taxonomy.N_NLCD or b.bands != taxonomy.N_NLCD:
            raise DataError(f"fcn baseline needs {taxonomy.N_NLCD}-band probability rasters")
        cm = change.baseline_fcn_change(a, b)
    out = Path(args.out)
    loss, gain = cm.rasters()
    written = [_write(out / "loss.lcrt", loss, raster.CHANGE), _write(out / "gain.lcrt", gain, raster.CHANGE)]
    changed = int(np.count_nonzero(cm.loss))
    print(f"changed pixels: {changed} of {cm.loss.size}")
    return [Path(args.t1), Path(args.t2)], written, None


def cmd_score(args):
    pred = [_read(p, {raster.CHANGE}) for p in args.pred]
    truth = [_read(p, {raster.CHANGE}) for p in args.truth]
    roi = _read(args.roi, {raster.MASK}) if args.roi else None
    rep = scoring.score(pred, truth, roi, empty_union=args.empty_union)
    print(scoring.ScoreReport.header_line())
    print(rep.summary_line())
    print(f"mean IoU: {rep.mean_iou:.6f}")
    written = []
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(rep.to_csv())
        written.append(Path(args.out))
    inputs = [Path(p) for p in args.pred + args.truth] + ([Path(args.roi)] if args.roi else [])
    return inputs, written, None


PALETTES = {
    raster.NLCD: "nlcd", raster.TARGET: "target", raster.CHANGE: "change", raster.MASK: "mask",
}


def cmd_render(args):
    try:
        r, tag = raster.read_tile(args.input)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.input}") from None
    table = taxonomy.default_taxonomy()
    kind = args.palette if args.palette != "auto" else PALETTES.get(tag)
    if kind is None:
        raise DataError(f"{args.input}: no palette for scheme tag {tag}; pass --palette")
    palette = {
        "nlcd": table.nlcd_palette, "target": table.target_palette, "change": table.change_palette,
        "mask": lambda: {0: (0, 0, 0), 1: (255, 255, 255)},
    }[kind]()
    if r.dtype != raster.U8 or r.bands != 1:
        raise DataError("render needs a single-band class-id raster")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    raster.render_png(r, palette, args.out)
    print(args.out)
    return [Path(args.input)], [Path(args.out)], None


REPRO_DEFAULTS = {"seed": 0, "jobs": 1, "scenes": 5, "variant": "blob", "temporal_mismatch": "true",
                  "methods": ",".join(("nlcd-diff", "fcn-tile", "fcn-global")), "empty_union": "exclude"}


def cmd_repro(args):
    """synth -> train -> predict -> diff -> score, plus CSV tables and figures."""
    from lcchange import pipeline, plotting

    opts = merged_options(args, REPRO_DEFAULTS)
    seed, jobs = _int(opts, "seed"), _int(opts, "jobs")
    methods = tuple(m.strip() for m in str(opts["methods"]).split(",") if m.strip())
    bad = set(methods) - set(pipeline.METHODS)
    if bad or not methods:
        raise UsageError(f"unknown methods {sorted(bad)}; choose from {pipeline.METHODS}")
    if opts["empty_union"] not in ("exclude", "zero"):
        raise UsageError("empty_union must be 'exclude' or 'zero'")
    label_epoch = _int(opts, "label_epoch") if opts.get("label_epoch") is not None else None
    if label_epoch not in (None, 1, 2):
        raise UsageError("label_epoch must be 1 or 2")
    out = Path(args.out)
    written, manifest = synth_scenes(opts, out / "scenes")
    entries = synthgen.read_manifest(manifest)
    scenes = [_scene_from_files(roles) for _, roles in entries]
    names = [n for n, _ in entries]

    cfg = _build(TrainConfig, opts, seed=seed)
    spec = _spec_from(opts)
    res = pipeline.run_experiment(scenes, cfg, spec, methods, jobs=jobs, label_epoch=label_epoch,
                                  empty_union=opts["empty_union"])

    for method, nets in res.models.items():
        d = out / "checkpoints" / method
        d.mkdir(parents=True, exist_ok=True)
        if method == "fcn-tile":
            labels = [f"{n}_t{e}" for e in (1, 2) for n in names]
        else:
            labels = ["global_t1", "global_t2"]
        for label, net in zip(labels, nets):
            save_checkpoint(net, d / f"{label}.lcnn")
            written.append(d / f"{label}.lcnn")
        for k, history in enumerate(res.logs.get(method, [])):
            (d / f"{labels[k]}.log.csv").write_text(format_log(history))

    rows = ["method,scene,mean_iou"]
    for method in methods:
        for name, cm, rep in zip(names, res.change_maps[method], res.reports[method]):
            loss, gain = cm.rasters()
            d = out / "maps" / method
            written += [_write(d / f"{name}_loss.lcrt", loss, raster.CHANGE),
                        _write(d / f"{name}_gain.lcrt", gain, raster.CHANGE)]
            rows.append(f"{method},{name},{rep.mean_iou!r}")
        sd = out / "scores"
        sd.mkdir(parents=True, exist_ok=True)
        (sd / f"{method}.csv").write_text(res.pooled[method].to_csv())
        written.append(sd / f"{method}.csv")
    (out / "scores" / "per_scene.csv").write_text("\n".join(rows) + "\n")
    written.append(out / "scores" / "per_scene.csv")

    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    plotting.iou_bars(res.pooled, figs / "iou.png")
    s0 = scenes[0]
    maps = {"truth": change.ChangeMap(*s0.truth_change())}
    maps.update({m: res.change_maps[m][0] for m in methods})
    plotting.change_panels(s0.image_t1, s0.image_t2, maps, figs / "change_panels.png")
    curves = {f"{m} {k}": h for m, hs in res.logs.items() for k, h in enumerate(hs)}
    if curves:
        plotting.training_curves(curves, figs / "training.png")

    label_w = max(len(m) for m in methods)
    print(scoring.ScoreReport.header_line(label_w))
    for m in methods:
        print(res.pooled[m].summary_line(m.ljust(label_w)))
    return [], written, seed


def _scene_from_files(roles: dict[str, Path]) -> synthgen.SyntheticScene:
    def get(role):
        return _read(roles[role])

    return synthgen.SyntheticScene(
        truth_t1=get("truth_t1"), truth_t2=get("truth_t2"), image_t1=get("image_t1"), image_t2=get("image_t2"),
        coarse_t1=get("nlcd_t1"), coarse_t2=get("nlcd_t2"), roi=get("roi"),
    )


# parser ------------------------------------------------------------------------

def _add_common(p, seed=True, jobs=False):
    p.add_argument("--config", help="key = value option file; flags override it")
    if seed:
        p.add_argument("--seed", type=int)
    if jobs:
        p.add_argument("--jobs", type=int, help="worker processes (results do not depend on this)")


def _add_net_flags(p):
    p.add_argument("--arch", choices=("fcn", "encdec"))
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--stages", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patches-per-epoch", dest="patches_per_epoch", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)


def _fraction(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcchange", description="Weakly supervised land-cover change detection baselines.")
    parser.add_argument("--version", action="version", version=f"lcchange {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int)
    p.add_argument("--tile-size", dest="tile_size", type=int)
    p.add_argument("--blob-diameter", dest="blob_diameter", type=float)
    p.add_argument("--change-fraction", dest="change_fraction", type=_fraction)
    p.add_argument("--label-noise", dest="label_noise", type=_fraction)
    p.add_argument("--mismatch", action="store_true", help="let epoch-2 labels lag some change events")
    p.add_argument("--variant", choices=("blob", "mixed"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit per-tile or global networks for one epoch")
    _add_common(p, jobs=True)
    p.add_argument("--manifest", help="scene manifest written by synth")
    p.add_argument("--image", action="append", help="image tile (repeatable)")
    p.add_argument("--labels", action="append", help="NLCD label tile matching each --image")
    p.add_argument("--epoch", type=int, choices=(1, 2), default=1)
    p.add_argument("--mode", choices=("per-tile", "global"))
    _add_net_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="15-class probability raster for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diff", help="loss/gain maps from two NLCD or probability rasters")
    p.add_argument("--t1", required=True)
    p.add_argument("--t2", required=True)
    p.add_argument("--baseline", choices=("auto", "nlcd", "fcn"), default="auto")
    p.add_argument("--out", required=True, help="directory for loss.lcrt and gain.lcrt")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("score", help="per-class change IoU")
    p.add_argument("--pred", nargs=2, required=True, metavar=("LOSS", "GAIN"))
    p.add_argument("--truth", nargs=2, required=True, metavar=("LOSS", "GAIN"))
    p.add_argument("--roi")
    p.add_argument("--empty-union", dest="empty_union", choices=("exclude", "zero"), default="exclude")
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("render", help="class-id raster to RGB PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--palette", choices=("auto", "nlcd", "target", "change", "mask"), default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("repro", help="run the full baseline comparison")
    _add_common(p, jobs=True)
    p.add_argument("--scenes", type=int)
    p.add_argument("--tile-size", dest="tile_size", type=int)
    p.add_argument("--blob-diameter", dest="blob_diameter", type=float)
    p.add_argument("--methods", help="comma-separated subset of nlcd-diff,fcn-tile,fcn-global")
    p.add_argument("--label-epoch", dest="label_epoch", type=int, choices=(1, 2),
                   help="train both epochs' networks on this epoch's labels")
    _add_net_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_repro)
    return parser


def _setup_logging():
    level = os.environ.get("LCCHANGE_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise UsageError(f"LCCHANGE_LOG: unknown level {level!r}")
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _log_dir(args) -> Path:
    out = Path(args.out)
    return out if args.command in ("synth", "train", "repro", "diff") else out.parent


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", None) is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        t0 = time.perf_counter()
        inputs, outputs, seed = args.func(args)
        if getattr(args, "out", None):
            append_run_log(_log_dir(args), args.command, getattr(args, "config", None), inputs, outputs, seed,
                           time.perf_counter() - t0)
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"data error: {IoFailureError(e)}", file=sys.stderr)
        return 2
    except LcChangeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {e!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
