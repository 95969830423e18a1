"""Command-line interface: ``semcolor gen-data | train | sample | eval``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from semcolor import colorspace, metrics
from semcolor.config import (
    FUSION_MODES,
    REFERENCE_DEFAULTS,
    REGIMES,
    ModelConfig,
    TrainConfig,
    build_configs,
    dump_config,
    parse_config_text,
)

log = logging.getLogger("semcolor")

METRICS = ("psnr", "msssim", "miou", "diversity")


class CliError(Exception):
    """A user-facing failure reported as a one-line diagnostic."""


def _annotate(name: str, default) -> str:
    ref = REFERENCE_DEFAULTS.get(name)
    return f"default {default}" + (f" (reference: {ref})" if ref is not None else "")


def _add_config_flags(parser: argparse.ArgumentParser, classes, skip=()):
    group = parser.add_argument_group("config overrides (take precedence over --config)")
    for cls in classes:
        for f in dataclasses.fields(cls):
            if f.name in skip:
                continue
            flag = "--" + f.name.replace("_", "-")
            choices = {"fusion_mode": FUSION_MODES, "regime": REGIMES}.get(f.name)
            group.add_argument(flag, dest=f"cfg_{f.name}", default=None, choices=choices,
                               metavar=None if choices else f.name.upper(),
                               help=_annotate(f.name, f.default))


def _collect_configs(args, overrides_from=None) -> tuple[ModelConfig, TrainConfig]:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text()))
    values.update(overrides_from or {})
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            values[key[4:]] = value
    try:
        return build_configs(values)
    except KeyError as exc:
        raise CliError(exc.args[0]) from exc


# --- gen-data --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from semcolor.data import ISOLUMINANT_PALETTE, SyntheticSpec, make_synthetic_corpus, write_corpus

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"{out} exists and is not empty (use --force to overwrite)")
    palette = None
    if args.isoluminant:
        if args.classes != len(ISOLUMINANT_PALETTE):
            raise CliError(f"--isoluminant needs --classes {len(ISOLUMINANT_PALETTE)}")
        palette = ISOLUMINANT_PALETTE
    spec = SyntheticSpec(num_images=args.num + args.val, size=args.size, num_classes=args.classes,
                         seed=args.seed, class_shapes=args.class_shapes, palette=palette)
    samples = make_synthetic_corpus(spec)
    ids = [s.id for s in samples]
    splits = {"train": ids[:args.num], "val": ids[args.num:]} if args.val else None
    write_corpus(samples, out, splits)
    print(f"wrote {len(samples)} image/mask pairs to {out}")
    return 0


# --- train -------------------------------------------------------------------------

def _load_split(root: Path, names, cfg: ModelConfig):
    from semcolor.data import load_corpus, prepare

    for name in names:
        if (root / name).exists():
            return prepare(load_corpus(root, cfg.input_size, cfg.num_classes, name), cfg)
    return None


def cmd_train(args) -> int:
    from semcolor.training import curves_to_csv, load_checkpoint, run_regime, save_checkpoint

    model_cfg, train_cfg = _collect_configs(args, {"regime": args.regime} if args.regime else None)
    if args.dump_config:
        sys.stdout.write(dump_config(model_cfg, train_cfg))
        return 0
    if not args.data or not args.out:
        raise CliError("train needs --data and --out (or --dump-config)")
    if train_cfg.regime == "seg_only_pretrained" and not args.init:
        raise CliError("regime seg_only_pretrained needs --init CKPT (a color_only checkpoint)")
    root = Path(args.data)
    if not (root / "list.txt").exists():
        raise CliError(f"{root} is not a corpus directory (missing list.txt)")
    train = _load_split(root, ("train.txt", "list.txt"), model_cfg)
    val = _load_split(root, ("val.txt",), model_cfg)
    init = load_checkpoint(args.init) if args.init else None
    log.info("training %s on %d images (%s validation)", train_cfg.regime, len(train),
             len(val) if val is not None else "no")
    result = run_regime(model_cfg, train_cfg, train, val, init=init, max_seconds=args.max_seconds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.trainer.state(), out)
    curves = Path(args.curves) if args.curves else out.with_suffix(".csv")
    curves.write_text(curves_to_csv(result.curves))
    print(f"checkpoint: {out}\nloss curves: {curves}")
    return 0


# --- sample ------------------------------------------------------------------------

def read_gray(path: Path, size: int) -> np.ndarray:
    """L plane of an image file, rescaled (with a warning) to ``size`` squared."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if rgb.shape[:2] != (size, size):
        log.warning("input %s is %dx%d; rescaling to %dx%d", path, rgb.shape[1], rgb.shape[0], size, size)
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB").resize((size, size), Image.BILINEAR))
    return colorspace.rgb_to_gray(rgb)


def _model_from(path: str):
    from semcolor.training import load_checkpoint, model_from_checkpoint

    return model_from_checkpoint(load_checkpoint(path))


def cmd_sample(args) -> int:
    from semcolor.generator import sample_image

    model = _model_from(args.ckpt)
    gray = read_gray(Path(args.input), model.cfg.input_size)
    if args.temperature <= 0:
        raise CliError("--temperature must be > 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labs = sample_image(model, gray, seed=args.seed, temperature=args.temperature, count=args.count)
    stem = Path(args.input).stem
    for j, lab in enumerate(labs):
        Image.fromarray(colorspace.lab_to_rgb(lab)).save(out / f"{stem}_sample{j:03d}.png")
    print(f"wrote {len(labs)} colorizations to {out}")
    return 0


# --- eval --------------------------------------------------------------------------

def parse_metrics(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRICS]
    if unknown or not names:
        raise CliError(f"unknown metric {', '.join(unknown) or '(none)'}; valid names: {', '.join(METRICS)}")
    return names


def _eval_split(name, data, model, wanted, seed, temperature, out: Path) -> list[dict]:
    import torch

    from semcolor.generator import sample_image

    rows = []
    if model is None:  # oracle: ground truth against itself
        colorized = list(data.rgb)
        pred_masks = data.mask
    else:
        colorized, pred_masks = [], None
        if {"psnr", "msssim"} & set(wanted):
            for i, gray in enumerate(data.gray):
                lab = sample_image(model, gray, seed=seed * 1_000_003 + i, temperature=temperature)[0]
                colorized.append(colorspace.lab_to_rgb(lab))
        if "miou" in wanted:
            dtype = next(model.parameters()).dtype
            with torch.no_grad():
                _, _, seg = model.condition(torch.from_numpy(data.gray_unit).to(dtype))
            pred_masks = seg.argmax(1).numpy()
    for metric in wanted:
        if metric == "psnr":
            value = float(np.mean([metrics.psnr(c, r) for c, r in zip(colorized, data.rgb)]))
        elif metric == "msssim":
            value = float(np.mean([metrics.ms_ssim(c, r) for c, r in zip(colorized, data.rgb)]))
        elif metric == "miou":
            value = metrics.mean_iou(pred_masks, data.mask, int(data.mask[data.mask != 255].max(initial=0)) + 1
                                     if model is None else model.cfg.num_classes)
        else:
            if model is None:
                value = float(np.mean([metrics.ms_ssim(r, r) for r in data.rgb]))
            else:
                report = metrics.diversity_report(model, list(data.gray), seed=seed, temperature=temperature)
                (out / f"diversity_{name}_histogram.csv").write_text(metrics.histogram_csv(report))
                (out / f"diversity_{name}_summary.txt").write_text(metrics.summary_text(report))
                value = report["summary"]["mean"]
        rows.append(dict(split=name, metric=metric, value=value, n=len(data)))
        log.info("%s %s = %.6f", name, metric, value)
    return rows


def cmd_eval(args) -> int:
    from semcolor.data import load_corpus, prepare, read_ids

    wanted = parse_metrics(args.metrics)
    if args.oracle:
        model = None
        cfg = ModelConfig(input_size=args.input_size, num_classes=256)
    else:
        if not args.ckpt:
            raise CliError("eval needs --ckpt (or --oracle)")
        model = _model_from(args.ckpt)
        cfg = model.cfg
    root = Path(args.data)
    if not (root / "list.txt").exists():
        raise CliError(f"{root} is not a corpus directory (missing list.txt)")
    splits = [s for s in args.splits.split(",") if s] if args.splits else \
        [s for s in ("train", "val") if (root / f"{s}.txt").exists()] or ["all"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for split in splits:
        list_name = "list.txt" if split == "all" else f"{split}.txt"
        if not (root / list_name).exists():
            raise CliError(f"split {split!r} not found in {root}")
        if not read_ids(root, list_name):
            raise CliError(f"split {split!r} is empty")
        data = prepare(load_corpus(root, cfg.input_size, cfg.num_classes, list_name), cfg)
        rows += _eval_split(split, data, model, wanted, args.seed, args.temperature, out)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["split", "metric", "value", "n"], lineterminator="\n")
        writer.writeheader()
        writer.writerows({**r, "value": repr(r["value"])} for r in rows)
    summary = "".join(f"{r['split']:>6} {r['metric']:>9}: {r['value']:.6f} (n={r['n']})\n" for r in rows)
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return 0


# --- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semcolor", description="Semantics-guided colorization experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic shapes corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num", type=int, default=64, help="number of (training) images, default 64")
    p.add_argument("--val", type=int, default=0, help="extra held-out images; writes train.txt/val.txt")
    p.add_argument("--size", type=int, default=32, help="canvas side in pixels, default 32 (reference input: 128)")
    p.add_argument("--classes", type=int, default=4, help="number of classes incl. background, default 4")
    p.add_argument("--seed", type=int, default=0, help="corpus seed, default 0")
    p.add_argument("--class-shapes", action="store_true", help="tie each object class to one shape kind")
    p.add_argument("--isoluminant", action="store_true", help="object colors share one lightness (4 classes)")
    p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one regime and write a checkpoint + loss CSV")
    p.add_argument("--data", help="corpus directory (train.txt/val.txt used when present)")
    p.add_argument("--out", help="checkpoint path (.npz)")
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--init", help="color_only checkpoint whose trunk seeds seg_only_pretrained")
    p.add_argument("--curves", help="loss CSV path, default: checkpoint path with .csv")
    p.add_argument("--max-seconds", type=float, default=None, help="stop after the epoch that exceeds this budget")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--regime", choices=REGIMES, default=None, help="default joint")
    _add_config_flags(p, (ModelConfig, TrainConfig), skip=("regime",))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="colorize a gray image with the Polyak-averaged model")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="gray (or color) image; rescaled if the size differs")
    p.add_argument("--count", type=int, default=1, help="number of colorizations, default 1")
    p.add_argument("--seed", type=int, default=0, help="sampling seed, default 0")
    p.add_argument("--temperature", type=float, default=1.0, help="sampling temperature, default 1.0")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="PSNR / MS-SSIM / mean-IoU / diversity report")
    p.add_argument("--ckpt", help="checkpoint path (not needed with --oracle)")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--metrics", default=",".join(METRICS), help=f"comma list from {','.join(METRICS)}")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--splits", default=None, help="comma list of splits (train,val,all); default: those present")
    p.add_argument("--seed", type=int, default=0, help="sampling seed, default 0")
    p.add_argument("--temperature", type=float, default=1.0, help="sampling temperature, default 1.0")
    p.add_argument("--oracle", action="store_true", help="score ground truth against itself (pipeline check)")
    p.add_argument("--input-size", type=int, default=32, help="image size for --oracle, default 32")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, FileNotFoundError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"semcolor {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
