"""Command-line entry points wiring the modules into reproducible experiments.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command writes a snapshot of its resolved flags next to its outputs,
and is deterministic given flags + seed.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataio, metrics, synthgen, trainer
from .errors import (
    DegenerateAnnotation,
    DimMismatch,
    EmptyDataset,
    EmptyInput,
    EmptyMask,
    InfeasiblePlacement,
    NonFiniteLoss,
    ParseError,
    RecistSegError,
    SchemaError,
    ShapeMismatch,
    TooSmall,
    UndefinedMetric,
)
from .geometry import boundary_pixels
from .model import load_checkpoint, save_checkpoint
from .raster import build_supervision, dual_masks, ellipse_mask_from_recist, region_algebra

log = logging.getLogger("recistseg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DATA_ERRORS = (
    ParseError, SchemaError, EmptyMask, EmptyInput, EmptyDataset,
    DegenerateAnnotation, DimMismatch, ShapeMismatch, TooSmall,
    InfeasiblePlacement, UndefinedMetric,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _snapshot(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    values = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    dataio.save_config(out_dir / "config.txt", values)


def _parse_pair(text: str, cast=float) -> tuple:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got '{text}'")
    return tuple(cast(p) for p in parts)


def _parse_layout(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _train_config(args) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        lam=args.lam,
        prepare_epochs=args.prepare_epochs,
        total_epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        region_mode=args.region_mode,
        flip_augment=not args.no_flip,
        early_switch=args.early_switch,
        layout=args.layout,
        threshold=args.threshold,
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lam", type=float, default=0.4,
                   help="consistency-loss weight (default 0.4)")
    p.add_argument("--prepare-epochs", type=int, default=30)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region-mode", choices=[trainer.REGION_SLICE,
                                             trainer.REGION_AMBIGUOUS],
                   default=trainer.REGION_AMBIGUOUS)
    p.add_argument("--no-flip", action="store_true",
                   help="disable flip augmentation")
    p.add_argument("--early-switch", action="store_true",
                   help="switch to co-training once the supervised loss plateaus")
    p.add_argument("--layout", type=_parse_layout, default=(1, 8, 8, 8, 1),
                   help="channel layout, e.g. 1,8,8,1")
    p.add_argument("--threshold", type=float, default=0.5)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = synthgen.SynthSpec(
        image_size=args.image_size,
        lesions_per_slice=args.lesions,
        radius_range=args.radius_range,
        convexity=args.convexity,
        intensity_contrast=args.contrast,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    samples = synthgen.generate(spec, args.n_slices)
    out = Path(args.out)
    _snapshot(out, args)
    dataio.save_dataset(out, samples)
    print(f"wrote {len(samples)} slices to {out}")
    return EXIT_OK


def cmd_gen_labels(args) -> int:
    annotations = dataio.load_annotations(args.annotations)
    out = Path(args.out)
    _snapshot(out, args)
    if not annotations:
        log.warning("annotation file %s has no entries; nothing to do",
                    args.annotations)
        return EXIT_OK
    masks_dir = out / "masks"
    masks_dir.mkdir(exist_ok=True)
    w, h = args.width, args.height
    n_files = 0
    for slice_id, lesions in sorted(annotations.items()):
        recists = []
        for lesion_id, r in sorted(lesions):
            q, c = dual_masks(r, w, h)
            a, _ = region_algebra(q, c)
            for tag, m in (("q", q), ("c", c), ("a", a)):
                dataio.save_mask(masks_dir / f"{slice_id}_{lesion_id}_{tag}.pgm", m)
                n_files += 1
            recists.append(r)
        q_u, c_u, a_u = build_supervision(recists, w, h)
        for tag, m in (("q", q_u), ("c", c_u), ("a", a_u)):
            dataio.save_mask(masks_dir / f"{slice_id}_union_{tag}.pgm", m)
            n_files += 1
    print(f"wrote {n_files} mask files to {masks_dir}")
    return EXIT_OK


def cmd_validate_masks(args) -> int:
    samples = dataio.load_dataset(args.data)
    out = Path(args.out)
    _snapshot(out, args)
    rows = []
    for s in samples:
        if s.gt is None or not s.recists:
            continue
        h, w = s.image.shape
        q, c, _ = build_supervision(s.recists, w, h)
        ell = np.zeros_like(q)
        for r in s.recists:
            ell |= ellipse_mask_from_recist(r, w, h)
        rq, pq, rc, pc = metrics.mask_quality(q, c, s.gt)
        re_, pe = metrics.recall_precision(ell, s.gt)
        rows.append({"slice": s.slice_id,
                     "recall_q": rq, "precision_q": pq,
                     "recall_c": rc, "precision_c": pc,
                     "recall_ellipse": re_, "precision_ellipse": pe})
    if not rows:
        raise EmptyDataset("no slices with ground truth and annotations")
    agg = {key: float(np.mean([r[key] for r in rows]))
           for key in rows[0] if key != "slice"}
    agg["n_slices"] = len(rows)
    payload = {"aggregate": agg, "slices": rows}
    with open(out / "mask_quality.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(agg, indent=2, sort_keys=True))
    return EXIT_OK


def _load_train_test(train_dir, test_dir):
    train = dataio.attach_supervision(dataio.load_dataset(train_dir))
    test = dataio.load_dataset(test_dir) if test_dir else None
    return train, test


def cmd_train(args) -> int:
    out = Path(args.out)
    _snapshot(out, args)
    train_samples, val_samples = _load_train_test(args.data, args.val)
    config = _train_config(args)
    pair, history = trainer.train(train_samples, config, val_samples)
    trainer.save_history(out / "history.csv", history)
    save_checkpoint(out / "checkpoint.npz", pair)
    final = history[-1]
    with open(out / "metrics.json", "w") as f:
        json.dump(final, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"final val Dice (Q/C/ensemble): {final['val_dice_q']:.4f} "
          f"{final['val_dice_c']:.4f} {final['val_dice_ens']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out)
    _snapshot(out, args)
    pair = load_checkpoint(args.checkpoint)
    samples = dataio.load_dataset(args.data)
    preds, gts = [], []
    for s in samples:
        if s.gt is None:
            continue
        _, mask = trainer.predict(pair, s.image, args.threshold)
        preds.append(mask)
        gts.append(s.gt)
    if not preds:
        raise EmptyDataset("no slices with ground truth to evaluate")
    rows, _ = metrics.evaluate_slices(preds, gts)
    agg = metrics.write_report(rows, out / "report.json", out / "report.csv")
    print(json.dumps(agg, indent=2, sort_keys=True))
    return EXIT_OK


def _run_config_over_seeds(train_samples, test_samples, args, lam, region_mode,
                           n_seeds):
    """Train one configuration for each seed; per-seed test Dice triples."""
    results = []
    for i in range(n_seeds):
        config = trainer.TrainConfig(
            lam=lam,
            prepare_epochs=args.prepare_epochs,
            total_epochs=args.epochs,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            seed=args.seed + i,
            region_mode=region_mode,
            flip_augment=not args.no_flip,
            layout=args.layout,
            threshold=args.threshold,
        )
        pair, _ = trainer.train(train_samples, config, val_samples=[])
        results.append(trainer._val_dice(pair, test_samples, args.threshold))
    return results


def _mean_half(values):
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, float("nan")
    return mean, 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)


def cmd_ablate(args) -> int:
    out = Path(args.out)
    _snapshot(out, args)
    if args.seeds < 2:
        log.warning("confidence half-widths need at least 2 seeds (got %d)",
                    args.seeds)
    train_samples, test_samples = _load_train_test(args.train, args.test)
    configs = [
        ("no_consistency", 0.0, trainer.REGION_SLICE),
        ("whole_slice", args.lam, trainer.REGION_SLICE),
        ("ambiguous_region", args.lam, trainer.REGION_AMBIGUOUS),
    ]
    table = {}
    for name, lam, region in configs:
        triples = _run_config_over_seeds(train_samples, test_samples, args,
                                         lam, region, args.seeds)
        cells = {}
        for col, vals in zip(("dice_q", "dice_c", "dice_ens"), zip(*triples)):
            mean, half = _mean_half(vals)
            cells[col] = {"mean": mean, "halfwidth95": half}
        table[name] = cells
    with open(out / "ablation.json", "w") as f:
        json.dump(table, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "ablation.csv", "w") as f:
        f.write("config,dice_q,dice_c,dice_ens\n")
        for name, _, _ in configs:
            cells = table[name]
            f.write(name + "," + ",".join(
                f"{cells[c]['mean']:.6f}" for c in ("dice_q", "dice_c", "dice_ens")
            ) + "\n")
    print(json.dumps(table, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep_lambda(args) -> int:
    if not args.grid:
        print("sweep-lambda: --grid must list at least one value", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    _snapshot(out, args)
    train_samples, test_samples = _load_train_test(args.train, args.test)
    rows = []
    for lam in args.grid:
        region = trainer.REGION_SLICE if lam == 0.0 else args.region_mode
        triples = _run_config_over_seeds(train_samples, test_samples, args,
                                         lam, region, args.seeds)
        mean, half = _mean_half([t[2] for t in triples])
        rows.append({"lam": lam, "dice_ens": mean, "halfwidth95": half})
    with open(out / "lambda_sweep.csv", "w") as f:
        f.write("lam,dice_ens,halfwidth95\n")
        for r in rows:
            f.write(f"{r['lam']},{r['dice_ens']:.6f},{r['halfwidth95']:.6f}\n")
    spread = max(r["dice_ens"] for r in rows) - min(r["dice_ens"] for r in rows)
    print(f"ensemble Dice spread over grid: {spread:.4f}")
    return EXIT_OK


def cmd_export_overlays(args) -> int:
    from PIL import Image

    out = Path(args.out)
    _snapshot(out, args)
    overlays = out / "overlays"
    overlays.mkdir(exist_ok=True)
    pair = load_checkpoint(args.checkpoint)
    samples = dataio.load_dataset(args.data)
    n = 0
    for s in samples:
        _, pred = trainer.predict(pair, s.image, args.threshold)
        rgb = np.stack([np.round(s.image * 255)] * 3, axis=-1).astype(np.uint8)
        if s.gt is not None:
            rgb[boundary_pixels(s.gt)] = (0, 255, 0)
        rgb[boundary_pixels(pred)] = (255, 0, 0)
        Image.fromarray(rgb).save(overlays / f"{s.slice_id}.png")
        n += 1
    print(f"wrote {n} overlays to {overlays}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recistseg",
                     description="RECIST dual-mask co-training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic lesion dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-slices", type=int, default=50)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--lesions", type=lambda s: _parse_pair(s, int), default=(1, 1),
                   help="min,max lesions per slice")
    p.add_argument("--radius-range", type=_parse_pair, default=(6.0, 14.0))
    p.add_argument("--convexity", choices=["ellipse", "polygon"], default="ellipse")
    p.add_argument("--contrast", type=float, default=0.35)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-labels",
                       help="rasterize under/over/ambiguous masks from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_labels)

    p = sub.add_parser("validate-masks",
                       help="recall/precision of the dual masks against ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate_masks)

    p = sub.add_parser("train", help="co-train the subnet pair")
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate",
                       help="mean Dice table over consistency configurations")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-lambda",
                       help="ensemble Dice across consistency-weight values")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=lambda s: [float(x) for x in s.split(",") if x.strip()],
                   default=[0.4, 0.5, 0.6, 0.7])
    p.add_argument("--seeds", type=int, default=5)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("export-overlays",
                       help="write prediction/ground-truth contour images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_export_overlays)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except DATA_ERRORS as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLoss as e:
        print(f"NonFiniteLoss: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RecistSegError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
