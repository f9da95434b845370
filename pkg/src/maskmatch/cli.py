"""Command-line entry point.

Subcommands: gen-synthetic, train, match, eval, inspect-pack.
Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluation, synthetic, training
from .errors import MaskMatchError, UsageError
from .packio import read_pack_file

SPARK_CHARS = "▁▂▃▄▅▆▇█"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="maskmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="generate a synthetic dataset", parents=[])
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--packs", type=int, default=100)
    gen.add_argument("--objects", type=int, default=8)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--noise", type=float, default=0.5)
    gen.add_argument("--distractor-parts", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0, help="world seed, shared across splits")
    gen.add_argument("--split", type=int, default=0, help="varies scenes but not the world")
    gen.add_argument("--grid", default="24x24", help="feature grid as HxW")
    gen.add_argument("--view-transform", choices=("random", "identity"), default="random")
    gen.add_argument("--invisible-frac", type=float, default=0.0)

    tr = sub.add_parser("train", help="train a matching model")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--config", default=None, help="TOML or JSON config file")
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None, help="overrides train.seed and mining.seed")
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")

    ma = sub.add_parser("match", help="match one pack against a checkpoint")
    ma.add_argument("--pack", required=True)
    ma.add_argument("--ckpt", required=True)
    ma.add_argument("--threshold", type=float, default=None)
    ma.add_argument("--emit-overlay", default=None, metavar="OUT.PGM")

    ev = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--ckpt", required=True)
    group = ev.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float, default=None)
    group.add_argument("--sweep-threshold", action="store_true")
    ev.add_argument("--config", default=None)
    ev.add_argument("--report", required=True, help="output JSON path")
    ev.add_argument("--plot", choices=("ascii",), default=None)

    ins = sub.add_parser("inspect-pack", help="print a pack's header fields")
    ins.add_argument("pack")
    return parser


def _sparkline(values, width=60) -> str:
    values = [v for v in values if v is not None]
    if not values:
        return "(no data)"
    if len(values) > width:
        # average into width buckets
        edges = np.linspace(0, len(values), width + 1).astype(int)
        values = [float(np.mean(values[a:b])) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    lo, hi = min(values), max(values)
    if hi == lo:
        return "▄" * len(values)
    span = hi - lo
    return "".join(SPARK_CHARS[int((v - lo) / span * (len(SPARK_CHARS) - 1))] for v in values)


def _cmd_gen_synthetic(args) -> int:
    if args.seed < 0:
        raise UsageError("--seed must be non-negative")
    try:
        grid_h, grid_w = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects HxW, got {args.grid!r}")
    dcfg = synthetic.DatasetConfig(
        objects=args.objects,
        dim=args.dim,
        noise=args.noise,
        distractor_parts=args.distractor_parts,
        source_grid=(grid_h, grid_w),
        dest_grid=(grid_h, grid_w),
        view_transform=args.view_transform,
        invisible_frac=args.invisible_frac,
    )
    manifest, records = synthetic.generate_dataset(args.out, args.packs, dcfg, args.seed, args.split)
    cfgmod.echo_resolved(
        {
            "gen": {
                "packs": args.packs,
                "objects": args.objects,
                "dim": args.dim,
                "noise": args.noise,
                "distractor_parts": args.distractor_parts,
                "grid": args.grid,
                "seed": args.seed,
                "split": args.split,
                "view_transform": args.view_transform,
                "invisible_frac": args.invisible_frac,
            }
        },
        args.out,
    )
    visible = sum(1 for r in records if r.visible)
    print(f"wrote {args.packs} packs to {args.out} ({visible} visible), manifest {manifest}")
    return 0


def _cmd_train(args) -> int:
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        overrides["train.seed"] = args.seed
        overrides["mining.seed"] = args.seed
    resolved = cfgmod.resolve_config(args.config, overrides)
    tcfg = cfgmod.to_train_config(resolved)
    cfgmod.echo_resolved(resolved, args.out)
    result = training.train(args.manifest, tcfg, args.out, resume_from=args.resume)
    last = result.metrics[-1] if result.metrics else (0, float("nan"), 0.0)
    print(
        f"trained {tcfg.steps} steps, final loss {last[1]:.4f}, "
        f"skipped {result.skipped}, checkpoint {result.checkpoint_path}"
    )
    return 0


def _cmd_match(args) -> int:
    pack = read_pack_file(args.pack)
    threshold = args.threshold
    if threshold is None:
        threshold = float(cfgmod.DEFAULTS["eval"]["vis_threshold"])
    result = evaluation.match(pack, args.ckpt, vis_threshold=threshold)
    if result.similarity is None:
        print("no usable candidates; visible=False")
    else:
        chosen = result.chosen_index if result.chosen_index is not None else "-"
        print(f"chosen={chosen} similarity={result.similarity:.6f} visible={result.visible_pred}")
        print("ranked: " + " ".join(f"{i}:{s:.4f}" for i, s in result.ranked))
    if args.emit_overlay:
        evaluation.write_pgm(args.emit_overlay, evaluation.render_overlay(pack, result))
        print(f"overlay written to {args.emit_overlay}")
    return 0


def _cmd_eval(args) -> int:
    resolved = cfgmod.resolve_config(args.config, {})
    threshold = args.threshold
    if threshold is None:
        threshold = float(resolved["eval"]["vis_threshold"])
    sweep = list(np.round(np.arange(0.0, 1.0001, 0.05), 4)) if args.sweep_threshold else None
    report = evaluation.evaluate(
        args.manifest,
        args.ckpt,
        vis_threshold=threshold,
        contour_tol=float(resolved["eval"]["contour_tol"]),
        sweep=sweep,
    )
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    cfgmod.echo_resolved(resolved, report_path.parent)
    agg = report.aggregates
    def fmt(v):
        return "-" if v is None else f"{v:.4f}"
    print(
        f"samples={report.counts['samples']} iou={fmt(agg['iou'])} vis_a={fmt(agg['vis_a'])} "
        f"loc_e={fmt(agg['loc_e'])} cont_a={fmt(agg['cont_a'])} top1={fmt(agg['top1'])}"
    )
    if sweep is not None:
        for row in report.threshold_sweep:
            print(f"  threshold {row['threshold']:.2f}: vis_a {fmt(row['vis_a'])}")
    if args.plot == "ascii":
        ious = [s.get("iou") for s in report.samples]
        print("iou  " + _sparkline(ious))
        metrics_csv = Path(args.ckpt).parent / "metrics.csv"
        if metrics_csv.exists():
            losses = [float(line.split(",")[1]) for line in metrics_csv.read_text().splitlines()[1:]]
            print("loss " + _sparkline(losses))
    print(f"report written to {args.report}")
    return 0


def _cmd_inspect_pack(args) -> int:
    pack = read_pack_file(args.pack)
    hs, ws, d = pack.source_features.shape
    hd, wd, _ = pack.dest_features.shape
    print(f"direction: {pack.direction}")
    print(f"feature dim: {d}")
    print(f"source grid: {hs}x{ws} (mask {pack.source_mask.height}x{pack.source_mask.width})")
    if pack.candidates:
        c0 = pack.candidates[0]
        print(f"dest grid: {hd}x{wd} (mask {c0.height}x{c0.width})")
    else:
        print(f"dest grid: {hd}x{wd}")
    print(f"candidates: {len(pack.candidates)}")
    print(f"visible: {pack.visible}")
    print(f"gt_index: {pack.gt_index if pack.gt_index is not None else '-'}")
    return 0


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "train": _cmd_train,
    "match": _cmd_match,
    "eval": _cmd_eval,
    "inspect-pack": _cmd_inspect_pack,
}


def dispatch(argv) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MaskMatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse --help
        code = e.code if isinstance(e.code, int) else 0
        return code
    except Exception:
        traceback.print_exc()
        return 3


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
