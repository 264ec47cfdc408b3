"""Command line: export features from a checkpoint, render report overlays."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbone import UnsupportedHeadError, make_demo_checkpoint
from .export import ExportJob, export_features
from .render import ReportValidationError, render_report


def cmd_export(args) -> int:
    images = []
    for line in Path(args.images).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        path, label = line.rsplit(None, 1)
        p = Path(path)
        images.append((p.stem, p, int(label)))
    job = ExportJob(
        checkpoint=Path(args.checkpoint),
        images=images,
        out_dir=Path(args.out),
        resize=args.resize,
    )
    result = export_features(job)
    print(f"exported {result.samples} samples, self-check max logit dev {result.max_logit_dev:.3e}")
    print(f"manifest: {result.manifest_path}")
    return 0


def cmd_render(args) -> int:
    out_path, warnings = render_report(args.report, args.manifest, args.out)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out_path}")
    return 0


def cmd_make_checkpoint(args) -> int:
    make_demo_checkpoint(args.out, num_classes=args.classes, seed=args.seed)
    print(f"wrote demo checkpoint to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="featexport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export feature maps + head to EPT/manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="text file: one '<path> <label>' per line")
    p.add_argument("--out", required=True)
    p.add_argument("--resize", type=int, default=64)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("render", help="render an explanation report as an overlay grid")
    p.add_argument("--report", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("make-checkpoint", help="create a deterministic demo checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_checkpoint)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnsupportedHeadError as e:
        print(f"refused: {e}", file=sys.stderr)
        return 1
    except ReportValidationError as e:
        print(f"invalid report: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
