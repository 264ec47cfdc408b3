"""Operator-facing command surface.

Exit codes: 0 ok, 1 validation/contract error, 2 I/O or format error,
3 training failure, 4 preservation violation. Machine-readable output
always goes to a file via --out; stdout carries a human summary.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts, explainer, protobank, synthlab, trainer
from .errors import (
    ContractError,
    FormatError,
    PreservationError,
    SingularityError,
    TrainingError,
    ValidationError,
)
from .headmodel import DisentanglementTransform, verify_preservation
from .tensorio import load_manifest

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_TRAINING = 3
EXIT_PRESERVATION = 4


def _default_workers() -> int:
    return int(os.environ.get("PROTOLENS_THREADS", "1"))


def _load_u(args, dim: int) -> DisentanglementTransform:
    if getattr(args, "u", None):
        return artifacts.load_transform(args.u)
    return DisentanglementTransform.identity(dim)


def cmd_verify(args) -> int:
    manifest = load_manifest(args.manifest)
    u = _load_u(args, manifest.channels)
    report = verify_preservation(manifest, u)
    print(report)
    return EXIT_PRESERVATION if report.argmax_mismatches > 0 else EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = trainer.TrainConfig(
        epochs=args.epochs,
        recalc_every=args.recalc_every,
        m_start=args.m_start,
        m_end=args.m_end,
        mode=args.mode,
        learning_rate=args.lr,
        momentum=args.momentum,
        free_mode_penalty=args.penalty,
        seed=args.seed,
        include_negative=args.include_negative,
        inner_iters=args.inner_iters,
    )
    u, trace = trainer.train(manifest, cfg, workers=args.threads)
    for rec in trace.epochs:
        print(f"epoch {rec.epoch:3d}  m={rec.m:4d}  mean purity {rec.mean_purity:.4f}")
    assert trace.preservation is not None
    print(trace.preservation)
    artifacts.save_transform(u, args.out)
    artifacts.save_trace(trace, Path(args.out).with_suffix(".trace.txt"))
    print(f"wrote transform to {args.out}")
    return EXIT_OK


def cmd_prototypes(args) -> int:
    manifest = load_manifest(args.manifest)
    u = _load_u(args, manifest.channels)
    sign = "negative" if args.negative else "positive"
    records = protobank.select_prototypes(manifest, u, args.channel, args.m, sign)
    if args.m > len(manifest.samples):
        print(f"warning: m={args.m} exceeds dataset size {len(manifest.samples)}; full ranking shown")
    for r in records:
        print(
            f"{r.sample_id}  activation={r.activation:.6g}  "
            f"coords={r.pixel_coords[0]},{r.pixel_coords[1]}  purity={r.purity:.4f}"
        )
    if args.out:
        bank = protobank.build_bank(manifest, u, args.m, signs=(sign,))
        protobank.save_bank(bank, args.out)
    return EXIT_OK


def cmd_explain(args) -> int:
    manifest = load_manifest(args.manifest)
    u = _load_u(args, manifest.channels)
    report = explainer.explain(
        manifest, u, args.sample, args.topk, m=args.m, margin=args.margin
    )
    print(f"sample {report.sample_id}: predicted class {report.predicted_class}")
    if report.degenerate:
        print("warning: degenerate explanation, no positive evidence")
    for e in report.entries:
        print(f"  channel {e.channel:4d}  score {e.score:.6g}")
    explainer.save_report(report, args.out)
    print(f"wrote report to {args.out}")
    return EXIT_OK


def cmd_purity(args) -> int:
    manifest = load_manifest(args.manifest)
    u = _load_u(args, manifest.channels)
    bank = protobank.build_bank(manifest, u, args.m, workers=args.threads)
    per_channel = [[r.purity for r in bank.get(k)] for k in range(bank.channels)]
    allp = np.array([p for chan in per_channel for p in chan])
    print(f"mean purity: {allp.mean():.4f}  min: {allp.min():.4f}  max: {allp.max():.4f}")
    hist, edges = np.histogram(allp, bins=10, range=(0.0, 1.0))
    for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
        print(f"  [{lo:.1f}, {hi:.1f}): {count}")
    for k, vals in enumerate(per_channel):
        v = np.array(vals)
        print(f"channel {k:4d}  mean={v.mean():.4f} min={v.min():.4f} max={v.max():.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synthlab.SynthSpec(
        num_classes=args.classes,
        channels=args.channels,
        height=args.spatial[0],
        width=args.spatial[1],
        samples_per_class=args.per_class,
        spike_strength=args.spike,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    manifest, _ = synthlab.generate(spec, args.out, workers=args.threads)
    print(f"wrote {len(manifest.samples)} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protolens",
        description="Prototype-based explanations for frozen classifiers via "
        "an invertible channel-disentangling transform.",
    )
    parser.add_argument("--threads", type=int, default=_default_workers(),
                        help="worker cap for parallel scans (env PROTOLENS_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check prediction preservation under a transform")
    p.add_argument("--manifest", required=True)
    p.add_argument("--u", help="transform EPT path (identity if omitted)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train the disentangling transform")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output transform EPT path")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--recalc-every", type=int, default=2)
    p.add_argument("--m-start", type=int, default=100)
    p.add_argument("--m-end", type=int, default=5)
    p.add_argument("--mode", choices=("orthogonal", "free"), default="orthogonal")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--penalty", type=float, default=1e-3,
                   help="free-mode distance-from-identity penalty")
    p.add_argument("--inner-iters", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-negative", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prototypes", help="rank one channel's prototypes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--u")
    p.add_argument("--channel", type=int, required=True)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--negative", action="store_true")
    p.add_argument("--out", help="optional bank dump path")
    p.set_defaults(func=cmd_prototypes)

    p = sub.add_parser("explain", help="top-k contributing channels for one sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--u")
    p.add_argument("--sample", required=True)
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("purity", help="purity statistics over the prototype bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--u")
    p.add_argument("--m", type=int, default=5)
    p.set_defaults(func=cmd_purity)

    p = sub.add_parser("synth", help="generate a planted-mixing synthetic fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--spatial", type=int, nargs=2, default=(7, 7), metavar=("H", "W"))
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--spike", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, SingularityError) as e:
        print(f"training error: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except PreservationError as e:
        print(f"preservation violation: {e}", file=sys.stderr)
        return EXIT_PRESERVATION


if __name__ == "__main__":
    sys.exit(main())
