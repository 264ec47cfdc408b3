"""Top-k contributing channels for one prediction, with prototype evidence.

For the predicted class, each channel's contribution is its head weight
times the ReLU of its pooled activation; the k largest form the
explanation. Each selected channel carries the input's own peak location
as a normalized evidence box plus references to the channel's bank
prototypes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError
from .headmodel import (
    ClassifierHead,
    DisentanglementTransform,
    adjust_head,
    apply_transform,
    logits_of,
    pool,
    predict,
    softmax,
)
from .protobank import PrototypeBank, build_bank, prototypical_pixel
from .tensorio import Manifest


def topk_channels(
    v: np.ndarray, head_adj: ClassifierHead, pred: int, k: int
) -> list[tuple[int, float]]:
    """k largest (channel, w_pred[c] * max(v[c], 0)) pairs, ties by channel."""
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[0]
    if not 1 <= k <= d:
        raise ContractError(f"k must be in [1, {d}], got {k}")
    scores = head_adj.weights[pred] * np.maximum(v, 0.0)
    order = np.lexsort((np.arange(d), -scores))
    return [(int(c), float(scores[c])) for c in order[:k]]


def evidence_box(
    coords: tuple[int, int], feature_dims: tuple[int, int], margin: float = 0.5
) -> tuple[float, float, float, float]:
    """Normalized (x0, y0, x1, y1) box of a feature-grid cell, expanded by
    margin * cell size per side and clipped to the unit square."""
    h, w = coords
    hh, ww = feature_dims
    if not (0 <= h < hh and 0 <= w < ww):
        raise ContractError(f"coords {coords} outside grid {feature_dims}")
    if margin < 0:
        raise ContractError("margin must be >= 0")
    x0 = (w - margin) / ww
    x1 = (w + 1 + margin) / ww
    y0 = (h - margin) / hh
    y1 = (h + 1 + margin) / hh
    return (max(x0, 0.0), max(y0, 0.0), min(x1, 1.0), min(y1, 1.0))


@dataclass
class PrototypeRef:
    sample_id: str
    activation: float
    coords: tuple[int, int]
    box: tuple[float, float, float, float]
    purity: float


@dataclass
class ChannelEntry:
    channel: int
    score: float
    coords: tuple[int, int]
    box: tuple[float, float, float, float]
    prototypes: list[PrototypeRef] = field(default_factory=list)


@dataclass
class ExplanationReport:
    sample_id: str
    predicted_class: int
    logits: np.ndarray
    softmax: np.ndarray
    entries: list[ChannelEntry]
    k: int
    margin: float
    u_checksum: str
    degenerate: bool
    pre_relu_sum: float  # sum over all channels of w_pred[c] * v[c]
    residual: float  # |pre_relu_sum + bias_pred - logit_pred|


def explain(
    manifest: Manifest,
    u: DisentanglementTransform,
    sample_id: str,
    k: int,
    bank: Optional[PrototypeBank] = None,
    m: int = 5,
    margin: float = 0.5,
) -> ExplanationReport:
    """Build the full explanation for one sample.

    If no persisted bank is supplied, one is built at width m with the
    given transform. Evidence boxes use each tensor's own feature grid.
    """
    sample = manifest.sample_by_id(sample_id)
    head = ClassifierHead(manifest.head(), manifest.bias())
    head_adj = adjust_head(head, u)
    z_hat = apply_transform(u, manifest.features(sample))
    v = pool(z_hat)
    lg = logits_of(v, head_adj)
    pred = predict(lg)
    pairs = topk_channels(v, head_adj, pred, k)
    degenerate = all(score == 0.0 for _, score in pairs)
    if bank is None:
        bank = build_bank(manifest, u, m)

    grid = z_hat.shape[:2]
    entries = []
    for channel, score in pairs:
        coords, _ = prototypical_pixel(z_hat, channel)
        protos = [
            PrototypeRef(
                sample_id=r.sample_id,
                activation=r.activation,
                coords=r.pixel_coords,
                box=evidence_box(r.pixel_coords, grid, margin),
                purity=r.purity,
            )
            for r in bank.get(channel)
        ]
        entries.append(
            ChannelEntry(
                channel=channel,
                score=score,
                coords=coords,
                box=evidence_box(coords, grid, margin),
                prototypes=protos,
            )
        )

    w_pred = head_adj.weights[pred]
    pre_relu = float(w_pred @ v)
    bias_term = float(head.bias[pred]) if head.bias is not None else 0.0
    return ExplanationReport(
        sample_id=sample_id,
        predicted_class=pred,
        logits=lg,
        softmax=softmax(lg),
        entries=entries,
        k=k,
        margin=margin,
        u_checksum=u.checksum(),
        degenerate=degenerate,
        pre_relu_sum=pre_relu,
        residual=abs(pre_relu + bias_term - float(lg[pred])),
    )


# --- structured-text report, the contract with the renderer ------------------

def _fmt_box(box) -> str:
    return ",".join(repr(float(x)) for x in box)


def save_report(report: ExplanationReport, destination) -> None:
    dest = Path(destination)
    lines = [
        f"sample: {report.sample_id}",
        f"predicted-class: {report.predicted_class}",
        "logits: " + " ".join(repr(float(x)) for x in report.logits),
        "softmax: " + " ".join(repr(float(x)) for x in report.softmax),
        f"topk: {report.k}",
        f"margin: {report.margin!r}",
        f"u-checksum: {report.u_checksum}",
        f"degenerate: {'true' if report.degenerate else 'false'}",
        f"pre-relu-sum: {report.pre_relu_sum!r}",
        f"residual: {report.residual!r}",
    ]
    for e in report.entries:
        lines.append(
            f"entry: channel={e.channel} score={e.score!r} "
            f"coords={e.coords[0]},{e.coords[1]} box={_fmt_box(e.box)}"
        )
        for p in e.prototypes:
            lines.append(
                f"proto: id={p.sample_id} activation={p.activation!r} "
                f"coords={p.coords[0]},{p.coords[1]} box={_fmt_box(p.box)} "
                f"purity={p.purity!r}"
            )
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, dest)


def _parse_kv(value: str) -> dict[str, str]:
    return dict(part.split("=", 1) for part in value.split())


def load_report(source) -> ExplanationReport:
    path = Path(source)
    fields: dict[str, str] = {}
    entries: list[ChannelEntry] = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        try:
            if key == "entry":
                kv = _parse_kv(value)
                h, w = kv["coords"].split(",")
                entries.append(
                    ChannelEntry(
                        channel=int(kv["channel"]),
                        score=float(kv["score"]),
                        coords=(int(h), int(w)),
                        box=tuple(float(x) for x in kv["box"].split(",")),
                    )
                )
            elif key == "proto":
                if not entries:
                    raise FormatError(f"{path}:{lineno}: proto before entry")
                kv = _parse_kv(value)
                h, w = kv["coords"].split(",")
                entries[-1].prototypes.append(
                    PrototypeRef(
                        sample_id=kv["id"],
                        activation=float(kv["activation"]),
                        coords=(int(h), int(w)),
                        box=tuple(float(x) for x in kv["box"].split(",")),
                        purity=float(kv["purity"]),
                    )
                )
            else:
                fields[key] = value
        except (KeyError, ValueError) as e:
            raise FormatError(f"{path}:{lineno}: bad report line: {e}") from e
    try:
        return ExplanationReport(
            sample_id=fields["sample"],
            predicted_class=int(fields["predicted-class"]),
            logits=np.array([float(x) for x in fields["logits"].split()]),
            softmax=np.array([float(x) for x in fields["softmax"].split()]),
            entries=entries,
            k=int(fields["topk"]),
            margin=float(fields["margin"]),
            u_checksum=fields.get("u-checksum", ""),
            degenerate=fields.get("degenerate") == "true",
            pre_relu_sum=float(fields["pre-relu-sum"]),
            residual=float(fields["residual"]),
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: incomplete report: {e}") from e
