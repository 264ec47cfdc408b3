"""Channel activations, prototype selection, and the purity measure.

A channel's activation on a sample is the sum of that channel over all
spatial positions of the transformed features. The top-m samples per
channel (by activation, descending) form its positive prototypes; ranking
by negated activation gives the negative ones. Each record carries the
prototypical pixel: the full channel vector at the spatial argmax of the
channel, whose normalized on-channel value is the purity.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError
from .headmodel import DisentanglementTransform, apply_transform
from .tensorio import Manifest

PURITY_EPS = 1e-12


def channel_activation(z: np.ndarray, k: int) -> float:
    """Sum of channel k over all spatial positions."""
    z = np.asarray(z, dtype=np.float64)
    if not 0 <= k < z.shape[2]:
        raise ContractError(f"channel {k} out of range for D={z.shape[2]}")
    return float(z[:, :, k].sum())


def prototypical_pixel(z_hat: np.ndarray, k: int) -> tuple[tuple[int, int], np.ndarray]:
    """Spatial argmax of channel k (row-major on ties) and its pixel vector."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if not 0 <= k < z_hat.shape[2]:
        raise ContractError(f"channel {k} out of range for D={z_hat.shape[2]}")
    h, w = np.unravel_index(int(np.argmax(z_hat[:, :, k])), z_hat.shape[:2])
    return (int(h), int(w)), z_hat[h, w].copy()


def purity_of_pixel(p: np.ndarray, k: int, sign: str = "positive") -> float:
    """max(p_k, 0) / max(||p||, eps); negative sign measures -p_k instead."""
    val = p[k] if sign == "positive" else -p[k]
    return float(max(val, 0.0) / max(np.linalg.norm(p), PURITY_EPS))


def purity(z_hat: np.ndarray, k: int) -> float:
    """Purity of the prototypical pixel of channel k, in [0, 1]."""
    _, p = prototypical_pixel(z_hat, k)
    return purity_of_pixel(p, k)


@dataclass
class PrototypeRecord:
    sample_id: str
    channel: int
    activation: float
    pixel_coords: tuple[int, int]
    pixel_vector: np.ndarray
    purity: float
    sign: str = "positive"


@dataclass
class PrototypeBank:
    """Per-channel, per-sign ranked prototype lists (activation descending)."""

    channels: int
    m: int
    records: dict[str, list[list[PrototypeRecord]]]  # sign -> per-channel lists
    epoch_tag: int = 0
    truncated: bool = True  # False when m exceeded the dataset size
    u_checksum: str = ""

    def get(self, k: int, sign: str = "positive") -> list[PrototypeRecord]:
        return self.records[sign][k]

    def all_records(self, sign: str = "positive") -> list[PrototypeRecord]:
        return [r for per_channel in self.records.get(sign, []) for r in per_channel]


def _rank_key(rec: PrototypeRecord):
    # negative sign ranks by -activ descending, i.e. activation ascending
    score = -rec.activation if rec.sign == "positive" else rec.activation
    return (score, rec.sample_id)


def _sample_records(
    manifest: Manifest, u: DisentanglementTransform, sample, signs: tuple[str, ...]
) -> dict[str, list[PrototypeRecord]]:
    z_hat = apply_transform(u, manifest.features(sample))
    d = z_hat.shape[2]
    activations = z_hat.sum(axis=(0, 1))
    flat = z_hat.reshape(-1, d)
    out: dict[str, list[PrototypeRecord]] = {}
    for sign in signs:
        chan_field = flat if sign == "positive" else -flat
        idx = chan_field.argmax(axis=0)  # first occurrence is row-major earliest
        recs = []
        for k in range(d):
            h, w = divmod(int(idx[k]), z_hat.shape[1])
            p = z_hat.reshape(-1, d)[idx[k]]
            recs.append(
                PrototypeRecord(
                    sample_id=sample.id,
                    channel=k,
                    activation=float(activations[k]),
                    pixel_coords=(h, w),
                    pixel_vector=p.copy(),
                    purity=purity_of_pixel(p, k, sign),
                    sign=sign,
                )
            )
        out[sign] = recs
    return out


def build_bank(
    manifest: Manifest,
    u: DisentanglementTransform,
    m: int,
    signs: tuple[str, ...] = ("positive",),
    epoch_tag: int = 0,
    workers: int = 1,
) -> PrototypeBank:
    """One streaming pass computing every channel's top-m for each sign.

    Deterministic regardless of worker count: ranking is a total order
    (activation descending, then sample id ascending) and per-channel
    candidate lists are pruned with that same order.
    """
    if m < 1:
        raise ContractError(f"m must be >= 1, got {m}")
    if not manifest.samples:
        raise ContractError("empty dataset")
    d = manifest.channels
    lists: dict[str, list[list[PrototypeRecord]]] = {s: [[] for _ in range(d)] for s in signs}

    def consume(batch: dict[str, list[PrototypeRecord]]):
        for sign, recs in batch.items():
            for rec in recs:
                bucket = lists[sign][rec.channel]
                bucket.append(rec)
                if len(bucket) > 4 * m:  # keep memory bounded per channel
                    bucket.sort(key=_rank_key)
                    del bucket[m:]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_:
            for batch in pool_.map(
                lambda s: _sample_records(manifest, u, s, signs), manifest.samples
            ):
                consume(batch)
    else:
        for sample in manifest:
            consume(_sample_records(manifest, u, sample, signs))

    truncated = m <= len(manifest.samples)
    for sign in signs:
        for k in range(d):
            lists[sign][k].sort(key=_rank_key)
            del lists[sign][k][m:]
    return PrototypeBank(
        channels=d,
        m=m,
        records=lists,
        epoch_tag=epoch_tag,
        truncated=truncated,
        u_checksum=u.checksum(),
    )


def select_prototypes(
    manifest: Manifest,
    u: DisentanglementTransform,
    k: int,
    m: int,
    sign: str = "positive",
) -> list[PrototypeRecord]:
    """Top-m prototypes of one channel; see build_bank for the ranking order."""
    if not 0 <= k < manifest.channels:
        raise ContractError(f"channel {k} out of range for D={manifest.channels}")
    bank = build_bank(manifest, u, m, signs=(sign,))
    return bank.get(k, sign)


# --- structured-text bank dump, the contract with the renderer ---------------

def save_bank(bank: PrototypeBank, destination) -> None:
    dest = Path(destination)
    lines = [
        f"channels: {bank.channels}",
        f"m: {bank.m}",
        f"epoch: {bank.epoch_tag}",
        f"u-checksum: {bank.u_checksum}",
        f"truncated: {'true' if bank.truncated else 'false'}",
    ]
    for sign in sorted(bank.records):
        for k, recs in enumerate(bank.records[sign]):
            lines.append(f"channel: {k} {sign}")
            for r in recs:
                lines.append(
                    f"record: {r.sample_id} {r.activation!r} "
                    f"{r.pixel_coords[0]},{r.pixel_coords[1]} {r.purity!r}"
                )
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, dest)


def load_bank(source) -> PrototypeBank:
    path = Path(source)
    fields: dict[str, str] = {}
    records: dict[str, list[list[PrototypeRecord]]] = {}
    current: Optional[tuple[int, str]] = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "channel":
            k_s, sign = value.split()
            current = (int(k_s), sign)
            d = int(fields["channels"])
            records.setdefault(sign, [[] for _ in range(d)])
        elif key == "record":
            if current is None:
                raise FormatError(f"{path}:{lineno}: record before channel")
            k, sign = current
            sid, act, coords, pur = value.split()
            h, w = coords.split(",")
            records[sign][k].append(
                PrototypeRecord(
                    sample_id=sid,
                    channel=k,
                    activation=float(act),
                    pixel_coords=(int(h), int(w)),
                    pixel_vector=np.zeros(0),  # pixel vectors are not persisted
                    purity=float(pur),
                    sign=sign,
                )
            )
        else:
            fields[key] = value
    try:
        return PrototypeBank(
            channels=int(fields["channels"]),
            m=int(fields["m"]),
            records=records,
            epoch_tag=int(fields.get("epoch", 0)),
            truncated=fields.get("truncated", "true") == "true",
            u_checksum=fields.get("u-checksum", ""),
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad bank file: {e}") from e
