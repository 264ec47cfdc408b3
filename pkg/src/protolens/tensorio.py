"""Binary tensor format (EPT) and the dataset manifest.

EPT layout, little-endian throughout:

    magic   4 bytes  b"EPT1"
    ndim    u32
    dims    ndim * u32
    dtype   u32      (1 = f32)
    payload prod(dims) * f32, row-major

Rank-3 feature tensors use axis order (H, W, D) with D fastest-varying.
Payloads are stored f32; everything downstream promotes to f64.

The manifest is line-oriented structured text (see docs in README):

    dataset: <name>
    classes: <N>
    channels: <D>
    head: <relative path to N x D EPT>
    bias: <relative path to length-N EPT>        # optional
    uniform-spatial: true|false                  # optional, default true
    sample: <id> <label> <feature path> [<source image path>]

Paths are relative to the manifest file. Samples are kept sorted by id.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"EPT1"
DTYPE_F32 = 1


@dataclass
class EptTensor:
    """An n-dimensional f32 tensor as stored on disk."""

    data: np.ndarray  # float32, row-major

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim not in (1, 2, 3):
            raise ValidationError(f"ndim must be 1, 2 or 3, got {self.data.ndim}")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape


def write_tensor(t: EptTensor, destination) -> None:
    """Write `t` to `destination` in the EPT layout, atomically."""
    dest = Path(destination)
    arr = t.data
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<I", DTYPE_F32)
    tmp = dest.with_name(dest.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(header)
            f.write(arr.astype("<f4", copy=False).tobytes())
        os.replace(tmp, dest)
    except OSError as e:
        raise OSError(f"failed writing tensor to {dest}: {e}") from e


def _read_header(f, path) -> tuple[int, ...]:
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    raw = f.read(4)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated ndim")
    (ndim,) = struct.unpack("<I", raw)
    if ndim not in (1, 2, 3):
        raise FormatError(f"{path}: ndim {ndim} out of range")
    raw = f.read(4 * ndim)
    if len(raw) < 4 * ndim:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{ndim}I", raw)
    raw = f.read(4)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated dtype")
    (dtype,) = struct.unpack("<I", raw)
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unknown dtype code {dtype}")
    return dims


def read_tensor(source) -> EptTensor:
    """Read an EPT file; inverse of write_tensor, bit-exact."""
    path = Path(source)
    with open(path, "rb") as f:
        dims = _read_header(f, path)
        count = int(np.prod(dims))
        raw = f.read(4 * count + 1)
        if len(raw) < 4 * count:
            raise FormatError(f"{path}: payload has {len(raw) // 4} of {count} elements")
        if len(raw) > 4 * count:
            raise FormatError(f"{path}: payload longer than declared dims")
    data = np.frombuffer(raw, dtype="<f4", count=count).reshape(dims)
    return EptTensor(data)


def read_tensor_dims(source) -> tuple[int, ...]:
    """Read only the header of an EPT file (cheap shape probe)."""
    path = Path(source)
    with open(path, "rb") as f:
        return _read_header(f, path)


@dataclass
class SampleEntry:
    id: str
    feature_path: Path
    label: int
    source_image: Optional[Path] = None


@dataclass
class Manifest:
    dataset_name: str
    num_classes: int
    channels: int
    head_path: Path
    bias_path: Optional[Path]
    samples: list[SampleEntry]
    uniform_spatial: bool = True
    root: Path = field(default_factory=Path)

    def head(self) -> np.ndarray:
        """Head weights as f64, shape (N, D)."""
        return read_tensor(self.head_path).data.astype(np.float64)

    def bias(self) -> Optional[np.ndarray]:
        if self.bias_path is None:
            return None
        return read_tensor(self.bias_path).data.astype(np.float64)

    def features(self, sample: SampleEntry) -> np.ndarray:
        """One sample's feature tensor as f64, shape (H, W, D)."""
        return read_tensor(sample.feature_path).data.astype(np.float64)

    def sample_by_id(self, sample_id: str) -> SampleEntry:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise ValidationError(f"unknown sample id {sample_id!r}")

    def __iter__(self) -> Iterator[SampleEntry]:
        return iter(self.samples)


def _parse_lines(path: Path) -> tuple[dict, list[list[str]]]:
    fields: dict[str, str] = {}
    samples: list[list[str]] = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key: value'")
        key, value = line.split(":", 1)
        key, value = key.strip(), value.strip()
        if key == "sample":
            parts = value.split()
            if len(parts) not in (3, 4):
                raise FormatError(f"{path}:{lineno}: sample needs 3 or 4 fields")
            samples.append(parts)
        elif key in fields:
            raise FormatError(f"{path}:{lineno}: duplicate field {key!r}")
        else:
            fields[key] = value
    return fields, samples


def load_manifest(source) -> Manifest:
    """Parse and fully validate a manifest file.

    Every violation is collected; the error message lists all of them.
    Feature files are probed header-only (dims, not payload).
    """
    path = Path(source)
    if not path.exists():
        raise OSError(f"manifest not found: {path}")
    root = path.parent
    fields, raw_samples = _parse_lines(path)

    for required in ("dataset", "classes", "channels", "head"):
        if required not in fields:
            raise FormatError(f"{path}: missing field {required!r}")
    try:
        n = int(fields["classes"])
        d = int(fields["channels"])
    except ValueError as e:
        raise FormatError(f"{path}: classes/channels must be integers: {e}") from e
    uniform = fields.get("uniform-spatial", "true").lower() != "false"

    problems: list[str] = []
    if n < 1:
        problems.append("classes must be >= 1")
    if d < 1:
        problems.append("channels must be >= 1")

    head_path = root / fields["head"]
    bias_path = root / fields["bias"] if "bias" in fields else None
    try:
        head_dims = read_tensor_dims(head_path)
        if len(head_dims) != 2:
            problems.append(f"head must be rank-2, got rank {len(head_dims)}")
        else:
            if head_dims[0] != n:
                problems.append(f"head has {head_dims[0]} rows, expected classes {n}")
            if head_dims[1] != d:
                problems.append(f"channel mismatch: head has {head_dims[1]} columns, expected {d}")
    except (FormatError, OSError) as e:
        problems.append(f"head unreadable: {e}")
    if bias_path is not None:
        try:
            bias_dims = read_tensor_dims(bias_path)
            if bias_dims != (n,):
                problems.append(f"bias dims {bias_dims}, expected ({n},)")
        except (FormatError, OSError) as e:
            problems.append(f"bias unreadable: {e}")

    entries: list[SampleEntry] = []
    seen: set[str] = set()
    spatial: Optional[tuple[int, int]] = None
    for parts in raw_samples:
        sid, label_s, feat = parts[0], parts[1], parts[2]
        image = root / parts[3] if len(parts) == 4 else None
        if sid in seen:
            problems.append(f"duplicate id {sid!r}")
        seen.add(sid)
        try:
            label = int(label_s)
        except ValueError:
            problems.append(f"sample {sid!r}: label {label_s!r} not an integer")
            label = 0
        if not 0 <= label < n:
            problems.append(f"sample {sid!r}: label out of range ({label} not in [0, {n}))")
        feat_path = root / feat
        try:
            dims = read_tensor_dims(feat_path)
            if len(dims) != 3:
                problems.append(f"sample {sid!r}: feature rank {len(dims)}, expected 3")
            else:
                if dims[2] != d:
                    problems.append(f"sample {sid!r}: channel mismatch ({dims[2]} != {d})")
                if uniform:
                    if spatial is None:
                        spatial = dims[:2]
                    elif dims[:2] != spatial:
                        problems.append(
                            f"sample {sid!r}: spatial dims {dims[:2]} != {spatial} "
                            "(set 'uniform-spatial: false' to allow)"
                        )
        except (FormatError, OSError) as e:
            problems.append(f"sample {sid!r}: feature unreadable: {e}")
        entries.append(SampleEntry(sid, feat_path, label, image))

    if problems:
        raise ValidationError(f"{path}: " + "; ".join(problems))

    entries.sort(key=lambda s: s.id)
    return Manifest(
        dataset_name=fields["dataset"],
        num_classes=n,
        channels=d,
        head_path=head_path,
        bias_path=bias_path,
        samples=entries,
        uniform_spatial=uniform,
        root=root,
    )


def save_manifest(m: Manifest, destination) -> None:
    """Write a manifest in canonical field order, samples sorted by id."""
    dest = Path(destination)
    root = dest.parent

    def rel(p: Path) -> str:
        return os.path.relpath(p, root)

    lines = [
        f"dataset: {m.dataset_name}",
        f"classes: {m.num_classes}",
        f"channels: {m.channels}",
        f"head: {rel(m.head_path)}",
    ]
    if m.bias_path is not None:
        lines.append(f"bias: {rel(m.bias_path)}")
    if not m.uniform_spatial:
        lines.append("uniform-spatial: false")
    for s in sorted(m.samples, key=lambda s: s.id):
        line = f"sample: {s.id} {s.label} {rel(s.feature_path)}"
        if s.source_image is not None:
            line += f" {rel(s.source_image)}"
        lines.append(line)
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, dest)
