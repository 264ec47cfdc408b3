"""Render an explanation report as an overlay image grid.

One row per explained channel: the input image with its evidence box,
followed by that channel's prototype images, each with its own box. The
renderer consumes only the report and manifest files; it never recomputes
activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, ImageDraw

CELL = 128
PAD = 6
BOX_COLOR = (255, 220, 0)
BACKGROUND = (24, 24, 24)
PLACEHOLDER = (90, 90, 90)


class ReportValidationError(ValueError):
    pass


@dataclass
class ProtoRef:
    sample_id: str
    box: tuple[float, float, float, float]


@dataclass
class Entry:
    channel: int
    score: float
    box: tuple[float, float, float, float]
    prototypes: list[ProtoRef] = field(default_factory=list)


@dataclass
class Report:
    sample_id: str
    predicted_class: int
    entries: list[Entry]


def _check_box(box, where: str) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ReportValidationError(f"{where}: box {box} outside the unit square")
    return box


def parse_report(path) -> Report:
    path = Path(path)
    fields: dict[str, str] = {}
    entries: list[Entry] = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        kv = dict(p.split("=", 1) for p in value.split()) if key in ("entry", "proto") else {}
        if key == "entry":
            box = tuple(float(x) for x in kv["box"].split(","))
            entries.append(
                Entry(int(kv["channel"]), float(kv["score"]), _check_box(box, "entry"))
            )
        elif key == "proto":
            box = tuple(float(x) for x in kv["box"].split(","))
            entries[-1].prototypes.append(ProtoRef(kv["id"], _check_box(box, "proto")))
        else:
            fields[key] = value
    return Report(fields["sample"], int(fields["predicted-class"]), entries)


def parse_manifest_images(path) -> dict[str, Path]:
    """Sample id -> source image path, for samples that have one."""
    path = Path(path)
    images: dict[str, Path] = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line.startswith("sample:"):
            continue
        parts = line.split(":", 1)[1].split()
        if len(parts) == 4:
            images[parts[0]] = path.parent / parts[3]
    return images


def _cell(image_path: Path | None, box, warnings: list[str], label: str) -> Image.Image:
    if image_path is None or not image_path.exists():
        warnings.append(f"missing source image for {label}")
        return Image.new("RGB", (CELL, CELL), PLACEHOLDER)
    img = Image.open(image_path).convert("RGB").resize((CELL, CELL), Image.BILINEAR)
    draw = ImageDraw.Draw(img)
    x0, y0, x1, y1 = box
    draw.rectangle(
        (x0 * CELL, y0 * CELL, x1 * CELL - 1, y1 * CELL - 1), outline=BOX_COLOR, width=3
    )
    return img


def render_report(report_path, manifest_path, output_dir) -> tuple[Path, list[str]]:
    """Write the k x (1 + m) overlay grid; returns (image path, warnings)."""
    report = parse_report(report_path)
    images = parse_manifest_images(manifest_path)
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []

    rows = len(report.entries)
    cols = 1 + max((len(e.prototypes) for e in report.entries), default=0)
    grid = Image.new(
        "RGB", (cols * (CELL + PAD) + PAD, rows * (CELL + PAD) + PAD), BACKGROUND
    )
    for r, entry in enumerate(report.entries):
        y = PAD + r * (CELL + PAD)
        grid.paste(
            _cell(images.get(report.sample_id), entry.box, warnings, report.sample_id),
            (PAD, y),
        )
        for c, proto in enumerate(entry.prototypes, start=1):
            grid.paste(
                _cell(images.get(proto.sample_id), proto.box, warnings, proto.sample_id),
                (PAD + c * (CELL + PAD), y),
            )
    out_path = out_dir / f"{report.sample_id}_explanation.png"
    grid.save(out_path)
    return out_path, warnings
