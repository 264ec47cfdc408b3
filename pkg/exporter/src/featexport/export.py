"""Export per-image pre-pooling feature maps and head weights to EPT files.

The manifest records the full preprocessing (resize and normalization
constants) as provenance comments, and every export ends with a self-check
comparing the framework's own logits against logits recomputed from the
written files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import load_checkpoint, validate_topology
from .ept import read_ept, write_ept

DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


@dataclass
class ExportJob:
    checkpoint: Path
    images: list[tuple[str, Path, int]]  # (sample id, image path, label)
    out_dir: Path
    resize: int = 64
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD


@dataclass
class ExportResult:
    manifest_path: Path
    max_logit_dev: float
    samples: int
    warnings: list[str] = field(default_factory=list)


def preprocess(path: Path, resize: int, mean, std) -> torch.Tensor:
    img = Image.open(path).convert("RGB").resize((resize, resize), Image.BILINEAR)
    x = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
    x = (x - torch.tensor(mean)) / torch.tensor(std)
    return x.permute(2, 0, 1)


def export_features(job: ExportJob) -> ExportResult:
    model = load_checkpoint(job.checkpoint)
    features_net, head = validate_topology(model)
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    weights = head.weight.detach().numpy()
    bias = head.bias.detach().numpy() if head.bias is not None else None
    n, d = weights.shape
    write_ept(weights, out / "head.ept")
    if bias is not None:
        write_ept(bias, out / "bias.ept")

    max_dev = 0.0
    sample_lines = []
    for sid, image_path, label in sorted(job.images):
        if not 0 <= label < n:
            raise ValueError(f"sample {sid!r}: label {label} out of range [0, {n})")
        x = preprocess(image_path, job.resize, job.mean, job.std)
        with torch.no_grad():
            fmap = features_net(x.unsqueeze(0))[0]  # D x H x W
            logits = model(x.unsqueeze(0))[0].numpy()
        feat_hwd = fmap.permute(1, 2, 0).numpy()  # H x W x D
        feat_file = out / f"{sid}.ept"
        write_ept(feat_hwd, feat_file)

        # self-check: recompute logits from the file just written
        stored = read_ept(feat_file).astype(np.float64)
        v = stored.mean(axis=(0, 1))
        recomputed = weights.astype(np.float64) @ v
        if bias is not None:
            recomputed = recomputed + bias.astype(np.float64)
        max_dev = max(max_dev, float(np.max(np.abs(recomputed - logits))))

        rel_img = os.path.relpath(image_path, out)
        sample_lines.append(f"sample: {sid} {label} {sid}.ept {rel_img}")

    if max_dev > 1e-4:
        raise RuntimeError(
            f"export self-check failed: recomputed logits deviate by {max_dev:.3e} > 1e-4"
        )

    manifest_path = out / "manifest.txt"
    lines = [
        f"# exported from checkpoint {job.checkpoint.name}",
        f"# preprocessing: resize={job.resize}x{job.resize} bilinear, scale 1/255,",
        f"# preprocessing: mean={','.join(str(m) for m in job.mean)}",
        f"# preprocessing: std={','.join(str(s) for s in job.std)}",
        f"dataset: export-{job.checkpoint.stem}",
        f"classes: {n}",
        f"channels: {d}",
        "head: head.ept",
    ]
    if bias is not None:
        lines.append("bias: bias.ept")
    lines.extend(sample_lines)
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, manifest_path)
    return ExportResult(manifest_path, max_dev, len(job.images))
