"""Checkpoint handling for the supported architecture family.

Supported models end in global average pooling followed by one linear
layer; anything else (e.g. a max-pooling head) is refused at export time.
Because this environment has no access to public model zoos, a small
deterministic convolutional checkpoint can be created locally for
demonstrations; the export pipeline treats it exactly like any other
checkpoint file.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn


class UnsupportedHeadError(RuntimeError):
    pass


def build_backbone(
    num_classes: int, channels: int = 32, pool: str = "avg"
) -> nn.Module:
    layers = nn.Sequential(
        nn.Conv2d(3, 16, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, channels, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(channels, channels, 3, stride=2, padding=1),
        nn.ReLU(),
    )
    model = nn.Sequential()
    model.add_module("features", layers)
    if pool == "avg":
        model.add_module("pool", nn.AdaptiveAvgPool2d(1))
    else:
        model.add_module("pool", nn.AdaptiveMaxPool2d(1))
    model.add_module("flatten", nn.Flatten())
    model.add_module("head", nn.Linear(channels, num_classes))
    return model


def save_checkpoint(model: nn.Module, num_classes: int, path) -> None:
    pool = getattr(model, "pool", None)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "num_classes": num_classes,
            "channels": model.head.in_features,
            "pool": "avg" if isinstance(pool, nn.AdaptiveAvgPool2d) else "max",
        },
        path,
    )


def load_checkpoint(path) -> nn.Module:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    model = build_backbone(blob["num_classes"], blob["channels"], blob["pool"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


def make_demo_checkpoint(path, num_classes: int = 5, seed: int = 0, pool: str = "avg") -> None:
    """Create a deterministic small checkpoint for demonstration runs."""
    torch.manual_seed(seed)
    model = build_backbone(num_classes, pool=pool)
    save_checkpoint(model, num_classes, path)


def validate_topology(model: nn.Module) -> tuple[nn.Module, nn.Linear]:
    """Return (feature extractor, head) or refuse unsupported layouts."""
    pool = getattr(model, "pool", None)
    head = getattr(model, "head", None)
    if not isinstance(pool, nn.AdaptiveAvgPool2d):
        raise UnsupportedHeadError(
            "only average-pooling heads are supported; "
            f"found {type(pool).__name__ if pool is not None else 'no pooling layer'}"
        )
    if not isinstance(head, nn.Linear):
        raise UnsupportedHeadError("classification head must be a single linear layer")
    return model.features, head
