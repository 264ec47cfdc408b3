"""Prototype-based explanations for frozen image classifiers.

The toolkit learns an invertible channel-mixing matrix over exported
feature maps that maximizes per-channel prototype purity while leaving the
classifier's predictions bit-for-bit intact, then explains predictions by
the top-k contributing channels with prototype evidence.
"""

from .errors import (
    ContractError,
    FormatError,
    PreservationError,
    ProtolensError,
    SingularityError,
    TrainingError,
    ValidationError,
)
from .headmodel import (
    ClassifierHead,
    DisentanglementTransform,
    adjust_head,
    apply_transform,
    forward,
    pool,
    verify_preservation,
)
from .protobank import (
    PrototypeBank,
    PrototypeRecord,
    build_bank,
    channel_activation,
    prototypical_pixel,
    purity,
    select_prototypes,
)
from .tensorio import EptTensor, Manifest, SampleEntry, load_manifest, read_tensor, write_tensor
from .trainer import TrainConfig, TrainTrace, m_schedule, train

__all__ = [
    "ClassifierHead",
    "ContractError",
    "DisentanglementTransform",
    "EptTensor",
    "FormatError",
    "Manifest",
    "PreservationError",
    "ProtolensError",
    "PrototypeBank",
    "PrototypeRecord",
    "SampleEntry",
    "SingularityError",
    "TrainConfig",
    "TrainTrace",
    "TrainingError",
    "ValidationError",
    "adjust_head",
    "apply_transform",
    "build_bank",
    "channel_activation",
    "forward",
    "load_manifest",
    "m_schedule",
    "pool",
    "prototypical_pixel",
    "purity",
    "read_tensor",
    "select_prototypes",
    "train",
    "verify_preservation",
    "write_tensor",
]

__version__ = "0.1.0"
