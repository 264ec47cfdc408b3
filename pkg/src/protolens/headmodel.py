"""Frozen classification-head algebra around the channel-mixing transform.

The pipeline is: features Z -> per-pixel transform U @ Z[x,y] -> spatial
average pooling -> compensated head A @ U^-1 -> logits -> argmax. Because
pooling commutes with the per-pixel linear map, the compensated pipeline
reproduces the baseline logits for any invertible U, and verify_preservation
checks that numerically over a whole manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, SingularityError
from .tensorio import Manifest

COND_LIMIT = 1e8


@dataclass
class ClassifierHead:
    """Final linear layer: N x D weights plus optional length-N bias."""

    weights: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ContractError("head weights must be a 2-d matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ContractError("head weights must be finite")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weights.shape[0],):
                raise ContractError(
                    f"bias length {self.bias.shape} does not match {self.weights.shape[0]} classes"
                )

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def channels(self) -> int:
        return self.weights.shape[1]


def _skew_from_params(params: np.ndarray, dim: int) -> np.ndarray:
    s = np.zeros((dim, dim))
    iu, ju = np.triu_indices(dim, k=1)
    s[iu, ju] = params
    s[ju, iu] = -params
    return s


class DisentanglementTransform:
    """Parameterized invertible D x D channel-mixing matrix with cached inverse.

    Orthogonal mode stores the upper-triangle entries of a skew-symmetric
    generator S and materializes U through the Cayley map
    U = (I - S)(I + S)^-1, so U is orthogonal at every parameter value and
    the inverse is simply the transpose. Free mode stores the full matrix
    entries directly and inverts with a condition-number guard.
    """

    def __init__(self, mode: str, dim: int, params: np.ndarray):
        if mode not in ("orthogonal", "free"):
            raise ContractError(f"unknown transform mode {mode!r}")
        expected = dim * (dim - 1) // 2 if mode == "orthogonal" else dim * dim
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (expected,):
            raise ContractError(f"{mode} mode with D={dim} needs {expected} params, got {params.shape}")
        self.mode = mode
        self.dim = dim
        self.params = params
        self._matrix: Optional[np.ndarray] = None
        self._inverse: Optional[np.ndarray] = None

    @classmethod
    def identity(cls, dim: int, mode: str = "orthogonal") -> "DisentanglementTransform":
        if mode == "orthogonal":
            return cls(mode, dim, np.zeros(dim * (dim - 1) // 2))
        return cls(mode, dim, np.eye(dim).ravel())

    def with_params(self, params: np.ndarray) -> "DisentanglementTransform":
        return DisentanglementTransform(self.mode, self.dim, params)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.mode == "orthogonal":
                if not self.params.any():
                    self._matrix = np.eye(self.dim)
                else:
                    s = _skew_from_params(self.params, self.dim)
                    eye = np.eye(self.dim)
                    # U = (I - S)(I + S)^-1 via a solve on the transpose
                    self._matrix = np.linalg.solve((eye + s).T, (eye - s).T).T
            else:
                self._matrix = self.params.reshape(self.dim, self.dim).copy()
        return self._matrix

    @property
    def inverse(self) -> np.ndarray:
        if self._inverse is None:
            u = self.matrix
            if self.mode == "orthogonal":
                self._inverse = u.T.copy()
            else:
                cond = np.linalg.cond(u)
                if not np.isfinite(cond) or cond > COND_LIMIT:
                    raise SingularityError(f"free-mode matrix condition {cond:.3g} exceeds {COND_LIMIT:.0e}")
                self._inverse = np.linalg.inv(u)
        return self._inverse

    def checksum(self) -> str:
        """Hex digest of the materialized matrix, used to stamp artifacts."""
        return hashlib.sha256(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()[:16]


def apply_transform(u: DisentanglementTransform, z: np.ndarray) -> np.ndarray:
    """Apply U to every spatial pixel: out[x, y] = U @ z[x, y]."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ContractError(f"feature tensor must be rank-3, got rank {z.ndim}")
    if z.shape[2] != u.dim:
        raise ContractError(f"feature has {z.shape[2]} channels, transform has {u.dim}")
    return z @ u.matrix.T


def pool(z: np.ndarray) -> np.ndarray:
    """Spatial mean per channel, f64 accumulation."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ContractError(f"pool expects rank-3, got rank {z.ndim}")
    h, w, _ = z.shape
    if h == 0 or w == 0:
        raise ContractError("pool on empty spatial dims")
    return z.sum(axis=(0, 1)) / (h * w)


def adjust_head(head: ClassifierHead, u: DisentanglementTransform) -> ClassifierHead:
    """Compensate the head for the transform: weights' = A @ U^-1."""
    if head.channels != u.dim:
        raise ContractError(f"head has {head.channels} channels, transform has {u.dim}")
    return ClassifierHead(head.weights @ u.inverse, head.bias)


def logits_of(v: np.ndarray, head: ClassifierHead) -> np.ndarray:
    out = head.weights @ v
    if head.bias is not None:
        out = out + head.bias
    return out


def predict(logits: np.ndarray) -> int:
    # np.argmax returns the first maximum, which is the lowest class index
    return int(np.argmax(logits))


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def forward(
    z: np.ndarray, u: DisentanglementTransform, head_adj: ClassifierHead
) -> tuple[np.ndarray, int]:
    """Full transformed pipeline: (logits, predicted class)."""
    v = pool(apply_transform(u, z))
    lg = logits_of(v, head_adj)
    return lg, predict(lg)


@dataclass
class PreservationReport:
    max_abs_logit_dev: float
    argmax_mismatches: int
    samples: int

    def __str__(self) -> str:
        return (
            f"samples: {self.samples}\n"
            f"max abs logit deviation: {self.max_abs_logit_dev:.3e}\n"
            f"argmax mismatches: {self.argmax_mismatches}"
        )


def verify_preservation(manifest: Manifest, u: DisentanglementTransform) -> PreservationReport:
    """Compare baseline and transformed logits over every sample.

    Baseline: A @ pool(Z) + b. Transformed: (A @ U^-1) @ pool(U (*) Z) + b.
    """
    head = ClassifierHead(manifest.head(), manifest.bias())
    head_adj = adjust_head(head, u)
    max_dev = 0.0
    mismatches = 0
    count = 0
    for sample in manifest:
        try:
            z = manifest.features(sample)
            base = logits_of(pool(z), head)
            trans, pred = forward(z, u, head_adj)
        except (OSError, ContractError) as e:
            raise type(e)(f"sample {sample.id!r}: {e}") from e
        max_dev = max(max_dev, float(np.max(np.abs(trans - base))))
        if predict(base) != pred:
            mismatches += 1
        count += 1
    return PreservationReport(max_dev, mismatches, count)
