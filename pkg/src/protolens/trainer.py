"""Purity-maximization training of the channel-mixing transform.

Everything but the transform is frozen. The loss is 1 minus the mean
purity over the current prototype bank; the bank is rebuilt on a schedule
with a linearly shrinking width m. The spatial argmax inside each purity
term is recomputed at the current transform and treated as piecewise
constant for differentiation (subgradient 0 on the clamped branch).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, PreservationError, TrainingError, ValidationError
from .headmodel import DisentanglementTransform, PreservationReport, verify_preservation
from .protobank import PURITY_EPS, PrototypeBank, build_bank
from .tensorio import Manifest


@dataclass
class TrainConfig:
    epochs: int = 20
    recalc_every: int = 2
    m_start: int = 100
    m_end: int = 5
    mode: str = "orthogonal"
    learning_rate: float = 0.05
    momentum: float = 0.9
    free_mode_penalty: float = 1e-3
    seed: int = 0
    include_negative: bool = False
    inner_iters: int = 5

    def validate(self) -> None:
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.recalc_every < 1:
            problems.append("recalc_every must be >= 1")
        if not 1 <= self.m_end <= self.m_start:
            problems.append("need 1 <= m_end <= m_start")
        if self.mode not in ("orthogonal", "free"):
            problems.append(f"unknown mode {self.mode!r}")
        if self.inner_iters < 1:
            problems.append("inner_iters must be >= 1")
        if problems:
            raise ValidationError("; ".join(problems))


@dataclass
class EpochRecord:
    epoch: int
    m: int
    loss: float
    mean_purity: float
    min_purity: float
    step_warnings: int
    seconds: float


@dataclass
class TrainTrace:
    epochs: list[EpochRecord] = field(default_factory=list)
    preservation: Optional[PreservationReport] = None


def m_schedule(epoch: int, cfg: TrainConfig) -> int:
    """Linear interpolation m_start -> m_end, rounded half away from zero."""
    if not 0 <= epoch <= cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    x = cfg.m_start + (cfg.m_end - cfg.m_start) * epoch / cfg.epochs
    m = int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)
    return max(cfg.m_end, min(cfg.m_start, m))


def _record_terms(bank: PrototypeBank, features: dict[str, np.ndarray]):
    """(sign, channel, raw feature tensor) per record, in deterministic order."""
    terms = []
    for sign in sorted(bank.records):
        for per_channel in bank.records[sign]:
            for rec in per_channel:
                terms.append((sign, rec.channel, features[rec.sample_id]))
    return terms


def _purity_terms(
    bank: PrototypeBank,
    u: DisentanglementTransform,
    features: dict[str, np.ndarray],
    want_grad: bool,
) -> tuple[float, list[float], Optional[np.ndarray]]:
    """Mean purity over the bank at the current transform.

    Returns (mean, per-record purities, d(mean)/dU or None). For each record
    the argmax pixel of its channel is found under the current U; with q the
    raw pixel vector and p = U q, purity is max(±p_k, 0) / max(||p||, eps)
    and its U-gradient is (e_k/||p|| - p p_k/||p||^3) q^T on the live branch.
    """
    terms = _record_terms(bank, features)
    if not terms:
        raise ContractError("empty bank")
    d = u.dim
    mat = u.matrix
    grad_u = np.zeros((d, d)) if want_grad else None
    purities: list[float] = []
    for sign, k, z in terms:
        z_hat = z @ mat.T
        chan = z_hat[:, :, k] if sign == "positive" else -z_hat[:, :, k]
        h, w = np.unravel_index(int(np.argmax(chan)), chan.shape)
        q = z[h, w]
        p = z_hat[h, w]
        pk = p[k] if sign == "positive" else -p[k]
        norm = max(float(np.linalg.norm(p)), PURITY_EPS)
        pur = max(pk, 0.0) / norm
        purities.append(pur)
        if want_grad and pk > 0.0:
            dp = -p * (pk / norm**3)
            dp[k] += (1.0 if sign == "positive" else -1.0) / norm
            grad_u += np.outer(dp, q)
    mean = float(np.mean(purities))
    if want_grad:
        grad_u /= len(terms)
    return mean, purities, grad_u


def purity_loss(
    bank: PrototypeBank, u: DisentanglementTransform, features: dict[str, np.ndarray]
) -> float:
    """1 - mean purity over all bank records, argmax at the current U."""
    mean, _, _ = _purity_terms(bank, u, features, want_grad=False)
    return 1.0 - mean


def _cayley_chain(u: DisentanglementTransform, grad_u: np.ndarray) -> np.ndarray:
    """Pull dL/dU back to the skew-generator parameters of the Cayley map."""
    d = u.dim
    s = np.zeros((d, d))
    iu, ju = np.triu_indices(d, k=1)
    s[iu, ju] = u.params
    s[ju, iu] = -u.params
    eye = np.eye(d)
    try:
        c = np.linalg.inv(eye + s)
    except np.linalg.LinAlgError as e:
        raise TrainingError(f"singular (I + S): {e}") from e
    # U = (I - S)(I + S)^-1  =>  dU = -(I + U) dS (I + S)^-1
    m = -(eye + u.matrix).T @ grad_u @ c.T
    return m[iu, ju] - m[ju, iu]


def loss_gradient(
    bank: PrototypeBank, u: DisentanglementTransform, features: dict[str, np.ndarray],
    free_mode_penalty: float = 0.0,
) -> np.ndarray:
    """Analytic gradient of purity_loss with respect to the transform params."""
    _, _, grad_mean = _purity_terms(bank, u, features, want_grad=True)
    grad_u = -grad_mean  # loss = 1 - mean
    if u.mode == "orthogonal":
        return _cayley_chain(u, grad_u)
    if free_mode_penalty:
        grad_u = grad_u + 2.0 * free_mode_penalty * (u.matrix - np.eye(u.dim))
    return grad_u.ravel()


def _total_loss(
    bank: PrototypeBank, u: DisentanglementTransform, features: dict[str, np.ndarray],
    cfg: TrainConfig,
) -> float:
    loss = purity_loss(bank, u, features)
    if u.mode == "free" and cfg.free_mode_penalty:
        loss += cfg.free_mode_penalty * float(
            np.sum((u.matrix - np.eye(u.dim)) ** 2)
        )
    return loss


def _load_bank_features(manifest: Manifest, bank: PrototypeBank) -> dict[str, np.ndarray]:
    ids = {r.sample_id for sign in bank.records for r in bank.all_records(sign)}
    by_id = {s.id: s for s in manifest.samples}
    return {sid: manifest.features(by_id[sid]) for sid in sorted(ids)}


def train(
    manifest: Manifest, cfg: TrainConfig, workers: int = 1
) -> tuple[DisentanglementTransform, TrainTrace]:
    """Run the full schedule and return the trained transform plus its trace.

    The transform starts at identity (exactly the pretrained behavior) and
    prediction preservation is verified at the end; a violation is an
    internal-consistency failure, not a warning.
    """
    cfg.validate()
    d = manifest.channels
    u = DisentanglementTransform.identity(d, cfg.mode)
    velocity = np.zeros_like(u.params)
    signs = ("positive", "negative") if cfg.include_negative else ("positive",)
    trace = TrainTrace()
    bank: Optional[PrototypeBank] = None
    features: dict[str, np.ndarray] = {}

    for epoch in range(cfg.epochs):
        start = time.monotonic()
        warnings = 0
        if epoch % cfg.recalc_every == 0:
            m = m_schedule(epoch, cfg)
            bank = build_bank(manifest, u, m, signs=signs, epoch_tag=epoch, workers=workers)
            features = _load_bank_features(manifest, bank)
        assert bank is not None
        for _ in range(cfg.inner_iters):
            loss = _total_loss(bank, u, features, cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            grad = loss_gradient(bank, u, features, cfg.free_mode_penalty)
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            # line-search fallback: never accept an increasing step silently
            delta = velocity
            for _attempt in range(10):
                if _total_loss(bank, u.with_params(u.params + delta), features, cfg) <= loss:
                    break
                delta = delta / 2.0
            else:
                warnings += 1
            velocity = delta
            u = u.with_params(u.params + delta)
        loss = _total_loss(bank, u, features, cfg)
        _, purities, _ = _purity_terms(bank, u, features, want_grad=False)
        trace.epochs.append(
            EpochRecord(
                epoch=epoch,
                m=bank.m,
                loss=loss,
                mean_purity=float(np.mean(purities)),
                min_purity=float(np.min(purities)),
                step_warnings=warnings,
                seconds=time.monotonic() - start,
            )
        )

    report = verify_preservation(manifest, u)
    trace.preservation = report
    if report.argmax_mismatches > 0:
        raise PreservationError(
            f"training changed {report.argmax_mismatches} predictions "
            f"(max logit deviation {report.max_abs_logit_dev:.3e})"
        )
    return u, trace
