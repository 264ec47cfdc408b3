"""Planted-mixing synthetic fixtures with a known recovery target.

Each sample carries gaussian noise plus one strong spike on a channel
assigned to its class; the stored features are those latents rotated
through a random orthogonal matrix M, so recovering U = M (up to a signed
permutation) un-mixes the channels. The head is constructed so baseline
predictions are already correct on the mixed features.

All randomness comes from the counter-based Philox generator keyed by
(seed, stream index), so generation is reproducible and order-independent.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ValidationError
from .headmodel import DisentanglementTransform
from .protobank import build_bank
from .tensorio import EptTensor, Manifest, SampleEntry, save_manifest, write_tensor

# Philox stream indices; per-sample streams start at _STREAM_SAMPLES
_STREAM_MIXING = 0
_STREAM_SAMPLES = 16


@dataclass
class SynthSpec:
    num_classes: int = 5
    channels: int = 8
    height: int = 7
    width: int = 7
    samples_per_class: int = 40
    spike_strength: float = 5.0
    noise_sigma: float = 0.1
    seed: int = 7
    identity_mixing: bool = False  # degenerate spec: M = I, features already pure

    def validate(self) -> None:
        problems = []
        if self.channels < self.num_classes:
            problems.append("channels must be >= classes")
        if self.num_classes < 1:
            problems.append("classes must be >= 1")
        if self.spike_strength <= self.noise_sigma:
            problems.append("spike_strength must exceed noise_sigma")
        if self.height < 1 or self.width < 1 or self.samples_per_class < 1:
            problems.append("spatial dims and samples_per_class must be >= 1")
        if problems:
            raise ValidationError("; ".join(problems))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def _random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def channel_class_map(spec: SynthSpec) -> np.ndarray:
    """Owning class per channel: channel j belongs to class j mod N.

    With D > N the spare channels wrap around, so every channel has a
    planted concept and every class owns at least one channel.
    """
    return np.arange(spec.channels) % spec.num_classes


@dataclass
class GroundTruth:
    mixing: np.ndarray  # D x D orthogonal M; ideal recovery is U = M
    channel_class: np.ndarray  # length-D owning class per channel


def _make_sample(spec: SynthSpec, index: int, mixing: np.ndarray) -> tuple[np.ndarray, int]:
    cls = index // spec.samples_per_class
    rng = _rng(spec.seed, _STREAM_SAMPLES + index)
    latent = rng.normal(0.0, spec.noise_sigma, (spec.height, spec.width, spec.channels))
    own = np.flatnonzero(channel_class_map(spec) == cls)
    chan = int(own[rng.integers(len(own))])
    h = int(rng.integers(spec.height))
    w = int(rng.integers(spec.width))
    latent[h, w, chan] += spec.spike_strength
    return latent @ mixing, cls  # Z[x, y] = M^T @ latent[x, y]


def generate(spec: SynthSpec, out_dir, workers: int = 1) -> tuple[Manifest, GroundTruth]:
    """Write manifest + feature files + head + ground-truth sidecar to out_dir."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d, n = spec.channels, spec.num_classes
    if spec.identity_mixing:
        mixing = np.eye(d)
    else:
        mixing = _random_orthogonal(d, _rng(spec.seed, _STREAM_MIXING))
    chan_cls = channel_class_map(spec)
    indicator = np.zeros((n, d))
    indicator[chan_cls, np.arange(d)] = 1.0
    head = indicator @ mixing  # A = E M, so A @ pool(Z) = E @ pool(L)

    total = n * spec.samples_per_class
    width = len(str(total - 1))
    ids = [f"s{i:0{width}d}" for i in range(total)]

    def emit(i: int) -> SampleEntry:
        z, cls = _make_sample(spec, i, mixing)
        path = out / f"{ids[i]}.ept"
        write_tensor(EptTensor(z), path)
        return SampleEntry(ids[i], path, cls)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_:
            entries = list(pool_.map(emit, range(total)))
    else:
        entries = [emit(i) for i in range(total)]

    write_tensor(EptTensor(head), out / "head.ept")
    write_tensor(EptTensor(mixing), out / "mixing.ept")
    (out / "ground_truth.txt").write_text(
        "channel-class: " + " ".join(str(int(c)) for c in chan_cls) + "\n"
    )
    manifest = Manifest(
        dataset_name=f"synth-n{n}-d{d}-seed{spec.seed}",
        num_classes=n,
        channels=d,
        head_path=out / "head.ept",
        bias_path=None,
        samples=entries,
        root=out,
    )
    save_manifest(manifest, out / "manifest.txt")

    truth = GroundTruth(mixing=mixing, channel_class=chan_cls)
    # reject specs too noisy for the planted optimum to be meaningful;
    # m=1 probes each channel's single best sample, independent of dataset size
    at_truth = mean_bank_purity(manifest, _transform_from(mixing), m=1)
    if at_truth < 0.9:
        raise ValidationError(
            f"spec rejected as too noisy: mean purity {at_truth:.3f} < 0.9 at the planted optimum"
        )
    return manifest, truth


def _transform_from(matrix: np.ndarray) -> DisentanglementTransform:
    return DisentanglementTransform("free", matrix.shape[0], matrix.ravel())


def mean_bank_purity(manifest: Manifest, u: DisentanglementTransform, m: int = 5) -> float:
    """Mean purity over all channels' top-m positive prototypes."""
    bank = build_bank(manifest, u, m)
    records = bank.all_records("positive")
    return float(np.mean([r.purity for r in records]))


def recovered_latent_channel(u_matrix: np.ndarray, m_truth: np.ndarray, channel: int) -> int:
    """Which planted latent channel an output channel corresponds to.

    Purity training recovers the mixing only up to a signed permutation, so
    output channel indices are a relabeling of the latent ones; the mapping
    is the argmax row entry of U M^T.
    """
    p = np.asarray(u_matrix) @ np.asarray(m_truth).T
    return int(np.argmax(np.abs(p[channel])))


def permutation_score(u_matrix: np.ndarray, m_truth: np.ndarray) -> float:
    """Mean over rows of U M^T of max-abs-entry / row-norm; 1 iff U M^T is a
    signed permutation, i.e. U recovers the planted mixing up to channel
    relabeling and sign."""
    u_matrix = np.asarray(u_matrix, dtype=np.float64)
    m_truth = np.asarray(m_truth, dtype=np.float64)
    if u_matrix.shape != m_truth.shape or u_matrix.ndim != 2:
        raise ContractError(f"shape mismatch: {u_matrix.shape} vs {m_truth.shape}")
    p = u_matrix @ m_truth.T
    norms = np.linalg.norm(p, axis=1)
    return float(np.mean(np.abs(p).max(axis=1) / np.maximum(norms, 1e-12)))
