import numpy as np
import pytest

from protolens.errors import ContractError, ValidationError
from protolens.headmodel import ClassifierHead, DisentanglementTransform, logits_of, pool, predict
from protolens.synthlab import (
    SynthSpec,
    generate,
    mean_bank_purity,
    permutation_score,
    _transform_from,
)


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def test_identity_mixing_starts_pure(tmp_path):
    manifest, _ = generate(SynthSpec(samples_per_class=10, identity_mixing=True), tmp_path)
    u = DisentanglementTransform.identity(manifest.channels)
    assert mean_bank_purity(manifest, u, 5) >= 0.9


def test_baseline_accuracy_is_perfect(synth):
    manifest, _ = synth
    head = ClassifierHead(manifest.head())
    correct = sum(
        predict(logits_of(pool(manifest.features(s)), head)) == s.label for s in manifest
    )
    assert correct == len(manifest.samples)


def test_truth_purity_at_planted_optimum(synth):
    manifest, truth = synth
    assert mean_bank_purity(manifest, _transform_from(truth.mixing), 5) >= 0.9


def test_spec_invariants():
    with pytest.raises(ValidationError):
        generate(SynthSpec(num_classes=5, channels=4), "/tmp/unused")
    with pytest.raises(ValidationError):
        generate(SynthSpec(spike_strength=0.05, noise_sigma=0.1), "/tmp/unused")


def test_generation_deterministic(tmp_path):
    spec = SynthSpec(samples_per_class=5, seed=13)
    m1, _ = generate(spec, tmp_path / "a")
    m2, _ = generate(spec, tmp_path / "b")
    for s1, s2 in zip(m1, m2):
        assert s1.id == s2.id
        assert s1.feature_path.read_bytes() == s2.feature_path.read_bytes()
    assert m1.head_path.read_bytes() == m2.head_path.read_bytes()


def test_generation_worker_independence(tmp_path):
    spec = SynthSpec(samples_per_class=5, seed=13)
    m1, _ = generate(spec, tmp_path / "a", workers=1)
    m8, _ = generate(spec, tmp_path / "b", workers=8)
    for s1, s8 in zip(m1, m8):
        assert s1.feature_path.read_bytes() == s8.feature_path.read_bytes()
    assert (tmp_path / "a" / "manifest.txt").read_bytes() == (
        tmp_path / "b" / "manifest.txt"
    ).read_bytes()


def test_permutation_score_fixed_point():
    rng = np.random.default_rng(0)
    m = random_orthogonal(8, rng)
    assert abs(permutation_score(m, m) - 1.0) <= 1e-12


def test_permutation_score_two_row_mix():
    rng = np.random.default_rng(1)
    m = random_orthogonal(8, rng)
    u = m.copy()
    u[0] = (m[0] + m[1]) / np.sqrt(2)
    u[1] = (m[0] - m[1]) / np.sqrt(2)
    p = u @ m.T
    row_scores = np.abs(p).max(axis=1) / np.linalg.norm(p, axis=1)
    assert abs(row_scores[0] - 1 / np.sqrt(2)) <= 1e-12
    assert abs(row_scores[1] - 1 / np.sqrt(2)) <= 1e-12
    assert abs(permutation_score(u, m) - (6 + 2 / np.sqrt(2)) / 8) <= 1e-12


def test_permutation_score_random_pair_low():
    rng = np.random.default_rng(2)
    scores = [
        permutation_score(random_orthogonal(16, rng), random_orthogonal(16, rng))
        for _ in range(5)
    ]
    assert max(scores) < 0.6


def test_permutation_score_identity_vs_random_mixing(synth):
    manifest, truth = synth
    assert permutation_score(np.eye(manifest.channels), truth.mixing) < 0.8


def test_permutation_score_shape_mismatch():
    with pytest.raises(ContractError):
        permutation_score(np.eye(3), np.eye(4))
