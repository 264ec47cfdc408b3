import numpy as np
import pytest

from protolens.errors import ContractError, ValidationError
from protolens.headmodel import DisentanglementTransform
from protolens.protobank import PrototypeBank, PrototypeRecord
from protolens.trainer import TrainConfig, loss_gradient, m_schedule, purity_loss, train


def make_bank(records_by_channel, d, sign="positive"):
    lists = {sign: [[] for _ in range(d)]}
    feats = {}
    for k, tensors in records_by_channel.items():
        for i, z in enumerate(tensors):
            sid = f"r{k}_{i}"
            feats[sid] = z
            lists[sign][k].append(
                PrototypeRecord(sid, k, 0.0, (0, 0), np.zeros(d), 0.0, sign)
            )
    return PrototypeBank(channels=d, m=5, records=lists), feats


def test_schedule_endpoints():
    cfg = TrainConfig()
    assert m_schedule(0, cfg) == 100
    assert m_schedule(cfg.epochs, cfg) == 5


def test_schedule_midpoint_rounds_half_away_from_zero():
    assert m_schedule(10, TrainConfig()) == 53  # 52.5 rounds up


def test_schedule_non_increasing():
    cfg = TrainConfig()
    values = [m_schedule(e, cfg) for e in range(cfg.epochs + 1)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_schedule_rejects_out_of_range():
    with pytest.raises(ContractError):
        m_schedule(21, TrainConfig())


def test_loss_zero_on_pure_bank():
    d = 4
    tensors = {}
    for k in range(d):
        z = np.zeros((3, 3, d))
        z[1, 1, k] = 2.0
        tensors[k] = [z]
    bank, feats = make_bank(tensors, d)
    u = DisentanglementTransform.identity(d)
    assert purity_loss(bank, u, feats) <= 1e-12


def test_loss_single_diagonal_prototype():
    z = np.array([1.0, 1.0]).reshape(1, 1, 2)
    bank, feats = make_bank({0: [z]}, 2)
    u = DisentanglementTransform.identity(2)
    assert abs(purity_loss(bank, u, feats) - (1 - 1 / np.sqrt(2))) <= 1e-12


def test_loss_matches_per_record_mean(synth):
    from protolens.protobank import build_bank
    from protolens.trainer import _load_bank_features

    manifest, _ = synth
    u = DisentanglementTransform.identity(manifest.channels)
    bank = build_bank(manifest, u, 5)
    feats = _load_bank_features(manifest, bank)
    expected = 1.0 - np.mean([r.purity for r in bank.all_records()])
    assert abs(purity_loss(bank, u, feats) - expected) <= 1e-12


def test_empty_bank_rejected():
    bank = PrototypeBank(channels=2, m=5, records={"positive": [[], []]})
    with pytest.raises(ContractError):
        purity_loss(bank, DisentanglementTransform.identity(2), {})


def _fd_gradient(bank, u, feats, eps=1e-5):
    fd = np.zeros_like(u.params)
    for j in range(len(u.params)):
        up = u.params.copy()
        up[j] += eps
        lp = purity_loss(bank, u.with_params(up), feats)
        up[j] -= 2 * eps
        lm = purity_loss(bank, u.with_params(up), feats)
        fd[j] = (lp - lm) / (2 * eps)
    return fd


@pytest.mark.parametrize("mode", ["orthogonal", "free"])
def test_gradient_matches_finite_differences(mode):
    rng = np.random.default_rng(0)
    for trial in range(20):
        d = int(rng.integers(2, 9))
        nrec = int(rng.integers(1, 6))
        tensors = {}
        for i in range(nrec):
            k = int(rng.integers(d))
            tensors.setdefault(k, []).append(rng.normal(size=(4, 4, d)))
        bank, feats = make_bank(tensors, d)
        u0 = DisentanglementTransform.identity(d, mode)
        u = u0.with_params(u0.params + rng.normal(scale=0.1, size=u0.params.shape))
        analytic = loss_gradient(bank, u, feats)
        fd = _fd_gradient(bank, u, feats)
        scale = max(np.abs(fd).max(), 1e-8)
        assert np.abs(analytic - fd).max() / scale <= 1e-4


def test_gradient_zero_when_all_clamped():
    rng = np.random.default_rng(1)
    d = 3
    tensors = {}
    for k in range(d):
        z = -np.abs(rng.normal(size=(2, 2, d))) - 1.0  # every pixel negative
        tensors[k] = [z]
    bank, feats = make_bank(tensors, d)
    u = DisentanglementTransform.identity(d)
    assert np.array_equal(loss_gradient(bank, u, feats), np.zeros(d * (d - 1) // 2))


def test_pure_one_hot_gradient_is_stationary():
    d = 3
    z = np.zeros((2, 2, d))
    z[0, 0, 1] = 2.0
    bank, feats = make_bank({1: [z]}, d)
    u = DisentanglementTransform.identity(d)
    grad = loss_gradient(bank, u, feats)
    assert np.abs(grad).max() <= 1e-12


def test_config_invariants():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ValidationError):
        TrainConfig(m_start=3, m_end=5).validate()
    with pytest.raises(ValidationError):
        TrainConfig(recalc_every=0).validate()


def test_train_rejects_bad_config(synth):
    manifest, _ = synth
    with pytest.raises(ValidationError):
        train(manifest, TrainConfig(epochs=0))


def test_train_improves_purity_and_preserves(synth, trained):
    manifest, _ = synth
    u, trace = trained
    assert len(trace.epochs) == TrainConfig().epochs
    assert trace.epochs[-1].mean_purity > trace.epochs[0].mean_purity + 0.2
    assert trace.preservation is not None
    assert trace.preservation.argmax_mismatches == 0
    assert trace.preservation.max_abs_logit_dev <= 1e-6
    # orthogonal invariant holds after training
    assert np.max(np.abs(u.matrix.T @ u.matrix - np.eye(u.dim))) <= 1e-8


def test_train_free_mode_preserves(synth):
    manifest, _ = synth
    u, trace = train(manifest, TrainConfig(mode="free", epochs=4))
    assert trace.preservation.argmax_mismatches == 0
    assert trace.preservation.max_abs_logit_dev <= 1e-6


def test_train_deterministic_replay(synth):
    manifest, _ = synth
    cfg = TrainConfig(epochs=4)
    u1, _ = train(manifest, cfg)
    u2, _ = train(manifest, TrainConfig(epochs=4))
    assert u1.params.tobytes() == u2.params.tobytes()
