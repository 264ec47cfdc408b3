import filecmp

import pytest

from protolens.cli import main


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    assert main(["synth", "--out", str(out), "--per-class", "10", "--seed", "5"]) == 0
    return out


@pytest.fixture(scope="module")
def trained_u(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train") / "u.ept"
    code = main(
        [
            "train",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--out", str(out),
            "--epochs", "6",
        ]
    )
    assert code == 0
    return out


def test_synth_rejects_d_less_than_n(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x"), "--classes", "5", "--channels", "4"]) == 1


def test_synth_deterministic(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "a"), "--per-class", "3"]) == 0
    assert main(["synth", "--out", str(tmp_path / "b"), "--per-class", "3"]) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files
    match, mismatch, errors = filecmp.cmpfiles(
        tmp_path / "a", tmp_path / "b", cmp.common_files, shallow=False
    )
    assert not mismatch and not errors


def test_verify_identity(fixture_dir, capsys):
    assert main(["verify", "--manifest", str(fixture_dir / "manifest.txt")]) == 0
    out = capsys.readouterr().out
    assert "argmax mismatches: 0" in out
    assert "0.000e+00" in out


def test_verify_trained(fixture_dir, trained_u):
    code = main(
        ["verify", "--manifest", str(fixture_dir / "manifest.txt"), "--u", str(trained_u)]
    )
    assert code == 0


def test_verify_corrupted_u_is_io_error(fixture_dir, tmp_path):
    bad = tmp_path / "u.ept"
    bad.write_bytes(b"XXXXgarbage")
    assert main(["verify", "--manifest", str(fixture_dir / "manifest.txt"), "--u", str(bad)]) == 2


def test_train_epochs_zero_rejected(fixture_dir, tmp_path, capsys):
    code = main(
        [
            "train",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--out", str(tmp_path / "u.ept"),
            "--epochs", "0",
        ]
    )
    assert code == 1
    assert "epochs" in capsys.readouterr().err


def test_train_free_mode_preserves(fixture_dir, tmp_path, capsys):
    code = main(
        [
            "train",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--out", str(tmp_path / "u.ept"),
            "--mode", "free",
            "--epochs", "4",
        ]
    )
    assert code == 0
    assert "argmax mismatches: 0" in capsys.readouterr().out


def test_prototypes_ranked(fixture_dir, trained_u, capsys):
    code = main(
        [
            "prototypes",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--u", str(trained_u),
            "--channel", "0",
            "--m", "5",
        ]
    )
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if "activation=" in l]
    assert len(lines) == 5


def test_prototypes_channel_out_of_range(fixture_dir):
    code = main(
        ["prototypes", "--manifest", str(fixture_dir / "manifest.txt"), "--channel", "99"]
    )
    assert code == 1


def test_prototypes_m_exceeds_dataset_warns(fixture_dir, capsys):
    code = main(
        [
            "prototypes",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--channel", "0",
            "--m", "999",
        ]
    )
    assert code == 0
    assert "warning" in capsys.readouterr().out


def test_explain_writes_report(fixture_dir, trained_u, tmp_path):
    out = tmp_path / "report.txt"
    code = main(
        [
            "explain",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--u", str(trained_u),
            "--sample", "s00",
            "--topk", "3",
            "--out", str(out),
        ]
    )
    assert code == 0
    from protolens.explainer import load_report

    report = load_report(out)
    assert len(report.entries) == 3


def test_explain_unknown_sample(fixture_dir, tmp_path):
    code = main(
        [
            "explain",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--sample", "nope",
            "--out", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 1


def test_explain_topk_zero(fixture_dir, tmp_path):
    code = main(
        [
            "explain",
            "--manifest", str(fixture_dir / "manifest.txt"),
            "--sample", "s00",
            "--topk", "0",
            "--out", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 1


def test_purity_improves_after_training(fixture_dir, trained_u, capsys):
    assert main(["purity", "--manifest", str(fixture_dir / "manifest.txt")]) == 0
    before = float(capsys.readouterr().out.split("mean purity:")[1].split()[0])
    code = main(
        ["purity", "--manifest", str(fixture_dir / "manifest.txt"), "--u", str(trained_u)]
    )
    assert code == 0
    after = float(capsys.readouterr().out.split("mean purity:")[1].split()[0])
    assert after > before


def test_missing_manifest_is_io_error(tmp_path):
    assert main(["purity", "--manifest", str(tmp_path / "none.txt")]) == 2


def test_transform_sidecar_round_trip(trained_u):
    from protolens.artifacts import load_transform

    u = load_transform(trained_u)
    assert u.mode == "orthogonal"
    u2 = load_transform(trained_u)
    assert u.params.tobytes() == u2.params.tobytes()
