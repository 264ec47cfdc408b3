import pytest

from protolens.synthlab import SynthSpec, generate


@pytest.fixture(scope="session")
def synth(tmp_path_factory):
    """Default planted-mixing fixture: N=5, D=8, 7x7, 40/class, seed 7."""
    out = tmp_path_factory.mktemp("synth")
    manifest, truth = generate(SynthSpec(), out)
    return manifest, truth


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """50-sample fixture for sort-oracle tests."""
    out = tmp_path_factory.mktemp("synth50")
    manifest, truth = generate(SynthSpec(samples_per_class=10, seed=11), out)
    return manifest, truth


@pytest.fixture(scope="session")
def trained(synth):
    """Transform trained with the default schedule on the default fixture."""
    from protolens.trainer import TrainConfig, train

    manifest, _ = synth
    u, trace = train(manifest, TrainConfig())
    return u, trace
