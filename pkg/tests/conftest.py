import numpy as np
import pytest

from backbone_ensemble.synth import SynthConfig, synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    cfg = SynthConfig(classes=5, n_train=400, n_test=200, n_val=100, backbones=3,
                      acc=[0.6, 0.65, 0.7], rho=0.8, feature_dim=8, seed=7,
                      names=["B-32", "RN50", "B-16"], gflops=[14.9, 18.2, 41.1])
    return synth_generate(cfg, tmp_path_factory.mktemp("small"))


def random_masks(rng, n_b, n):
    return [rng.uniform(size=n) < rng.uniform(0.05, 0.95) for _ in range(n_b)]
