import numpy as np
import pytest

from backbone_ensemble.errors import InfeasibleRates
from backbone_ensemble.io import validate_bundle
from backbone_ensemble.metrics import correctness, diversity, oracle_accuracy
from backbone_ensemble.synth import SynthConfig, generate_arrays, synth_generate


def masks_of(split):
    return [correctness(z, split["labels"]) for z in split["logits"]]


def test_independent_accuracy():
    data = generate_arrays(SynthConfig(rho=0.0, n_train=5000, n_test=10, seed=1))
    for m in masks_of(data["train"]):
        assert abs(m.mean() - 0.7) <= 0.02


def test_routed_marginals_preserved():
    data = generate_arrays(SynthConfig(rho=1.0, acc=[0.6, 0.7, 0.8], n_train=20000, n_test=10, seed=2))
    for m, p in zip(masks_of(data["train"]), [0.6, 0.7, 0.8]):
        assert abs(m.mean() - p) <= 0.02


def test_full_routing_diversity():
    data = generate_arrays(SynthConfig(rho=1.0, n_train=5000, n_test=10, seed=0))
    assert diversity(masks_of(data["train"])) >= 0.6


def test_byte_identical(tmp_path):
    cfg = dict(classes=4, n_train=50, n_test=30, n_val=20, feature_dim=5, seed=9)
    synth_generate(SynthConfig(**cfg), tmp_path / "a")
    synth_generate(SynthConfig(**cfg), tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generated_bundle_validates(tmp_path):
    b = synth_generate(SynthConfig(classes=4, n_train=50, n_test=30, n_val=20, feature_dim=5), tmp_path)
    assert validate_bundle(b) == []
    assert b.splits == ["train", "val", "test"]
    assert b.load_logits("test").shape == (3, 30, 4)
    assert [f.shape for f in b.load_features("val")] == [(20, 5)] * 3


def test_diversity_monotone_in_rho():
    rhos = np.linspace(0, 1, 6)
    means = []
    for rho in rhos:
        vals = [diversity(masks_of(generate_arrays(SynthConfig(rho=rho, n_train=3000, n_test=10, seed=s))["train"]))
                for s in range(5)]
        means.append(np.mean(vals))
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_oracle_exceeds_best_single():
    data = generate_arrays(SynthConfig(rho=1.0, n_train=5000, n_test=10, seed=4))
    masks = masks_of(data["train"])
    assert oracle_accuracy(masks) > max(m.mean() for m in masks)
    assert oracle_accuracy(masks) == pytest.approx(1.0)


def test_features_carry_cue():
    data = generate_arrays(SynthConfig(rho=1.0, cue=3.0, n_train=2000, n_test=10, seed=5))
    tr = data["train"]
    guess = np.argmax(tr["features"][0][:, :3], axis=1)
    assert np.mean(guess == tr["reliable"]) > 0.8


def test_infeasible_rates():
    with pytest.raises(InfeasibleRates, match="feasible interval"):
        SynthConfig(rho=0.5, acc=[0.2, 0.7, 0.7]).routed_rates()
    with pytest.raises(InfeasibleRates):
        generate_arrays(SynthConfig(rho=1.0, acc=[0.99, 0.99, 0.2], n_train=10, n_test=10))


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(acc=[0.7, 0.7])
    with pytest.raises(ValueError):
        SynthConfig(feature_dim=2)
    assert SynthConfig(acc=[0.6], backbones=4).acc == [0.6] * 4
