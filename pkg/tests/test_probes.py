import numpy as np
import pytest

from shortkit import nn
from shortkit.errors import ConfigError
from shortkit.datagen import ContinuousAttrSpec, Dataset, generate_continuous_attr, split
from shortkit.probes import (Bounds, EncodingResult, ProbeConfig, attribute_transfer_probe, constant_baseline,
                             coverage, direct_attribute_model, probe_embeddings)

FAST = ProbeConfig(epochs=20, learning_rate=3e-2, bootstrap_resamples=200)


def dataset(X, a, kind="continuous", seed=0):
    n = len(a)
    y = (np.random.default_rng(seed).random(n) < 0.5).astype(np.int8)
    y[:2] = [0, 1]
    return Dataset(X, y, a, np.arange(n), kind)


def three(X, a, kind="continuous"):
    return split(dataset(X, a, kind), (0.6, 0.2, 0.2), 0)


def identity_net(d):
    spec = nn.NetworkSpec(input_dim=d, backbone_layers=((d, "none"),))
    p = nn.init_params(spec, 0)
    p.arrays["backbone.0.W"] = np.eye(d)
    return spec, p


def test_probe_recovers_exposed_attribute(rng):
    a = rng.uniform(20, 90, 1500)
    X = np.c_[a, rng.normal(size=(1500, 2))]
    spec, p = identity_net(3)
    res = attribute_transfer_probe(spec, p, *three(X, a), FAST)
    assert res.metric_kind == "mae" and res.value < 0.05 * a.std()
    assert res.ci95[0] <= res.value <= res.ci95[1]


def test_probe_on_noise_matches_constant_baseline(rng):
    a = rng.uniform(20, 90, 3000)
    X = rng.normal(size=(3000, 4))
    tr, va, te = three(X, a)
    spec, p = identity_net(4)
    res = attribute_transfer_probe(spec, p, tr, va, te, FAST)
    ueb = constant_baseline(tr, te, FAST)
    assert abs(res.value - ueb.value) / ueb.value < 0.05


def test_binary_probe_perfect_encoding(rng):
    a = (rng.random(1000) < 0.5).astype(float)
    X = np.c_[2 * a - 1, rng.normal(size=(1000, 2))]
    spec, p = identity_net(3)
    res = attribute_transfer_probe(spec, p, *three(X, a, "binary"), FAST)
    assert res.metric_kind == "auroc" and res.value == 1.0


def test_probe_leaves_backbone_untouched(rng):
    a = rng.uniform(20, 90, 600)
    X = np.c_[a / 50, rng.normal(size=(600, 3))]
    spec = nn.NetworkSpec(input_dim=4)
    p = nn.init_params(spec, 1)
    before = {k: v.copy() for k, v in p.arrays.items()}
    attribute_transfer_probe(spec, p, *three(X, a), FAST)
    assert all(np.array_equal(before[k], p.arrays[k]) for k in before)


def test_probe_is_deterministic(rng):
    a = rng.uniform(20, 90, 600)
    X = np.c_[a / 50, rng.normal(size=(600, 3))]
    spec = nn.NetworkSpec(input_dim=4)
    p = nn.init_params(spec, 1)
    parts = three(X, a)
    assert attribute_transfer_probe(spec, p, *parts, FAST) == attribute_transfer_probe(spec, p, *parts, FAST)


def test_stacked_probes_match_single(rng):
    a = rng.uniform(20, 90, 400)
    tr, va, te = three(np.c_[a / 50, rng.normal(size=(400, 2))], a)
    embs = [np.stack([rng.normal(size=(len(d), 3)) + d.attributes[:, None] / 40 for _ in range(2)])
            for d in (tr, va, te)]
    both = probe_embeddings(*embs, tr, va, te, FAST, seeds=[5, 6])
    for m, seed in enumerate((5, 6)):
        one = probe_embeddings(*(e[m:m + 1] for e in embs), tr, va, te, FAST, seeds=[seed])[0]
        assert one == both[m]


def test_mse_metric_option(rng):
    a = rng.uniform(20, 90, 600)
    spec, p = identity_net(2)
    res = attribute_transfer_probe(spec, p, *three(rng.normal(size=(600, 2)), a), ProbeConfig(metric="mse",
                                                                                             bootstrap_resamples=0))
    assert res.metric_kind == "mse" and res.ci95 == (res.value, res.value)


def test_constant_baseline_arithmetic():
    tr = dataset(np.zeros((3, 1)), np.array([0.0, 10.0, 20.0]))
    te = dataset(np.zeros((3, 1)), np.array([0.0, 10.0, 20.0]))
    assert constant_baseline(tr, te, ProbeConfig(bootstrap_resamples=0)).value == pytest.approx(20 / 3, abs=1e-12)


def test_constant_baseline_uniform_mad(rng):
    tr = dataset(np.zeros((20000, 1)), rng.uniform(0, 100, 20000))
    te = dataset(np.zeros((20000, 1)), rng.uniform(0, 100, 20000))
    assert abs(constant_baseline(tr, te, ProbeConfig(bootstrap_resamples=0)).value - 25.0) < 0.5


def test_constant_baseline_binary_is_chance(rng):
    a = (rng.random(50) < 0.5).astype(float)
    d = dataset(np.zeros((50, 1)), a, "binary")
    assert constant_baseline(d, d).value == 0.5


def _cont_parts(coupling, noise, seed=0):
    d = generate_continuous_attr(ContinuousAttrSpec(n=3000, coupling=coupling, noise_sigma=noise), seed)
    return split(d, (0.6, 0.2, 0.2), seed)


def test_direct_model_noiseless_channel():
    tr, va, te = _cont_parts(2.0, 0.0)
    spec = nn.NetworkSpec(input_dim=tr.n_features)
    leb = direct_attribute_model(spec, tr, va, te, nn.TrainConfig(epochs=15, learning_rate=3e-3),
                                 ProbeConfig(bootstrap_resamples=0))
    assert leb.value < 0.05 * constant_baseline(tr, te).value


def test_direct_model_without_signal_is_near_ueb():
    tr, va, te = _cont_parts(0.0, 1.0)
    spec = nn.NetworkSpec(input_dim=tr.n_features)
    leb = direct_attribute_model(spec, tr, va, te, nn.TrainConfig(epochs=10, learning_rate=3e-3),
                                 ProbeConfig(bootstrap_resamples=0))
    ueb = constant_baseline(tr, te, ProbeConfig(bootstrap_resamples=0))
    assert abs(leb.value - ueb.value) / ueb.value < 0.05


def test_coverage_fraction():
    b = Bounds(EncodingResult("mae", 5.0, (5, 5), 1), EncodingResult("mae", 15.0, (15, 15), 1))
    assert coverage([6.0, 11.0, 8.0], b) == 0.5
    assert coverage([6.0], Bounds(b.leb, b.leb)) == 0.0


def test_probe_config_validation():
    with pytest.raises(ConfigError):
        ProbeConfig(metric="rmse")
