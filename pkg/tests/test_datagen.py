import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.special import expit

from shortkit import nn
from shortkit.datagen import (BinaryAttrSpec, ContinuousAttrSpec, Dataset, SubsampleSpec, calibrate_subsample,
                              class_gap, counterfactual_flip, dataset_stats, generate_binary_attr,
                              generate_continuous_attr, retain_probabilities, split, subsample)
from shortkit.errors import ConfigError, InputError, UnsupportedOperationError


def lstsq_predict(Xtr, ytr, Xte):
    A = np.c_[Xtr, np.ones(len(Xtr))]
    w, *_ = np.linalg.lstsq(A, ytr, rcond=None)
    return np.c_[Xte, np.ones(len(Xte))] @ w


# -- binary generator ---------------------------------------------------------

def test_binary_independent_attribute_uncorrelated():
    d = generate_binary_attr(BinaryAttrSpec(n=4000), 0)
    r = np.corrcoef(d.attributes, d.labels)[0, 1]
    assert abs(r) < 3 / math.sqrt(len(d))


def test_binary_conditional_frequencies():
    d = generate_binary_attr(BinaryAttrSpec(n=10000, p_red_given_y1=0.95, p_red_given_y0=0.15), 1)
    y = d.labels == 1
    assert abs(d.attributes[y].mean() - 0.95) < 0.02
    assert abs(d.attributes[~y].mean() - 0.15) < 0.02


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_binary_conditional_frequencies_within_three_se(seed):
    spec = BinaryAttrSpec(n=2000, p_red_given_y1=0.7, p_red_given_y0=0.3)
    d = generate_binary_attr(spec, seed)
    for lab, p in ((1, 0.7), (0, 0.3)):
        sel = d.attributes[d.labels == lab]
        assert abs(sel.mean() - p) < 3 * math.sqrt(p * (1 - p) / sel.size)


def test_binary_noiseless_signal_linearly_separable():
    d = generate_binary_attr(BinaryAttrSpec(n=600, noise_sigma=0.0, signal_strength=20.0, label_noise=0.0), 2)
    pred = lstsq_predict(d.features, d.labels.astype(float), d.features) > 0.5
    assert np.mean(pred == d.labels) == 1.0


def test_binary_square_lives_in_attribute_channel():
    spec = BinaryAttrSpec(n=50, noise_sigma=0.0, signal_strength=0.0, square_intensity=1.0)
    d = generate_binary_attr(spec, 3)
    img = d.features.reshape(-1, 2, spec.image_side, spec.image_side)
    red, green = img[:, 0].sum(axis=(1, 2)), img[:, 1].sum(axis=(1, 2))
    area = spec.square_side ** 2
    assert np.array_equal(red, np.where(d.attributes == 1, area, 0.0))
    assert np.array_equal(green, np.where(d.attributes == 0, area, 0.0))


def test_binary_invalid_probability():
    with pytest.raises(ConfigError):
        BinaryAttrSpec(p_red_given_y1=1.2)
    with pytest.raises(ConfigError):
        BinaryAttrSpec(p_red_given_y0=-0.1)


def test_generators_are_pure():
    a, b = generate_binary_attr(BinaryAttrSpec(n=100), 7), generate_binary_attr(BinaryAttrSpec(n=100), 7)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.attributes, b.attributes)
    c, d = (generate_continuous_attr(ContinuousAttrSpec(n=100, beta1=0.05, beta0=-2.75), 7) for _ in range(2))
    assert np.array_equal(c.features, d.features) and np.array_equal(c.labels, d.labels)
    assert not np.array_equal(a.features, generate_binary_attr(BinaryAttrSpec(n=100), 8).features)


# -- continuous generator -----------------------------------------------------

def test_continuous_label_independent_of_attribute():
    d = generate_continuous_attr(ContinuousAttrSpec(n=4000, beta1=0.0), 0)
    s = dataset_stats(d)
    se = math.sqrt(s.sd_a_pos ** 2 / s.n_pos + s.sd_a_neg ** 2 / s.n_neg)
    assert abs(s.gap) < 3 * se


def test_continuous_prevalence_matches_integral():
    spec = ContinuousAttrSpec(n=10000, beta0=-5.0, beta1=0.07)
    analytic = quad(lambda a: expit(-5.0 + 0.07 * a), 20, 90)[0] / 70
    d = generate_continuous_attr(spec, 4)
    assert abs(d.labels.mean() - analytic) < 0.02
    assert abs(spec.prevalence() - analytic) < 1e-9


def test_continuous_zero_coupling_hides_attribute():
    d = generate_continuous_attr(ContinuousAttrSpec(n=6000, coupling=0.0), 5)
    tr, _, te = split(d, (0.6, 0.1, 0.3), 0)
    mae = np.mean(np.abs(lstsq_predict(tr.features, tr.attributes, te.features) - te.attributes))
    base = np.mean(np.abs(tr.attributes.mean() - te.attributes))
    assert abs(mae - base) / base < 0.05


def test_continuous_coupling_exposes_attribute():
    d = generate_continuous_attr(ContinuousAttrSpec(n=3000, coupling=3.0), 5)
    pred = lstsq_predict(d.features, d.attributes, d.features)
    assert np.mean(np.abs(pred - d.attributes)) < 0.5 * np.mean(np.abs(d.attributes - d.attributes.mean()))


def test_continuous_degenerate_prevalence():
    with pytest.raises(InputError):
        generate_continuous_attr(ContinuousAttrSpec(n=50, beta0=-60.0), 0)


def test_continuous_spec_validation():
    with pytest.raises(ConfigError):
        ContinuousAttrSpec(a_min=5, a_max=5)


# -- subsampling --------------------------------------------------------------

def test_retain_probability_clamped_at_midpoint():
    spec = SubsampleSpec(k=0.14, a0=50.0, m=4.0)
    assert spec.raw_retain(50.0) == 2.0
    p = retain_probabilities(np.array([1, 0]), np.array([50.0, 50.0]), spec)
    assert p[0] == 1.0 and p[1] == 0.0  # negative uses clamp(1 - 2.0)


def test_retain_probability_logistic_tail():
    spec = SubsampleSpec(k=0.5, a0=50.0)
    assert retain_probabilities(np.array([1]), np.array([20.0]), spec)[0] < 1e-6


def test_subsample_nonpositive_scale():
    with pytest.raises(ConfigError):
        SubsampleSpec(k=0.1, a0=50.0, m=0.0)


def test_subsample_rejects_binary_attribute():
    with pytest.raises(UnsupportedOperationError):
        subsample(generate_binary_attr(BinaryAttrSpec(n=40), 0), SubsampleSpec(0.1, 0.5), 0)


def test_balancing_subsample_shrinks_gap():
    biased = generate_continuous_attr(ContinuousAttrSpec(n=10000, beta0=-0.07 * 55, beta1=0.07), 9)
    before = abs(class_gap(biased))
    after = abs(class_gap(subsample(biased, SubsampleSpec(k=-0.07, a0=55.0), 9)))
    assert before > 5 and after <= 0.5 * before


def test_subsample_keeps_rows_verbatim():
    d = generate_continuous_attr(ContinuousAttrSpec(n=2000), 3)
    s = subsample(d, SubsampleSpec(k=0.1, a0=55.0, m=1.5), 3)
    assert 0 < len(s) < len(d)
    assert np.array_equal(s.features, d.features[s.ids])
    assert np.array_equal(s.labels, d.labels[s.ids]) and np.array_equal(s.attributes, d.attributes[s.ids])


@given(st.floats(-1, 1), st.floats(20, 90), st.floats(0.1, 5))
def test_retain_probabilities_are_valid(k, a0, m):
    a = np.linspace(0, 110, 50)
    spec = SubsampleSpec(k, a0, m)
    for lab in (0, 1):
        p = retain_probabilities(np.full(50, lab), a, spec)
        assert np.all((p >= 0) & (p <= 1))
    if k > 0:
        assert np.all(np.diff(spec.raw_retain(a)) >= 0)


def test_calibrated_gap_near_target():
    d = generate_continuous_attr(ContinuousAttrSpec(n=10000), 11)
    spec = calibrate_subsample(d, 10.0)
    gaps = [class_gap(subsample(d, spec, s)) for s in range(5)]
    assert abs(np.mean(gaps) - 10.0) < 2.0


def test_calibration_unreachable_target():
    d = generate_continuous_attr(ContinuousAttrSpec(n=500), 0)
    with pytest.raises(InputError):
        calibrate_subsample(d, 500.0)


# -- counterfactual flip ------------------------------------------------------

def test_flip_is_involution():
    d = generate_binary_attr(BinaryAttrSpec(n=200), 0)
    back = counterfactual_flip(counterfactual_flip(d))
    assert np.array_equal(back.features, d.features) and np.array_equal(back.attributes, d.attributes)


def test_flip_changes_only_square_channel():
    d = generate_binary_attr(BinaryAttrSpec(n=100), 1)
    f = counterfactual_flip(d)
    assert np.array_equal(f.labels, d.labels) and np.array_equal(f.attributes, 1 - d.attributes)
    diff = (f.features - d.features).reshape(100, 2, 12, 12)
    assert np.count_nonzero(diff) == 100 * 2 * 4
    assert np.allclose(diff.sum(axis=(1, 2, 3)), 0.0)


def test_flip_single_example():
    d = generate_binary_attr(BinaryAttrSpec(n=10), 2)
    one = d.take([3])
    assert np.array_equal(counterfactual_flip(one).features[0], counterfactual_flip(d).features[3])


def test_flip_symmetric_data_statistics_unchanged():
    d = generate_binary_attr(BinaryAttrSpec(n=4000), 3)
    f = counterfactual_flip(d)
    assert abs(f.attributes.mean() - d.attributes.mean()) < 3 / math.sqrt(len(d))
    assert abs(f.features.mean() - d.features.mean()) < 1e-12


def test_flip_rejects_continuous():
    with pytest.raises(UnsupportedOperationError):
        counterfactual_flip(generate_continuous_attr(ContinuousAttrSpec(n=20), 0))


def _flip_sensitivity(p1, p0):
    spec = BinaryAttrSpec(n=3000, p_red_given_y1=p1, p_red_given_y0=p0)
    tr, va, te = split(generate_binary_attr(spec, 4), (0.6, 0.2, 0.2), 4)
    net = nn.NetworkSpec(input_dim=spec.n_features, attribute_head=())
    res = nn.train(net, tr.arrays(), va.arrays(), nn.TrainConfig(epochs=10, learning_rate=3e-3, seed=1))
    s0 = nn.forward(net, res.params, te.features).scores
    s1 = nn.forward(net, res.params, counterfactual_flip(te).features).scores
    return float(np.mean(np.abs(s1 - s0)))


def test_flip_sensitivity_grows_with_correlation():
    assert _flip_sensitivity(0.95, 0.05) > _flip_sensitivity(0.5, 0.5)


# -- splitting and stats ------------------------------------------------------

def _toy(n):
    return Dataset(np.zeros((n, 1)), np.arange(n) % 2, np.arange(n, dtype=float), np.arange(n))


def test_split_sizes():
    tr, va, te = split(_toy(1000), (0.85, 0.05, 0.10), 0)
    assert (len(tr), len(va), len(te)) == (850, 50, 100)


def test_split_partition_and_determinism():
    parts = split(_toy(97), (0.5, 0.2, 0.3), 3)
    ids = np.concatenate([p.ids for p in parts])
    assert sorted(ids.tolist()) == list(range(97))
    again = split(_toy(97), (0.5, 0.2, 0.3), 3)
    assert all(np.array_equal(p.ids, q.ids) for p, q in zip(parts, again))


def test_split_empty_part():
    with pytest.raises(InputError):
        split(_toy(5), (0.9, 0.05, 0.05), 0)


def test_stats_arithmetic():
    s = dataset_stats(Dataset(np.zeros((2, 1)), [0, 1], [40.0, 60.0], [0, 1]))
    assert s.mean_a_neg == 40.0 and s.mean_a_pos == 60.0 and s.prevalence == 0.5 and s.gap == 20.0


def test_stats_empty():
    with pytest.raises(InputError):
        dataset_stats(_toy(0))


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.array([[np.nan]]), [0], [1.0], [0])
    with pytest.raises(InputError):
        Dataset(np.zeros((1, 1)), [2], [1.0], [0])
    with pytest.raises(InputError):
        Dataset(np.zeros((1, 1)), [1], [0.5], [0], "binary")


def test_csv_round_trip(tmp_path):
    d = generate_continuous_attr(ContinuousAttrSpec(n=30), 1)
    d.to_csv(tmp_path / "d.csv")
    e = Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(d.features, e.features) and np.array_equal(d.attributes, e.attributes)
    assert np.array_equal(d.ids, e.ids) and np.array_equal(d.labels, e.labels)


# -- label noise --------------------------------------------------------------

def test_label_noise_flips_pattern_at_configured_rate():
    spec = BinaryAttrSpec(n=6000, noise_sigma=0.0, square_intensity=0.0, label_noise=0.15)
    d = generate_binary_attr(spec, 5)
    # Without pixel noise every image is +-pattern; compare its sign with the label's.
    z = np.sign(d.features @ d.features[0]) * (2 * d.labels - 1)
    minority = min(np.mean(z > 0), np.mean(z < 0))
    assert abs(minority - 0.15) < 3 * math.sqrt(0.15 * 0.85 / spec.n)


def test_label_noise_leaves_labels_and_attributes_unchanged():
    a = generate_binary_attr(BinaryAttrSpec(n=500, label_noise=0.0), 9)
    b = generate_binary_attr(BinaryAttrSpec(n=500, label_noise=0.4), 9)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.attributes, b.attributes)
    assert not np.array_equal(a.features, b.features)


def test_label_noise_validated():
    with pytest.raises(ConfigError):
        BinaryAttrSpec(label_noise=1.5)
