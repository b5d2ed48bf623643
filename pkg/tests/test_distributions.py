import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from softnce.distributions import (
    Dataset,
    GmmSpec,
    alignment_angle,
    cc_log_density_unnorm,
    cc_posterior,
    cc_sample,
    conditional_probs,
    label_smooth,
    make_modes,
    mixup_targets,
    sample_gmm_dataset,
    sample_soft_distribution_label,
)
from softnce.numerics import make_rng


class TestLabelSmooth:
    def test_uniform_noise(self):
        t = label_smooth(0, 3, 0.1)
        np.testing.assert_allclose(t, [0.9 + 0.1 / 3, 0.1 / 3, 0.1 / 3], rtol=1e-15)
        np.testing.assert_allclose(t, [0.933333333333, 0.033333333333, 0.033333333333], atol=1e-12)

    def test_degenerate_cases(self):
        np.testing.assert_array_equal(label_smooth(2, 4, 0.0), [0, 0, 1, 0])
        xi = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(label_smooth(2, 4, 1.0, xi), xi)

    def test_vectorized(self):
        t = label_smooth(np.array([0, 2]), 3, 0.3)
        assert t.shape == (2, 3)
        np.testing.assert_allclose(t.sum(axis=1), 1.0)

    @pytest.mark.parametrize("eps", [-0.1, 1.5])
    def test_epsilon_range(self, eps):
        with pytest.raises(ValueError):
            label_smooth(0, 3, eps)

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            label_smooth(0, 3, 0.1, [0.5, 0.6, 0.1])


class TestMixup:
    def test_boundary(self):
        t1 = np.array([0.2, 0.8])
        np.testing.assert_array_equal(mixup_targets(t1, [1.0, 0.0], 1.0), t1)

    def test_symmetric(self):
        np.testing.assert_allclose(mixup_targets([1, 0], [0, 1], 0.5), [0.5, 0.5])

    def test_arithmetic(self):
        np.testing.assert_allclose(mixup_targets([0.9, 0.1], [0.2, 0.8], 0.8), [0.76, 0.24], rtol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mixup_targets([1, 0], [0, 0, 1], 0.5)


class TestModes:
    def test_angles_at_anchor_points(self):
        assert alignment_angle(0) == pytest.approx(math.pi / 2)
        assert math.degrees(alignment_angle(80)) == pytest.approx(18.0)
        assert alignment_angle(50) == pytest.approx(math.pi / 4)

    def test_degenerate_alignment(self):
        with pytest.raises(ValueError):
            alignment_angle(100)

    def test_orthonormal_at_zero(self):
        theta = make_modes(GmmSpec(alignment_percent=0))
        np.testing.assert_array_equal(theta, np.eye(20))

    @pytest.mark.parametrize("percent", [0, 10, 35.5, 80, 99])
    def test_gram_structure(self, percent):
        theta = make_modes(GmmSpec(alignment_percent=percent))
        gram = theta @ theta.T
        np.testing.assert_allclose(np.diag(gram), 1.0, atol=1e-12)
        np.testing.assert_allclose(gram[0, 1:], math.cos(alignment_angle(percent)), atol=1e-12)

    def test_eighty_percent_cosine(self):
        theta = make_modes(GmmSpec(alignment_percent=80))
        np.testing.assert_allclose(theta[1:] @ theta[0], 0.9510565163, atol=1e-9)

    def test_too_many_modes(self):
        with pytest.raises(ValueError):
            GmmSpec(n_modes=5, dim=4)

    def test_json_roundtrip(self):
        spec = GmmSpec(n_modes=4, dim=6, alignment_percent=30.0, mean_scale=5.0)
        data = json.loads(spec.to_json())
        assert {"n_modes", "dim", "alignment_percent", "mean_scale"} <= data.keys()
        assert GmmSpec.from_json(spec.to_json()) == spec


class TestGmmDataset:
    def test_full_protocol_shapes(self):
        spec = GmmSpec(alignment_percent=40)
        ds = sample_gmm_dataset(spec, 1600, 32000, make_modes(spec), make_rng(0))
        assert ds.inputs.shape == (32000, 20)
        assert ds.hard_labels.min() >= 0 and ds.hard_labels.max() < 20
        assert ds.unique_inputs.shape == (1600, 20)

    def test_resample_rows_come_from_unique_set(self):
        spec = GmmSpec(n_modes=3, dim=4)
        ds = sample_gmm_dataset(spec, 50, 50, make_modes(spec), make_rng(1))
        unique = {tuple(r) for r in ds.unique_inputs}
        assert all(tuple(r) in unique for r in ds.inputs)

    def test_invalid_counts(self):
        spec = GmmSpec(n_modes=3, dim=4)
        with pytest.raises(ValueError):
            sample_gmm_dataset(spec, 2, 10, make_modes(spec), make_rng(0))
        with pytest.raises(ValueError):
            sample_gmm_dataset(spec, 10, 5, make_modes(spec), make_rng(0))

    def test_label_marginal_is_uniform_for_orthogonal_modes(self):
        spec = GmmSpec(alignment_percent=0)
        ds = sample_gmm_dataset(spec, 1600, 32000, make_modes(spec), make_rng(5))
        freq = np.bincount(ds.hard_labels, minlength=20) / 32000
        sigma = math.sqrt(0.05 * 0.95 / 32000)
        # unique-point sampling adds cluster variance on top of the binomial term
        n_eff_sigma = math.sqrt(0.05 * 0.95 / 1600)
        assert np.all(np.abs(freq - 0.05) < 3 * max(sigma, n_eff_sigma))

    def test_conditional_frequencies_at_fixed_points(self):
        spec = GmmSpec(n_modes=5, dim=5, alignment_percent=70)
        theta = make_modes(spec)
        ds = sample_gmm_dataset(spec, 5, 20000, theta, make_rng(11))
        for u in range(5):
            rows = ds.source_index == u
            n = rows.sum()
            freq = np.bincount(ds.hard_labels[rows], minlength=5) / n
            p = conditional_probs(ds.unique_inputs[u], theta)[0]
            assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12)

    def test_scaled_labelling_is_sharper(self):
        spec = GmmSpec(n_modes=4, dim=4, alignment_percent=60)
        theta = make_modes(spec)
        x = spec.mean_scale * theta[:1]
        assert conditional_probs(x, spec.mean_scale * theta).max() > conditional_probs(x, theta).max()
        with pytest.raises(ValueError):
            sample_gmm_dataset(spec, 10, 10, theta, make_rng(0), label_theta="other")

    def test_determinism(self):
        spec = GmmSpec(n_modes=3, dim=3)
        a = sample_gmm_dataset(spec, 10, 30, make_modes(spec), make_rng(4))
        b = sample_gmm_dataset(spec, 10, 30, make_modes(spec), make_rng(4))
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.hard_labels, b.hard_labels)

    def test_csv_export(self, tmp_path):
        ds = Dataset(np.array([[1.0, 2.0], [3.0, 4.0]]), hard_labels=[1, 0])
        path = tmp_path / "d.csv"
        ds.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x_0,x_1,label"
        assert lines[1] == "1.0,2.0,1"


class TestDatasetValidation:
    def test_needs_labels_or_targets(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 2)))

    def test_soft_rows_validated(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 2)), soft_targets=[[0.7, 0.7]])


class TestContinuousCategorical:
    def test_constant_density(self):
        for alpha in ([0.2, 0.3, 0.5], [1, 0, 0]):
            assert cc_log_density_unnorm(alpha, [2.5, 2.5, 2.5]) == pytest.approx(math.log(2.5))

    def test_vertex(self):
        assert cc_log_density_unnorm([0, 1, 0], [1.0, 3.0, 2.0]) == pytest.approx(math.log(3.0))

    def test_arithmetic(self):
        assert cc_log_density_unnorm([0.5, 0.5], [1.0, 4.0]) == pytest.approx(math.log(2.0))

    def test_positive_parameters(self):
        with pytest.raises(ValueError):
            cc_log_density_unnorm([0.5, 0.5], [1.0, 0.0])

    def test_uniform_lambda_is_uniform_on_simplex(self):
        k = 4
        draws = cc_sample(np.ones(k), make_rng(0), size=20000)
        assert stats.kstest(draws[:, 0], stats.beta(1, k - 1).cdf).pvalue > 1e-3

    def test_two_class_mean_matches_quadrature(self):
        lam = np.array([1.0, math.e])
        num, _ = integrate.quad(lambda t: t * lam[1] ** t * lam[0] ** (1 - t), 0, 1)
        den, _ = integrate.quad(lambda t: lam[1] ** t * lam[0] ** (1 - t), 0, 1)
        mean = num / den
        assert mean == pytest.approx(1 / (math.e - 1), rel=1e-10)
        var_num, _ = integrate.quad(lambda t: (t - mean) ** 2 * lam[1] ** t, 0, 1)
        sd = math.sqrt(var_num / den)
        n = 10**5
        draws = cc_sample(lam, make_rng(1), size=n)
        assert abs(draws[:, 1].mean() - mean) < 3 * sd / math.sqrt(n)

    def test_samples_on_simplex(self):
        draws = cc_sample([0.2, 0.3, 5.0], make_rng(2), size=500)
        assert np.all(draws >= 0)
        np.testing.assert_allclose(draws.sum(axis=1), 1.0, atol=1e-12)
        assert cc_sample([1.0, 2.0], make_rng(3)).shape == (2,)

    def test_k_guard(self):
        with pytest.raises(ValueError, match="small K only"):
            cc_sample(np.ones(17), make_rng(0))


class TestCcPosterior:
    def test_single_position(self):
        np.testing.assert_allclose(cc_posterior([[0.2, 0.8]], [0.3, 0.7], [0.5, 0.5]), [1.0])

    def test_matching_distributions(self):
        alphas = make_rng(0).dirichlet(np.ones(3), size=5)
        np.testing.assert_allclose(cc_posterior(alphas, [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]), np.full(5, 0.2))

    def test_hand_example(self):
        np.testing.assert_allclose(cc_posterior([[1, 0], [0, 1]], [0.8, 0.2], [0.5, 0.5]), [0.8, 0.2], rtol=1e-14)

    def test_zero_noise_rejected(self):
        with pytest.raises(ValueError):
            cc_posterior([[1, 0]], [0.5, 0.5], [1.0, 0.0])

    def test_scale_invariance(self):
        rng = make_rng(9)
        alphas = rng.dirichlet(np.ones(4), size=6)
        p, eta = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        np.testing.assert_allclose(cc_posterior(alphas, 3.0 * p, 0.25 * eta), cc_posterior(alphas, p, eta), rtol=1e-12)


class TestSoftDistributionLabel:
    def test_no_noise(self):
        rng = make_rng(0)
        assert all(sample_soft_distribution_label(3, 0.0, np.full(5, 0.2), rng) == 3 for _ in range(100))

    def test_pure_noise_matches_xi(self):
        xi = np.array([0.1, 0.2, 0.3, 0.4])
        n = 10**5
        draws = sample_soft_distribution_label(np.zeros(n, dtype=int), 1.0, xi, make_rng(1))
        counts = np.bincount(draws, minlength=4)
        assert stats.chisquare(counts, xi * n).pvalue > 1e-3

    def test_keep_rate(self):
        n = 10**5
        draws = sample_soft_distribution_label(np.zeros(n, dtype=int), 0.3, np.full(4, 0.25), make_rng(2))
        p = 0.7 + 0.3 / 4
        assert p == pytest.approx(0.775)
        assert abs((draws == 0).mean() - p) < 3 * math.sqrt(p * (1 - p) / n)
