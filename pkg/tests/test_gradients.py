import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softnce.distributions import label_smooth
from softnce.gradients import (
    GradReport,
    attraction_repulsion_report,
    backprop_logits,
    central_difference,
    compare_gradients,
    embedding_logits,
    finite_difference_check,
    grad_magnitude_hard_target,
    grad_wrt_embeddings,
    random_instance,
)
from softnce.losses import LOSS_IDS, NoiseModel, soft_target_tuple_loss
from softnce.numerics import make_rng


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestCentralDifference:
    def test_quadratic_exact(self):
        a = np.array([[3.0, 1.0], [1.0, 2.0]])
        b = np.array([0.5, -1.0])
        x = np.array([0.3, -0.7])
        f = lambda v: 0.5 * v @ a @ v + b @ v
        np.testing.assert_allclose(central_difference(f, x), a @ x + b, atol=1e-9)

    def test_plain_central_difference(self):
        x = np.array([0.2, 1.1])
        g = central_difference(lambda v: np.sum(np.sin(v)), x, step=1e-5, levels=0)
        np.testing.assert_allclose(g, np.cos(x), rtol=1e-9)

    def test_extrapolation_beats_plain(self):
        x = np.array([0.4])
        f = lambda v: float(np.exp(3 * v[0]))
        exact = 3 * np.exp(1.2)
        plain = abs(central_difference(f, x, step=1e-3, levels=0)[0] - exact)
        rich = abs(central_difference(f, x, step=1e-3, levels=2)[0] - exact)
        assert rich < plain * 1e-3

    @pytest.mark.parametrize("step", [1e-8, 1e-2])
    def test_step_range(self, step):
        with pytest.raises(ValueError):
            central_difference(lambda v: 0.0, np.zeros(2), step=step)

    def test_non_finite_probe(self):
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            central_difference(lambda v: np.log(v[0]), np.array([1e-4]), step=1e-3)


class TestCompare:
    def test_relative_floor(self):
        rel, abs_err, _ = compare_gradients([0.0, 1.0], [1e-10, 1.0])
        assert rel == pytest.approx(1e-2)
        assert abs_err == pytest.approx(1e-10)

    def test_report_nonnegative(self):
        rep = GradReport(0.0, 0.0, 3)
        assert rep.to_dict()["n_probes"] == 3


class TestEmbeddingGradients:
    def test_cosine_scores_in_range(self):
        rng = make_rng(0)
        s = embedding_logits(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), "cosine")
        assert np.all(np.abs(s) <= 1 + 1e-12)

    def test_cosine_undefined_at_origin(self):
        with pytest.raises(ValueError, match="undefined at origin"):
            grad_wrt_embeddings(np.zeros(3), np.eye(3), label_smooth([0, 1], 3, 0.1), "cosine")

    def test_unknown_scoring(self):
        with pytest.raises(ValueError):
            embedding_logits(np.ones(2), np.eye(2), "euclid")

    @pytest.mark.parametrize("seed", range(5))
    def test_cosine_grad_is_tangent(self, seed):
        rng = make_rng(seed)
        z = rng.normal(size=6) * 3
        y = rng.normal(size=(5, 6))
        targets = rng.dirichlet(np.ones(5), size=4)
        _, gz, gy = grad_wrt_embeddings(z, y, targets, "cosine")
        assert abs(gz @ z) < 1e-10
        np.testing.assert_allclose(np.sum(gy * y, axis=1), 0.0, atol=1e-10)

    def test_batch_cosine_grad_is_tangent(self):
        inst = random_instance("st_infonce", make_rng(1), n=6, k=4, d=5, scoring="cosine")
        gz, gy = inst.gradients()
        np.testing.assert_allclose(np.sum(gz * inst.z, axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(np.sum(gy * inst.y, axis=1), 0.0, atol=1e-10)

    def test_symmetric_configuration_has_zero_gradient(self):
        y = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        targets = np.full((3, 4), 0.25)
        _, gz, _ = grad_wrt_embeddings(np.array([0.3, -0.8]), y, targets, "dot")
        np.testing.assert_allclose(gz, 0.0, atol=1e-15)

    def test_reference_instance(self):
        rng = make_rng(2024)
        z, y = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
        targets = rng.dirichlet(np.ones(4), size=3)
        noise = NoiseModel.from_probs(rng.dirichlet(np.ones(4)))
        _, gz, gy = grad_wrt_embeddings(z, y, targets, "dot", noise)
        f_z = lambda v: grad_wrt_embeddings(v, y, targets, "dot", noise)[0]
        f_y = lambda v: grad_wrt_embeddings(z, v, targets, "dot", noise)[0]
        assert compare_gradients(gz, central_difference(f_z, z))[0] < 1e-6
        assert compare_gradients(gy, central_difference(f_y, y))[0] < 1e-6

    def test_backprop_shapes(self):
        g = np.ones((2, 3))
        gz, gy = backprop_logits(g, np.ones((2, 4)), np.ones((3, 4)))
        assert gz.shape == (2, 4) and gy.shape == (3, 4)


class TestFiniteDifferenceCheck:
    @pytest.mark.parametrize("loss_id", LOSS_IDS)
    @pytest.mark.parametrize("scoring", ["dot", "cosine"])
    def test_losses_pass(self, loss_id, scoring):
        inst = random_instance(loss_id, make_rng(3), n=4, k=5, d=6, scoring=scoring)
        rep = finite_difference_check(loss_id, inst)
        assert rep.passed, rep.to_dict()
        assert rep.max_rel_error < 1e-6
        assert rep.n_probes == 4 * 6 + 5 * 6

    def test_energy_form_gradient(self):
        inst = random_instance("energy_ce", make_rng(4), n=5, k=3, d=4)
        assert finite_difference_check("energy_ce", inst).max_rel_error < 1e-6

    def test_injected_fault_is_caught(self):
        inst = random_instance("nll", make_rng(5))
        rep = finite_difference_check("nll", inst, grad_hook=lambda gz, gy: (-gz, gy))
        assert not rep.passed
        assert rep.worst["param"] == "z"
        assert rep.max_rel_error == pytest.approx(2.0, abs=1e-6)

    @given(st.integers(0, 2**32 - 1), st.sampled_from(LOSS_IDS), st.sampled_from(["dot", "cosine"]))
    @settings(max_examples=25, deadline=None)
    def test_random_instances(self, seed, loss_id, scoring):
        rng = make_rng(seed)
        n, k, d = (int(v) for v in rng.integers(2, 7, size=3))
        inst = random_instance(loss_id, rng, n=n, k=k, d=d, scoring=scoring, temperature=0.5)
        assert finite_difference_check(loss_id, inst).passed


class TestHardTargetResponse:
    def test_zero_prefactor(self):
        targets = np.array([[0.0, 1.0, 0.0], [0.3, 0.3, 0.4]])
        assert grad_magnitude_hard_target(np.ones(2), np.eye(3, 2), targets, 0) == 0.0

    def test_identical_rows(self):
        alpha = np.array([0.2, 0.5, 0.3])
        targets = np.tile(alpha, (4, 1))
        rng = make_rng(0)
        z, y = rng.normal(size=3), rng.normal(size=(3, 3))
        # equal aggregate scores give equal weights, so the sum collapses to alpha_j
        for j in range(3):
            assert grad_magnitude_hard_target(z, y, targets, j) == pytest.approx(0.0, abs=1e-15)

    def test_direct_evaluation(self):
        targets = np.array([[0.8, 0.2], [0.1, 0.9]])
        z, y = np.array([1.0, 0.0]), np.array([[2.0, 0.0], [0.0, 1.0]])
        s = np.array([2.0, 0.0]) + np.log(2.0)
        agg = targets @ s
        c = np.exp(agg - agg.max())
        c /= c.sum()
        expected = 0.8 * abs(-1 + (c[0] * 0.8 + c[1] * 0.1) / 0.8)
        assert grad_magnitude_hard_target(z, y, targets, 0) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("eps", [0.05, 0.2, 0.45])
    def test_smoothed_hard_configuration_is_positive(self, eps):
        d, k = 4, 4
        z = unit([1.0, 0.0, 0.0, 0.0])
        y = np.eye(k, d)[[1, 0, 2, 3]]
        targets = label_smooth(np.array([0, 1, 2, 3]), k, eps)
        assert abs(z @ y[0]) < 1e-12
        assert grad_magnitude_hard_target(z, y, targets, 0, scoring="cosine") > 0


class TestResponseTrends:
    def test_hard_positive_grows_with_negatives(self):
        # z orthogonal to its positive, negatives aligned with z
        rng = make_rng(7)
        d, k = 6, 6
        z = unit(rng.normal(size=d))
        basis = np.linalg.qr(np.column_stack([z, rng.normal(size=(d, d - 1))]))[0]
        y_pos = basis[:, 1]
        negs = [unit(z + 0.3 * basis[:, j]) for j in range(2, d)] + [z]
        y = np.vstack([y_pos] + negs)
        noise = NoiseModel.uniform(k)
        mags = []
        for m in range(1, k):
            targets = np.eye(k)[: m + 1]
            _, gz, _ = grad_wrt_embeddings(z, y, targets, "dot", noise)
            mags.append(np.linalg.norm(gz))
        assert abs(z @ y_pos) < 1e-12
        assert min(mags) > 0.1
        assert all(b > a for a, b in zip(mags, mags[1:]))

    def _saturated(self, similarity, temperature):
        d, k = 3, 3
        z = np.array([1.0, 0.0, 0.0])
        y_pos = np.array([similarity, np.sqrt(1 - similarity**2), 0.0])
        y = np.vstack([y_pos, -z, -z])
        targets = np.eye(k)
        _, gz, _ = grad_wrt_embeddings(z, y, targets, "cosine", NoiseModel.uniform(k, temperature))
        return np.linalg.norm(gz)

    def test_weak_target_decays(self):
        mags = [self._saturated(c, 1.0) for c in (0.5, 0.9, 0.99, 0.999)]
        assert all(b < a for a, b in zip(mags, mags[1:]))

    def test_weak_target_vanishes_at_low_temperature(self):
        assert self._saturated(0.999, 0.1) < 1e-3


class TestAttractionRepulsion:
    def test_report_fields(self):
        rng = make_rng(3)
        noise = NoiseModel.uniform(3)
        rep = attraction_repulsion_report(rng.normal(size=3), rng.dirichlet(np.ones(3)),
                                          rng.dirichlet(np.ones(3), size=2), noise)
        assert rep["residual"] == pytest.approx(rep["full"] - rep["attraction"] - rep["repulsion"])
        full, _ = soft_target_tuple_loss(np.zeros(3), [1, 0, 0], [[0, 1, 0]], noise)
        assert np.isfinite(full)
