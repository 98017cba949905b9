"""Tests for softmax, KL, cosine and finite-difference helpers."""

import math

import numpy as np
import pytest

from src.errors import ConfigurationError, ContractError, NumericError
from src.numerics import (
    as_matrix, cosine_matrix, cosine_similarity, finite_difference_gradient,
    kl_divergence, max_relative_error, softmax, unit_rows, unit_rows_backward,
)


class TestSoftmax:

    def test_zero_logits_are_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0], 0.1), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([math.log(2), 0.0], 1.0), [2 / 3, 1 / 3], atol=1e-15)

    def test_temperature_keeps_argmax(self, rng):
        v = rng.standard_normal((50, 6))
        np.testing.assert_array_equal(np.argmax(softmax(v, 0.1), axis=1), np.argmax(softmax(v, 1.0), axis=1))

    def test_large_logits_stay_finite(self):
        probs = softmax([1000.0, 0.0], 0.1)
        assert np.all(np.isfinite(probs))
        np.testing.assert_allclose(probs.sum(), 1.0)

    def test_row_shift_invariance(self, rng):
        v = rng.standard_normal((20, 5))
        shift = 100.0 * rng.standard_normal((20, 1))
        np.testing.assert_allclose(softmax(v + shift, 0.3), softmax(v, 0.3), rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
    def test_rows_sum_to_one(self, rng, scale):
        probs = softmax(scale * rng.standard_normal((40, 7)), 0.1)
        assert np.all(probs >= 0)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) <= 1e-9

    def test_rejects_non_positive_temperature(self):
        with pytest.raises(ConfigurationError):
            softmax([1.0, 2.0], 0.0)

    def test_rejects_nan(self):
        with pytest.raises(NumericError):
            softmax([np.nan, 1.0])


class TestKlDivergence:

    def test_identical_is_zero(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_one_hot_against_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_closed_form(self):
        expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.5108, abs=1e-4)

    def test_rows_give_vector(self):
        out = kl_divergence([[0.5, 0.5], [1.0, 0.0]], [[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_allclose(out, [0.0, math.log(2)], atol=1e-12)

    def test_zero_prediction_is_clamped(self):
        assert np.isfinite(kl_divergence([1.0, 0.0], [0.0, 1.0]))

    def test_non_negative_on_random_simplex_points(self, rng):
        for alpha in (0.1, 1.0, 10.0):
            target = rng.dirichlet(np.full(6, alpha), size=200)
            prediction = rng.dirichlet(np.full(6, alpha), size=200)
            assert np.all(kl_divergence(target, prediction) >= -1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            kl_divergence([0.5, 0.5], [1 / 3, 1 / 3, 1 / 3])

    def test_unnormalised_rows_rejected(self):
        with pytest.raises(ContractError):
            kl_divergence([0.5, 0.6], [0.5, 0.5])


class TestCosine:

    def test_identity(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_diagonal(self):
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.70710678, abs=1e-8)

    def test_zero_vector_gives_zero(self):
        assert cosine_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0

    def test_matrix_bounds(self, rng):
        sims = cosine_matrix(rng.standard_normal((7, 4)), rng.standard_normal((5, 4)))
        assert sims.shape == (7, 5)
        assert np.all(np.abs(sims) <= 1.0)

    def test_symmetric(self, rng):
        a, b = rng.standard_normal((6, 4)), rng.standard_normal((9, 4))
        np.testing.assert_allclose(cosine_matrix(a, b), cosine_matrix(b, a).T, atol=1e-15)
        for u, v in zip(a, b):
            assert cosine_similarity(u, v) == pytest.approx(cosine_similarity(v, u), abs=1e-15)

    def test_positive_scale_invariance(self, rng):
        a, b = rng.standard_normal((6, 4)), rng.standard_normal((5, 4))
        row_scale = rng.uniform(1e-3, 1e3, size=(6, 1))
        np.testing.assert_allclose(cosine_matrix(row_scale * a, 7.5 * b), cosine_matrix(a, b), atol=1e-12)

    def test_negative_scale_flips_sign(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        np.testing.assert_allclose(cosine_matrix(-2.0 * a, b), -cosine_matrix(a, b), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            cosine_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestUnitRows:

    def test_rows_have_unit_norm(self, rng):
        np.testing.assert_allclose(np.linalg.norm(unit_rows(rng.standard_normal((5, 3))), axis=1), 1.0)

    def test_zero_row_stays_zero(self):
        np.testing.assert_array_equal(unit_rows(np.zeros((1, 3))), np.zeros((1, 3)))

    def test_backward_matches_finite_differences(self, rng):
        x = {"x": rng.standard_normal((4, 3))}
        g = rng.standard_normal((4, 3))
        numeric = finite_difference_gradient(lambda p: float(np.sum(unit_rows(p["x"]) * g)), x, h=1e-6)
        assert max_relative_error(unit_rows_backward(x["x"], g), numeric["x"], threshold=1e-5) < 1e-5

    def test_backward_is_orthogonal_to_row(self, rng):
        x = rng.standard_normal((4, 3))
        grad = unit_rows_backward(x, rng.standard_normal((4, 3)))
        np.testing.assert_allclose(np.sum(grad * x, axis=1), 0.0, atol=1e-12)

    def test_zero_row_gets_zero_gradient(self):
        np.testing.assert_array_equal(unit_rows_backward(np.zeros((1, 2)), np.ones((1, 2))), np.zeros((1, 2)))


class TestFiniteDifferences:

    def test_quadratic(self):
        grad = finite_difference_gradient(lambda t: float(t[0] ** 2), np.array([3.0]), h=1e-4)
        assert grad[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant_has_zero_gradient(self):
        grad = finite_difference_gradient(lambda t: 4.2, np.ones(5))
        np.testing.assert_array_equal(grad, np.zeros(5))

    def test_linear_classifier_cross_entropy(self, rng):
        x = rng.standard_normal(3)
        W = rng.standard_normal((3, 2))

        def loss(params):
            p = softmax(x @ params["W"])
            return float(-np.log(p[1]))

        p = softmax(x @ W)
        analytic = np.outer(x, p - np.array([0.0, 1.0]))
        numeric = finite_difference_gradient(loss, {"W": W})["W"]
        assert max_relative_error(analytic, numeric) < 1e-5

    def test_params_are_not_modified(self):
        params = np.array([1.0, 2.0])
        finite_difference_gradient(lambda t: float(np.sum(t ** 3)), params)
        np.testing.assert_array_equal(params, [1.0, 2.0])

    def test_rejects_bad_step(self):
        with pytest.raises(ConfigurationError):
            finite_difference_gradient(lambda t: 0.0, np.ones(2), h=0.0)


class TestAsMatrix:

    def test_vector_becomes_row(self):
        assert as_matrix([1.0, 2.0]).shape == (1, 2)

    def test_rejects_3d(self):
        with pytest.raises(ContractError):
            as_matrix(np.ones((2, 2, 2)))
