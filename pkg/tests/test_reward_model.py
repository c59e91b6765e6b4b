import numpy as np
import pytest

from opecv.core import InvalidInputError, LoggedDataset, SoftmaxLinearPolicy
from opecv.reward_model import RewardModel, expected_reward, fit_ridge, predict


def one_action(x, r):
    x = np.asarray(x, dtype=float).reshape(len(r), -1)
    return LoggedDataset(x, np.zeros(len(r), int), r, np.ones(len(r)), 1)


def manual_model(weights, intercept=True, fitted=None):
    w = np.asarray(weights, dtype=float)
    return RewardModel(w, 1e-3, np.ones(w.shape[0], bool) if fitted is None else fitted, 0.5,
                       intercept)


def ridge_objective(x, r, w, lam):
    res = r - x @ w
    return res @ res + lam * w @ w


class TestFit:
    def test_one_dimensional_closed_form(self):
        m = fit_ridge(one_action([1.0, 1.0], [1.0, 0.0]), 0.001, intercept=False)
        assert m.per_action_weights[0, 0] == pytest.approx(1 / 2.001, rel=1e-12)
        assert m.per_action_weights[0, 0] == pytest.approx(0.49975, abs=1e-5)

    def test_huge_penalty_shrinks_to_zero(self):
        rng = np.random.default_rng(0)
        ds = one_action(rng.normal(size=(20, 3)), rng.random(20))
        m = fit_ridge(ds, 1e12)
        assert np.abs(m.per_action_weights).max() < 1e-9
        np.testing.assert_allclose(m.raw_predictions(ds.contexts), 0.0, atol=1e-8)

    def test_duplicated_data_same_weights(self):
        rng = np.random.default_rng(1)
        x, r = rng.normal(size=(15, 3)), rng.random(15)
        m1 = fit_ridge(one_action(x, r), 1e-10)
        m2 = fit_ridge(one_action(np.vstack([x, x]), np.concatenate([r, r])), 1e-10)
        np.testing.assert_allclose(m1.per_action_weights, m2.per_action_weights, atol=1e-7)

    def test_unseen_action_uses_mean_reward(self):
        x = np.array([[0.0], [1.0], [2.0]])
        ds = LoggedDataset(x, [0, 0, 2], [0.0, 1.0, 1.0], [0.5, 0.5, 0.5], 3)
        m = fit_ridge(ds)
        assert list(m.fitted) == [True, False, True]
        assert predict(m, np.array([5.0]), 1) == pytest.approx(2 / 3)
        assert m.per_action_weights.shape == (3, 2)

    def test_regularization_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            fit_ridge(one_action([1.0], [1.0]), 0.0)

    def test_objective_beats_perturbations(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, d = rng.integers(2, 21), rng.integers(1, 5)
            x, r = rng.normal(size=(n, d)), rng.random(n)
            lam = 10 ** rng.uniform(-3, 1)
            w = fit_ridge(one_action(x, r), lam).per_action_weights[0]
            xa = np.hstack([x, np.ones((n, 1))])
            best = ridge_objective(xa, r, w, lam)
            for _ in range(100):
                pert = w + rng.normal(scale=10 ** rng.uniform(-4, 0), size=w.shape)
                assert ridge_objective(xa, r, pert, lam) >= best

    def test_gradient_vanishes(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n, d = rng.integers(2, 21), rng.integers(1, 5)
            x, r = rng.normal(size=(n, d)), rng.random(n)
            lam = 1e-3
            w = fit_ridge(one_action(x, r), lam).per_action_weights[0]
            xa = np.hstack([x, np.ones((n, 1))])
            grad = -2 * xa.T @ (r - xa @ w) + 2 * lam * w
            np.testing.assert_allclose(grad, 0.0, atol=1e-8)
            h = 1e-6
            fd = np.array([(ridge_objective(xa, r, w + h * e, lam)
                            - ridge_objective(xa, r, w - h * e, lam)) / (2 * h)
                           for e in np.eye(w.size)])
            np.testing.assert_allclose(fd, 0.0, atol=1e-6)


class TestPredict:
    def test_zero_model(self):
        assert predict(manual_model([[0.0, 0.0]]), np.array([3.0]), 0) == 0.0

    def test_affine(self):
        assert predict(manual_model([[1.0, 0.0]]), np.array([0.3]), 0) == pytest.approx(0.3)

    def test_clamp(self):
        m = manual_model([[1.0, 0.0]])
        assert predict(m, np.array([1.7]), 0) == 1.0
        assert predict(m, np.array([-0.4]), 0) == 0.0
        assert m.raw_predictions(np.array([[1.7]]))[0, 0] == pytest.approx(1.7)

    def test_action_out_of_range(self):
        with pytest.raises(InvalidInputError):
            predict(manual_model([[1.0, 0.0]]), np.array([0.3]), 1)

    def test_finite_for_finite_input(self):
        rng = np.random.default_rng(4)
        m = fit_ridge(LoggedDataset(rng.normal(size=(30, 2)), rng.integers(0, 3, 30),
                                    rng.random(30), np.full(30, 1 / 3), 3))
        assert np.all(np.isfinite(m.predict_all(rng.normal(scale=1e6, size=(10, 2)))))


class TestExpectedReward:
    def two_action_model(self):
        # predictions 0 and 1 at any x: intercept-only rows
        return manual_model([[0.0, 0.0], [0.0, 1.0]])

    def test_uniform(self):
        pol = SoftmaxLinearPolicy(np.zeros((2, 1)), 0.0)
        assert expected_reward(self.two_action_model(), pol, np.array([0.2])) == 0.5

    def test_deterministic(self):
        pol = SoftmaxLinearPolicy([[0.0], [1.0]], 1e4)
        assert expected_reward(self.two_action_model(), pol, np.array([1.0])) == pytest.approx(1.0)

    def test_dot_product(self):
        model = manual_model([[0.0, 0.4], [0.0, 0.8]])
        pol = SoftmaxLinearPolicy([[np.log(0.25)], [np.log(0.75)]], 1.0)
        assert expected_reward(model, pol, np.array([1.0])) == pytest.approx(0.7, abs=1e-12)

    def test_convex_combination(self):
        rng = np.random.default_rng(5)
        model = manual_model(rng.normal(size=(4, 3)))
        for _ in range(50):
            pol = SoftmaxLinearPolicy(rng.normal(size=(4, 2)), rng.normal() * 3)
            x = rng.normal(size=2)
            preds = [predict(model, x, a) for a in range(4)]
            v = expected_reward(model, pol, x)
            assert min(preds) - 1e-12 <= v <= max(preds) + 1e-12
