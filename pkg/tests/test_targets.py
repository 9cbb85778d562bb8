"""Tests for the log-density target zoo."""

import math
import threading

import numpy as np
import pytest

from pathfinder import (
    BadParamsError,
    DimensionMismatchError,
    NonFiniteError,
    UnknownTargetError,
    make_target,
)
from pathfinder.targets import TARGET_NAMES, CounterView

from oracles import fd_gradient

LOG_2PI = math.log(2 * math.pi)


def random_points(target, count, rng):
    pts = rng.normal(0.0, 1.5, (count, target.dim))
    if target.name.startswith("neal_funnel"):
        pts[:, 0] = rng.normal(0.0, 1.5, count)
    return pts


def all_targets():
    rng = np.random.default_rng(99)
    cov = np.diag(rng.uniform(0.5, 2.0, 4))
    cov[0, 1] = cov[1, 0] = 0.3
    return [
        make_target("std_normal", dim=3),
        make_target("mvn", mu=[1.0, -0.5, 0.25, 0.0], cov=cov.tolist()),
        make_target("neal_funnel", dim=5),
        make_target("eight_schools_centered"),
        make_target("eight_schools_noncentered"),
        make_target("logistic_regression", n=20, p=3, data_seed=1),
    ]


class TestStdNormal:
    def test_origin_value(self):
        t = make_target("std_normal", dim=2)
        logp, grad = t.logp_grad(np.zeros(2))
        assert logp == pytest.approx(-LOG_2PI, abs=1e-14)
        np.testing.assert_array_equal(grad, np.zeros(2))

    def test_univariate_at_three(self):
        t = make_target("std_normal", dim=1)
        logp, grad = t.logp_grad(np.array([3.0]))
        assert logp == pytest.approx(-4.5 - 0.5 * LOG_2PI, abs=1e-14)
        assert grad[0] == pytest.approx(-3.0)


class TestNealFunnel:
    def test_origin_matches_hand_evaluation(self):
        # normal(0 | 0, 3) * normal(0 | 0, exp(0)) evaluated term by term
        t = make_target("neal_funnel", dim=2)
        logp, grad = t.logp_grad(np.zeros(2))
        expected = (-0.5 * LOG_2PI - math.log(3.0)) + (-0.5 * LOG_2PI)
        assert logp == pytest.approx(expected, abs=1e-14)
        assert grad[0] == pytest.approx(-0.5)  # half the scale-Jacobian of one beta term
        assert grad[1] == 0.0

    def test_hundred_dimensional_structure(self):
        t = make_target("neal_funnel", dim=100)
        assert t.dim == 100
        # with 99 beta terms, the tau gradient at the origin is -99/2
        _, grad = t.logp_grad(np.zeros(100))
        assert grad[0] == pytest.approx(-49.5)

    def test_overflow_is_reported(self):
        t = make_target("neal_funnel", dim=2)
        with pytest.raises(NonFiniteError):
            t.logp_grad(np.array([-800.0, 1.0]))


class TestMvn:
    def test_identity_matches_std_normal(self):
        t_mvn = make_target("mvn", mu=[0.0, 0.0], cov=np.eye(2).tolist())
        t_std = make_target("std_normal", dim=2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(0, 2, 2)
            lp1, g1 = t_mvn.logp_grad(x)
            lp2, g2 = t_std.logp_grad(x)
            assert lp1 == pytest.approx(lp2, abs=1e-12)
            np.testing.assert_allclose(g1, g2, atol=1e-12)

    def test_matches_dense_reference_formula(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((4, 4))
        cov = A @ A.T + 4.0 * np.eye(4)
        mu = rng.standard_normal(4)
        t = make_target("mvn", mu=mu.tolist(), cov=cov.tolist())
        for _ in range(25):
            x = rng.normal(0, 2, 4)
            diff = x - mu
            expected = -0.5 * (
                diff @ np.linalg.solve(cov, diff)
                + np.log(np.linalg.det(cov))
                + 4 * LOG_2PI
            )
            assert t.logp(x) == pytest.approx(expected, abs=1e-10)

    def test_non_spd_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("mvn", mu=[0.0, 0.0], cov=[[1.0, 2.0], [2.0, 1.0]])

    def test_asymmetric_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("mvn", mu=[0.0, 0.0], cov=[[1.0, 0.5], [0.1, 1.0]])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("mvn", mu=[0.0, 0.0, 0.0], cov=np.eye(2).tolist())


class TestLogisticRegression:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((20, 3))
        beta_true = rng.standard_normal(3)
        y = (rng.random(20) < 1 / (1 + np.exp(-X @ beta_true))).astype(float)
        t = make_target("logistic_regression", X=X.tolist(), y=y.tolist())
        for _ in range(10):
            beta = rng.normal(0, 1.5, 3)
            _, grad = t.logp_grad(beta)
            fd = fd_gradient(t, beta)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_bad_labels_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("logistic_regression", X=[[1.0], [2.0]], y=[0.0, 2.0])

    def test_partial_data_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("logistic_regression", X=[[1.0], [2.0]])

    def test_dim_conflict_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("logistic_regression", X=[[1.0, 0.0]], y=[1.0], dim=3)

    def test_synthesized_dataset_is_reproducible(self):
        a = make_target("logistic_regression", n=15, p=2, data_seed=4)
        b = make_target("logistic_regression", n=15, p=2, data_seed=4)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)


class TestRegistry:
    def test_unknown_target(self):
        with pytest.raises(UnknownTargetError, match="nosuch"):
            make_target("nosuch")

    def test_unknown_params_rejected(self):
        with pytest.raises(BadParamsError):
            make_target("std_normal", dim=2, bogus=1)

    def test_all_names_constructible(self):
        for name in TARGET_NAMES:
            kwargs = {"dim": 4} if name in ("std_normal", "mvn", "neal_funnel") else {}
            assert make_target(name, **kwargs).dim >= 1


class TestGradients:
    @pytest.mark.parametrize("target", all_targets(), ids=lambda t: t.name)
    def test_gradients_match_finite_differences(self, target):
        rng = np.random.default_rng(42)
        for point in random_points(target, 25, rng):
            _, grad = target.logp_grad(point)
            fd = fd_gradient(target, point)
            err = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
            assert err.max() < 1e-4, f"{target.name}: rel err {err.max():.2e} at {point}"

    @pytest.mark.parametrize("target", all_targets(), ids=lambda t: t.name)
    def test_batch_matches_scalar(self, target):
        rng = np.random.default_rng(3)
        pts = random_points(target, 30, rng)
        batch = target.logp_many(pts)
        single = np.array([target.logp(p) for p in pts])
        np.testing.assert_allclose(batch, single, atol=1e-11, rtol=1e-12)


class TestCountersAndChecks:
    def test_counters_track_evaluations(self):
        t = make_target("std_normal", dim=2)
        x = np.zeros(2)
        for _ in range(5):
            t.logp_grad(x)
        assert t.eval_count_logp == 5 and t.eval_count_grad == 5
        t.logp(x)
        assert t.eval_count_logp == 6 and t.eval_count_grad == 5
        t.logp_many(np.zeros((7, 2)))
        assert t.eval_count_logp == 13 and t.eval_count_grad == 5

    def test_counter_view_tallies_and_forwards(self):
        t = make_target("std_normal", dim=2)
        view = CounterView(t)
        view.logp_grad(np.zeros(2))
        view.logp_many(np.zeros((3, 2)))
        assert (view.n_logp, view.n_grad) == (4, 1)
        assert (t.eval_count_logp, t.eval_count_grad) == (4, 1)

    def test_concurrent_counting_is_exact(self):
        t = make_target("std_normal", dim=2)
        x = np.ones(2)

        def worker():
            for _ in range(200):
                t.logp_grad(x)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert t.eval_count_logp == 1600 and t.eval_count_grad == 1600

    def test_dimension_mismatch(self):
        t = make_target("std_normal", dim=3)
        with pytest.raises(DimensionMismatchError):
            t.logp_grad(np.zeros(2))

    def test_non_finite_input(self):
        t = make_target("std_normal", dim=2)
        with pytest.raises(NonFiniteError):
            t.logp_grad(np.array([np.nan, 0.0]))
