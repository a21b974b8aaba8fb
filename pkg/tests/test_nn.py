import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from conftest import central_difference, relative_error
from hydalearn.errors import ContractError, DegenerateMetricError, DomainError, ShapeError
from hydalearn.nn import (
    Loss,
    Metric,
    Mlp,
    bce_with_logits,
    loss_value_and_grad,
    metric_value,
    roc_auc,
    xavier_init,
)
from hydalearn.tensor_core import Rng


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, q in itertools.product(pos, neg):
        total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def _loss_of_params(mlp, x, target, loss):
    def f(theta):
        saved = mlp.params.copy()
        mlp.set_params(theta)
        value = loss_value_and_grad(loss, mlp.predict(x), target)[0]
        mlp.set_params(saved)
        return value
    return f


@pytest.mark.parametrize("hidden_act", ["tanh", "sigmoid", "identity"])
def test_mse_gradient_matches_finite_differences(hidden_act):
    rng = Rng(4)
    mlp = Mlp.initialized([4, 5, 3, 2], [hidden_act, hidden_act, "identity"], rng)
    mlp.add_(rng.child("bias").standard_normal(mlp.n_params), 0.1)
    x = rng.child("x").standard_normal((7, 4))
    t = rng.child("t").standard_normal((7, 2))
    pred, cache = mlp.forward(x)
    _, upstream = loss_value_and_grad(Loss("mse"), pred, t)
    analytic, _ = mlp.backward(cache, upstream)
    numeric = central_difference(_loss_of_params(mlp, x, t, Loss("mse")), mlp.params)
    assert relative_error(analytic, numeric).max() < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = Rng(8)
    mlp = Mlp.initialized([3, 4, 2], ["tanh", "identity"], rng)
    x = rng.child("x").standard_normal((1, 3))
    t = np.zeros((1, 2))
    pred, cache = mlp.forward(x)
    _, up = loss_value_and_grad(Loss("mse"), pred, t)
    _, gx = mlp.backward(cache, up)

    def f(xx):
        return loss_value_and_grad(Loss("mse"), mlp.predict(xx.reshape(1, 3)), t)[0]

    numeric = central_difference(f, x.ravel())
    assert relative_error(gx.ravel(), numeric).max() < 1e-4


def test_bce_gradient_matches_finite_differences():
    rng = Rng(6)
    mlp = Mlp.initialized([4, 6, 3], ["tanh", "sigmoid"], rng)
    x = rng.child("x").standard_normal((9, 4))
    t = (rng.child("t").uniform((9, 3)) < 0.5).astype(float)
    pred, cache = mlp.forward(x)
    _, upstream = loss_value_and_grad(Loss("bce"), pred, t)
    analytic, _ = mlp.backward(cache, upstream)
    numeric = central_difference(_loss_of_params(mlp, x, t, Loss("bce")), mlp.params)
    assert relative_error(analytic, numeric).max() < 1e-4


def test_fused_bce_matches_unfused_route():
    rng = Rng(1)
    mlp = Mlp.initialized([3, 4, 2], ["tanh", "sigmoid"], rng)
    x = rng.child("x").standard_normal((5, 3))
    t = (rng.child("t").uniform((5, 2)) < 0.5).astype(float)
    pred, cache = mlp.forward(x)
    v1, g1 = loss_value_and_grad(Loss("bce"), pred, t)
    g1_params, _ = mlp.backward(cache, g1)
    v2, g2 = bce_with_logits(cache.pre[-1], t)
    g2_params, _ = mlp.backward(cache, g2, preactivation=True)
    assert v1 == pytest.approx(v2, rel=1e-12)
    np.testing.assert_allclose(g1_params, g2_params, rtol=1e-9, atol=1e-14)


def test_stale_cache_is_rejected():
    mlp = Mlp.initialized([2, 3, 1], ["tanh", "identity"], Rng(0))
    pred, cache = mlp.forward(np.ones((2, 2)))
    mlp.add_(np.ones(mlp.n_params), 0.1)
    with pytest.raises(ContractError):
        mlp.backward(cache, np.ones_like(pred))
    other = Mlp.initialized([2, 3, 1], ["tanh", "identity"], Rng(0))
    with pytest.raises(ContractError):
        other.backward(mlp.forward(np.ones((2, 2)))[1], np.ones_like(pred))


def test_forward_rows_independent():
    mlp = Mlp.initialized([3, 4, 2], ["relu", "identity"], Rng(2))
    x = Rng(3).standard_normal((6, 3))
    full = mlp.predict(x)
    for i in range(6):
        np.testing.assert_allclose(mlp.predict(x[i]), full[i:i + 1], rtol=1e-14)


def test_shape_checks():
    with pytest.raises(ShapeError):
        Mlp([3], [])
    with pytest.raises(ShapeError):
        Mlp([3, 2], ["tanh", "tanh"])
    with pytest.raises(DomainError):
        Mlp([3, 2], ["softmax"])
    mlp = Mlp([3, 2], ["identity"])
    with pytest.raises(ShapeError):
        mlp.predict(np.ones((1, 4)))
    with pytest.raises(ShapeError):
        mlp.set_params(np.ones(3))


def test_flat_layout_is_weights_then_bias():
    mlp = Mlp([2, 3], ["identity"], params=np.arange(9.0))
    np.testing.assert_array_equal(mlp.layers[0].weights, [[0, 1, 2], [3, 4, 5]])
    np.testing.assert_array_equal(mlp.layers[0].bias, [6, 7, 8])
    np.testing.assert_array_equal(mlp.predict([[1.0, 0.0]]), [[6, 8, 10]])


def test_xavier_bounds():
    w = xavier_init(Rng(0), (30, 20))
    bound = np.sqrt(6 / 50)
    assert w.min() >= -bound and w.max() < bound
    assert abs(w.var() - bound ** 2 / 3) < 0.1 * bound ** 2


class TestLosses:
    def test_mse_value(self):
        v, g = loss_value_and_grad(Loss("mse"), [[1.0, 2.0]], [[0.0, 0.0]])
        assert v == 2.5
        np.testing.assert_allclose(g, [[1.0, 2.0]])

    def test_bce_value(self):
        v, _ = loss_value_and_grad(Loss("bce"), [[0.8, 0.3]], [[1.0, 0.0]])
        assert v == pytest.approx(-(np.log(0.8) + np.log(0.7)) / 2, rel=1e-12)

    def test_bce_clamps(self):
        v, g = loss_value_and_grad(Loss("bce"), [[0.0, 1.0]], [[1.0, 0.0]])
        assert np.isfinite(v)
        assert v == pytest.approx(-np.log(1e-7), rel=1e-9)
        assert np.all(g == 0.0)

    def test_bce_with_logits_extreme(self):
        v, g = bce_with_logits([[800.0, -800.0]], [[1.0, 0.0]])
        assert v == 0.0
        np.testing.assert_allclose(g, [[0.0, 0.0]], atol=1e-300)

    @given(st.floats(-30, 30), st.sampled_from([0.0, 1.0]))
    def test_bce_with_logits_matches_probability_form(self, z, t):
        p = expit(z)
        if 1e-7 < p < 1 - 1e-7:
            v1, _ = bce_with_logits([[z]], [[t]])
            v2, _ = loss_value_and_grad(Loss("bce"), [[p]], [[t]])
            assert v1 == pytest.approx(v2, rel=1e-7, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_value_and_grad(Loss("mse"), np.ones((2, 2)), np.ones((2, 3)))
        with pytest.raises(DomainError):
            Loss("hinge")


class TestMetric:
    def test_orientation(self):
        assert Metric("auc").higher_is_better and Metric("auc").sign == 1.0
        assert Metric("mae").orientation == "lower_is_better" and Metric("mae").sign == -1.0
        assert Metric("mae").gain(0.4, 0.5) == pytest.approx(0.1)
        assert Metric("auc").gain(0.4, 0.5) == pytest.approx(-0.1)
        assert Metric("mse").worst() == np.inf and Metric("auc").worst() == -np.inf

    def test_regression_values(self):
        assert metric_value(Metric("mae"), [[1.0, -1.0]], [[0.0, 0.0]]) == 1.0
        assert metric_value(Metric("mse"), [[2.0, 0.0]], [[0.0, 0.0]]) == 2.0

    def test_auc_examples(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
        assert roc_auc([0.5, 0.5, 0.5], [0, 1, 1]) == 0.5
        assert roc_auc([1, 2, 3], [0, 0, 1]) == 1.0

    def test_auc_degenerate(self):
        with pytest.raises(DegenerateMetricError):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(DegenerateMetricError):
            roc_auc([0.1, 0.2], [0, 2])

    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=60))
    @settings(max_examples=150, deadline=None)
    def test_auc_equals_pairwise_oracle(self, pairs):
        scores = [s / 3.0 for s, _ in pairs]
        labels = [y for _, y in pairs]
        if len(set(labels)) < 2:
            return
        assert roc_auc(scores, labels) == pairwise_auc(scores, labels)

    @given(st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_auc_invariant_to_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=30)
        y = np.r_[0, 1, rng.integers(0, 2, size=28)]
        assert roc_auc(s, y) == roc_auc(np.exp(s), y)
