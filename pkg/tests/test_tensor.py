import numpy as np
import pytest

from speechclf.nn import Tensor, NonFiniteValue, ShapeMismatch
from speechclf.nn import tensor as T

from conftest import max_grad_error


def _param(rng, *shape):
    return Tensor(rng.normal(0, 1.0, shape), requires_grad=True)


class TestElementwiseGrads:
    def test_add_mul_broadcast(self, rng):
        a = _param(rng, 4, 5)
        b = _param(rng, 5)          # broadcast over rows
        w = rng.normal(0, 1, (4, 5))
        err = max_grad_error(
            lambda: (T.mul(T.add(a, b), Tensor(w))).sum(), [a, b], rng)
        assert err < 1e-6

    def test_div_pow(self, rng):
        a = _param(rng, 3, 4)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        err = max_grad_error(
            lambda: T.div(T.power(a, 2.0), b).sum(), [a, b], rng)
        assert err < 1e-6

    def test_exp_log(self, rng):
        a = Tensor(rng.uniform(0.5, 2.0, (4, 3)), requires_grad=True)
        err = max_grad_error(lambda: T.log(T.exp(a) + 1.0).sum(), [a], rng)
        assert err < 1e-6

    def test_sum_axis_keepdims(self, rng):
        a = _param(rng, 3, 4, 2)
        w = rng.normal(0, 1, (3, 1, 2))
        err = max_grad_error(
            lambda: T.mul(a.sum(axis=1, keepdims=True), Tensor(w)).sum(),
            [a], rng)
        assert err < 1e-6

    def test_mean(self, rng):
        a = _param(rng, 6)
        err = max_grad_error(lambda: a.mean() * 3.0, [a], rng)
        assert err < 1e-6


class TestMatmulGrads:
    def test_2d(self, rng):
        a = _param(rng, 5, 7)
        b = _param(rng, 7, 3)
        w = rng.normal(0, 1, (5, 3))
        err = max_grad_error(lambda: T.mul(a @ b, Tensor(w)).sum(),
                             [a, b], rng)
        assert err < 1e-6

    def test_batched(self, rng):
        a = _param(rng, 2, 3, 4, 5)
        b = _param(rng, 2, 3, 5, 4)
        err = max_grad_error(lambda: (a @ b).sum(), [a, b], rng)
        assert err < 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            _param(rng, 2, 3) @ _param(rng, 4, 2)


class TestStructuralOps:
    def test_reshape_transpose(self, rng):
        a = _param(rng, 4, 6)
        w = rng.normal(0, 1, (3, 2, 4))
        err = max_grad_error(
            lambda: T.mul(T.transpose(T.reshape(a, (4, 3, 2)), (1, 2, 0)),
                          Tensor(w)).sum(),
            [a], rng)
        assert err < 1e-6

    def test_take_scatter_adds(self, rng):
        # Repeated ids must accumulate gradient, not overwrite it.
        w = _param(rng, 5, 3)
        ids = np.array([1, 1, 4])
        out = T.embedding(w, ids)
        out.sum().backward()
        assert w.grad[1].sum() == pytest.approx(6.0)
        assert w.grad[4].sum() == pytest.approx(3.0)
        assert w.grad[0].sum() == 0.0

    def test_embedding_range_check(self, rng):
        with pytest.raises(ShapeMismatch):
            T.embedding(_param(rng, 5, 3), np.array([5]))

    def test_backward_needs_scalar(self, rng):
        with pytest.raises(ShapeMismatch):
            _param(rng, 2, 2).backward()

    def test_grad_accumulates_through_shared_node(self, rng):
        a = _param(rng, 3)
        out = T.add(T.mul(a, a), a)  # a appears twice
        err = max_grad_error(lambda: T.add(T.mul(a, a), a).sum(), [a], rng)
        assert err < 1e-6
        out.sum().backward()


class TestNonlinearGrads:
    def test_relu_away_from_kink(self, rng):
        a = Tensor(np.where(np.abs(z := rng.normal(0, 1, (5, 7))) < 0.1,
                            z + 0.3, z), requires_grad=True)
        err = max_grad_error(lambda: T.relu(a).sum(), [a], rng)
        assert err < 1e-6

    def test_tanh_gelu(self, rng):
        a = _param(rng, 5, 7)
        err = max_grad_error(lambda: T.tanh(a).sum(), [a], rng)
        assert err < 1e-6
        err = max_grad_error(lambda: T.gelu(a).sum(), [a], rng)
        assert err < 1e-6

    def test_softmax_grad(self, rng):
        a = _param(rng, 5, 7)
        w = rng.normal(0, 1, (5, 7))
        err = max_grad_error(lambda: T.mul(T.softmax(a), Tensor(w)).sum(),
                             [a], rng)
        assert err < 1e-6

    def test_softmax_rows_sum_to_one(self, rng):
        out = T.softmax(Tensor(rng.normal(0, 10, (20, 7)))).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert ((out > 0) & (out < 1)).all()

    def test_nonfinite_input_trips(self):
        bad = Tensor(np.array([1.0, np.inf]))
        with pytest.raises(NonFiniteValue):
            T.softmax(bad)
        with pytest.raises(NonFiniteValue):
            T.relu(Tensor(np.array([np.nan])))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.cross_entropy(Tensor(np.zeros((4, 3))), np.array([0, 1, 2, 0]))
        assert loss.item() == pytest.approx(np.log(3), abs=1e-12)

    def test_saturated_correct(self):
        logits = Tensor(np.array([[30.0, -30.0, -30.0]]))
        assert T.cross_entropy(logits, np.array([0])).item() < 1e-12

    def test_matches_scalar_oracle(self, rng):
        # Independent per-sample -log softmax probability, summed by hand.
        logits = rng.normal(0, 3, (16, 3))
        labels = rng.integers(0, 3, 16)
        expected = 0.0
        for row, label in zip(logits, labels):
            p = np.exp(row) / np.exp(row).sum()
            expected += -np.log(p[label])
        expected /= len(labels)
        got = T.cross_entropy(Tensor(logits), labels).item()
        assert got == pytest.approx(expected, abs=1e-12)

    def test_gradient(self, rng):
        logits = Tensor(rng.normal(0, 2, (6, 3)), requires_grad=True)
        labels = rng.integers(0, 3, 6)
        err = max_grad_error(lambda: T.cross_entropy(logits, labels),
                             [logits], rng)
        assert err < 1e-6

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            T.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0]))
        with pytest.raises(ShapeMismatch):
            T.cross_entropy(Tensor(np.zeros(3)), np.array([0]))
        with pytest.raises(ShapeMismatch):
            T.cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))
