import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxinst.autodiff import (ShapeError, Tensor, concat_cols, concat_rows,
                              gather_rows, log_softmax_rows, matmul,
                              softmax_rows, take_per_row)

from oracles import finite_diff_grad, grads_close


def rand(shape, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(0, scale, size=shape)


class TestMatmul:
    def test_identity(self):
        x = rand((3, 3), 1)
        out = matmul(Tensor.const(np.eye(3)), Tensor.const(x))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_value(self):
        out = matmul(Tensor.const([[1.0, 2.0], [3.0, 4.0]]), Tensor.const([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_zeros(self):
        out = matmul(Tensor.const(np.zeros((2, 3))), Tensor.const(rand((3, 4), 2)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor.const(np.zeros((2, 3))), Tensor.const(np.zeros((2, 3))))

    def test_backward_accumulates_into_both(self):
        a = Tensor.param(rand((2, 3), 3))
        b = Tensor.param(rand((3, 4), 4))
        (a @ b).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 4)))


class TestSoftmax:
    def test_uniform_on_equal_rows(self):
        out = softmax_rows(Tensor.const(np.full((2, 5), 3.7)))
        np.testing.assert_allclose(out.data, 0.2, rtol=0, atol=1e-15)

    def test_analytic_value(self):
        out = softmax_rows(Tensor.const([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-15)

    def test_shift_invariance(self):
        x = rand((4, 6), 5)
        a = softmax_rows(Tensor.const(x)).data
        b = softmax_rows(Tensor.const(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-15)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one(self, seed):
        x = np.random.default_rng(seed).uniform(-50, 50, size=(3, 7))
        out = softmax_rows(Tensor.const(x)).data
        assert np.all(out >= 0) and np.all(out <= 1)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_neg_inf_gives_exact_zero(self):
        x = np.array([[1.0, -np.inf, 2.0]])
        out = softmax_rows(Tensor.const(x)).data
        assert out[0, 1] == 0.0
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-15)


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor.param(rand((3, 4), 6))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square_grad(self):
        x = Tensor.param(rand((5,), 7))
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_shared_node_accumulates_once(self):
        x = Tensor.param(np.array([2.0]))
        y = x * x  # used twice through one node
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            Tensor.param(rand((2, 2), 8)).backward()

    @pytest.mark.parametrize("op", ["relu", "exp", "log_abs", "sigmoid", "softplus",
                                    "sqrt_abs", "sin", "cos", "mean", "ln_like"])
    def test_elementwise_against_finite_differences(self, op):
        x = Tensor.param(rand((4, 3), hash(op) % 1000, scale=0.8) + 0.1)

        def build():
            t = Tensor(x.data, requires_grad=True)
            if op == "relu":
                out = t.relu()
            elif op == "exp":
                out = t.exp()
            elif op == "log_abs":
                out = (t * t + 0.5).log()
            elif op == "sigmoid":
                out = t.sigmoid()
            elif op == "softplus":
                out = t.softplus()
            elif op == "sqrt_abs":
                out = (t * t + 0.3).sqrt()
            elif op == "sin":
                out = t.sin()
            elif op == "cos":
                out = t.cos()
            elif op == "mean":
                out = t.mean(axis=1) * Tensor.const([1.0, -2.0, 0.5, 3.0])
            else:
                out = (t.exp() + 1.0).log() * t
            return t, (out * out).sum()

        t, loss = build()
        loss.backward()
        fd = finite_diff_grad(lambda: build()[1].item(), x.data)
        assert grads_close(t.grad, fd)

    def test_composite_graph_matches_finite_differences(self):
        w = Tensor.param(rand((3, 4), 11))
        x = rand((5, 3), 12)

        def loss_value():
            h = Tensor.const(x) @ w
            s = softmax_rows(h)
            return ((s * s).sum() + log_softmax_rows(h).mean()).item()

        h = Tensor.const(x) @ w
        loss = (softmax_rows(h) * softmax_rows(h)).sum() + log_softmax_rows(h).mean()
        loss.backward()
        fd = finite_diff_grad(loss_value, w.data)
        assert grads_close(w.grad, fd)


class TestIndexingOps:
    def test_gather_rows_scatter_grad(self):
        x = Tensor.param(rand((5, 3), 13))
        idx = np.array([0, 2, 2, 4])
        out = gather_rows(x, idx)
        np.testing.assert_array_equal(out.data, x.data[idx])
        (out * Tensor.const(np.ones((4, 3)))).sum().backward()
        expect = np.zeros((5, 3))
        np.add.at(expect, idx, 1.0)
        np.testing.assert_array_equal(x.grad, expect)

    def test_take_per_row(self):
        x = Tensor.param(rand((3, 4), 14))
        cols = np.array([1, 0, 3])
        out = take_per_row(x, cols)
        np.testing.assert_array_equal(out.data, x.data[np.arange(3), cols])
        out.sum().backward()
        assert x.grad.sum() == 3.0
        assert all(x.grad[i, c] == 1.0 for i, c in enumerate(cols))

    def test_concat_round_trip_grads(self):
        a = Tensor.param(rand((2, 3), 15))
        b = Tensor.param(rand((4, 3), 16))
        concat_rows([a, b]).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.ones((4, 3)))
        c = Tensor.param(rand((2, 2), 17))
        d = Tensor.param(rand((2, 5), 18))
        (concat_cols([c, d]) * 2.0).sum().backward()
        np.testing.assert_array_equal(c.grad, np.full((2, 2), 2.0))
        np.testing.assert_array_equal(d.grad, np.full((2, 5), 2.0))


class TestFiniteness:
    def test_forward_ops_finite_on_finite_inputs(self):
        rng = np.random.default_rng(19)
        x = Tensor.const(rng.normal(0, 10, size=(6, 6)))
        outs = [x.relu(), x.sigmoid(), x.softplus(), softmax_rows(x),
                log_softmax_rows(x), x.exp().log(), (x * x).sqrt(), x.sin(), x.cos()]
        for out in outs:
            assert np.isfinite(out.data).all()
