import numpy as np
import pytest

from voxinst.autodiff import ShapeError, Tensor
from voxinst.nn import MLP, LayerNorm, Linear, MultiHeadAttention, ParamStore

from oracles import attention_single_head, finite_diff_grad, grads_close


@pytest.fixture
def store():
    return ParamStore()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestParamStore:
    def test_deterministic_order_and_count(self, rng):
        def build():
            s = ParamStore()
            Linear(s, "a", 4, 3, np.random.default_rng(0))
            LayerNorm(s, "n", 3)
            Linear(s, "b", 3, 2, np.random.default_rng(1))
            return s

        s1, s2 = build(), build()
        assert s1.names() == s2.names()
        assert s1.count() == s2.count() == (4 * 3 + 3) + 6 + (3 * 2 + 2)
        for (n1, p1), (_, p2) in zip(s1.items(), s2.items()):
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_duplicate_name_rejected(self, store, rng):
        Linear(store, "x", 2, 2, rng)
        with pytest.raises(ValueError, match="duplicate"):
            Linear(store, "x", 2, 2, rng)

    def test_load_round_trip(self, store, rng):
        Linear(store, "x", 3, 3, rng)
        saved = store.state_arrays()
        store["x.w"].data[:] = 0.0
        store.load_arrays(saved)
        np.testing.assert_array_equal(store["x.w"].data, saved["x.w"])

    def test_load_rejects_mismatch(self, store, rng):
        Linear(store, "x", 3, 3, rng)
        with pytest.raises(ValueError, match="mismatch"):
            store.load_arrays({"y.w": np.zeros(3)})


class TestLayerNorm:
    def test_rows_normalized(self, store, rng):
        ln = LayerNorm(store, "ln", 8)
        x = rng.normal(3.0, 2.0, size=(5, 8))
        out = ln(Tensor.const(x)).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-3)

    def test_gradients(self, store, rng):
        ln = LayerNorm(store, "ln", 4)
        x = Tensor.param(rng.normal(size=(3, 4)))

        def value():
            return (ln(Tensor(x.data, requires_grad=True)) * Tensor.const(w)).sum().item()

        w = rng.normal(size=(3, 4))
        loss = (ln(x) * Tensor.const(w)).sum()
        loss.backward()
        fd = finite_diff_grad(value, x.data)
        assert grads_close(x.grad, fd)
        fd_gamma = finite_diff_grad(value, ln.gamma.data)
        assert grads_close(ln.gamma.grad, fd_gamma)


class TestAttention:
    def test_masked_out_weight_exactly_zero(self, store, rng):
        mha = MultiHeadAttention(store, "att", 8, 2, rng)
        q = Tensor.const(rng.normal(size=(3, 8)))
        kv = Tensor.const(rng.normal(size=(5, 8)))
        mask = np.zeros((3, 5))
        mask[0, 2] = -np.inf
        mask[2, :3] = -np.inf
        _, weights = mha(q, kv, kv, Tensor.const(mask), return_weights=True)
        assert (weights[:, 0, 2] == 0.0).all()
        assert (weights[:, 2, :3] == 0.0).all()
        np.testing.assert_allclose(weights.sum(axis=2), 1.0, atol=1e-12)

    def test_single_key_returns_its_value(self, store, rng):
        mha = MultiHeadAttention(store, "att", 8, 2, rng)
        q = Tensor.const(rng.normal(size=(4, 8)))
        kv = Tensor.const(rng.normal(size=(1, 8)))
        out = mha(q, kv, kv)
        # every query attends to the only key with weight 1
        expect = (kv.data @ mha.wv.w.data + mha.wv.b.data) @ mha.wo.w.data + mha.wo.b.data
        np.testing.assert_allclose(out.data, np.repeat(expect, 4, axis=0), atol=1e-12)

    def test_single_head_matches_brute_force(self, store, rng):
        mha = MultiHeadAttention(store, "att", 4, 1, rng)
        q_in = rng.normal(size=(2, 4))
        kv_in = rng.normal(size=(3, 4))
        out = mha(Tensor.const(q_in), Tensor.const(kv_in), Tensor.const(kv_in))
        q = q_in @ mha.wq.w.data + mha.wq.b.data
        k = kv_in @ mha.wk.w.data + mha.wk.b.data
        v = kv_in @ mha.wv.w.data + mha.wv.b.data
        expect = attention_single_head(q, k, v) @ mha.wo.w.data + mha.wo.b.data
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_head_mismatch_rejected(self, store, rng):
        with pytest.raises(ShapeError):
            MultiHeadAttention(store, "bad", 6, 4, rng)

    def test_mask_shape_rejected(self, store, rng):
        mha = MultiHeadAttention(store, "att", 4, 2, rng)
        x = Tensor.const(rng.normal(size=(2, 4)))
        with pytest.raises(ShapeError):
            mha(x, x, x, Tensor.const(np.zeros((2, 3))))

    def test_gradients_through_masked_attention(self, store, rng):
        mha = MultiHeadAttention(store, "att", 4, 2, rng)
        mask = np.zeros((2, 3))
        mask[0, 1] = -np.inf
        q_p = Tensor.param(rng.normal(size=(2, 4)))
        kv = rng.normal(size=(3, 4))

        def value():
            t = Tensor(q_p.data, requires_grad=True)
            return mha(t, Tensor.const(kv), Tensor.const(kv), Tensor.const(mask)).sum().item()

        loss = mha(q_p, Tensor.const(kv), Tensor.const(kv), Tensor.const(mask)).sum()
        loss.backward()
        fd = finite_diff_grad(value, q_p.data)
        assert grads_close(q_p.grad, fd)


class TestMLP:
    def test_widths(self, store, rng):
        mlp = MLP(store, "mlp", [3, 7, 2], rng)
        out = mlp(Tensor.const(rng.normal(size=(5, 3))))
        assert out.shape == (5, 2)

    def test_relu_between_not_after(self, store, rng):
        mlp = MLP(store, "mlp", [2, 4, 3], rng)
        out = mlp(Tensor.const(rng.normal(size=(50, 2))))
        assert (out.data < 0).any()  # final layer is affine, not rectified
