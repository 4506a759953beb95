"""Neural building blocks composed from autodiff tensors.

A ``ParamStore`` owns every trainable tensor under a hierarchical name
(``head.layer.w``) and an lr-group tag, so parameter count and iteration
order are pure functions of the model configuration.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ShapeError, Tensor, concat_cols, slice_cols, softmax_rows


class ParamStore:
    """Ordered registry of named trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._lr_group: dict[str, str] = {}

    def add(self, name: str, data: np.ndarray, lr_group: str = "main") -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor.param(np.asarray(data, dtype=np.float64))
        self._params[name] = t
        self._lr_group[name] = lr_group
        return t

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params.keys())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def lr_group(self, name: str) -> str:
        return self._lr_group[name]

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: shape {a.shape} != {p.data.shape}")
            p.data = a.copy()


class Linear:
    """Affine map, uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init."""

    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, lr_group: str = "main"):
        bound = 1.0 / math.sqrt(fan_in)
        self.w = store.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)), lr_group)
        self.b = store.add(f"{name}.b", rng.uniform(-bound, bound, size=(fan_out,)), lr_group)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class MLP:
    """Linear stack with ReLU between layers (none after the last)."""

    def __init__(self, store: ParamStore, name: str, widths: list[int],
                 rng: np.random.Generator, lr_group: str = "main"):
        self.layers = [
            Linear(store, f"{name}.{i}", widths[i], widths[i + 1], rng, lr_group)
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x


class LayerNorm:
    """Row-wise layer normalization with learned affine."""

    eps = 1e-5

    def __init__(self, store: ParamStore, name: str, dim: int, lr_group: str = "main"):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim), lr_group)
        self.beta = store.add(f"{name}.beta", np.zeros(dim), lr_group)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        xn = xc / (var + self.eps).sqrt()
        return xn * self.gamma + self.beta


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    An optional additive mask of shape (num_queries, num_keys) is added to
    the logits of every head before the softmax, so a -inf entry zeroes the
    corresponding attention weight exactly. Each query row must keep at
    least one finite mask entry.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator, lr_group: str = "main"):
        if dim % heads != 0:
            raise ShapeError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.dhead = dim // heads
        self.wq = Linear(store, f"{name}.q", dim, dim, rng, lr_group)
        self.wk = Linear(store, f"{name}.k", dim, dim, rng, lr_group)
        self.wv = Linear(store, f"{name}.v", dim, dim, rng, lr_group)
        self.wo = Linear(store, f"{name}.out", dim, dim, rng, lr_group)

    def __call__(self, queries: Tensor, keys: Tensor, values: Tensor,
                 additive_mask: Tensor | None = None, return_weights: bool = False):
        if queries.shape[1] != self.dim or keys.shape[1] != self.dim or values.shape[1] != self.dim:
            raise ShapeError(
                f"attention width mismatch: q{queries.shape} k{keys.shape} "
                f"v{values.shape}, expected dim {self.dim}")
        if keys.shape[0] != values.shape[0]:
            raise ShapeError(f"keys {keys.shape} and values {values.shape} disagree on length")
        if additive_mask is not None and additive_mask.shape != (queries.shape[0], keys.shape[0]):
            raise ShapeError(
                f"mask shape {additive_mask.shape} != ({queries.shape[0]}, {keys.shape[0]})")

        q = self.wq(queries)
        k = self.wk(keys)
        v = self.wv(values)
        scale = 1.0 / math.sqrt(self.dhead)

        outs = []
        weights = []
        for h in range(self.heads):
            lo, hi = h * self.dhead, (h + 1) * self.dhead
            scores = matmul_t(slice_cols(q, lo, hi), slice_cols(k, lo, hi)) * scale
            if additive_mask is not None:
                scores = scores + additive_mask
            attn = softmax_rows(scores)
            outs.append(attn @ slice_cols(v, lo, hi))
            if return_weights:
                weights.append(attn.data.copy())
        out = self.wo(concat_cols(outs))
        if return_weights:
            return out, np.stack(weights)
        return out


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing an extra transpose node."""
    return a @ b.t()
