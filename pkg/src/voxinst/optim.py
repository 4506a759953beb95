"""AdamW with decoupled weight decay and a polynomial learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .nn import ParamStore


def poly_lr(base: float, step: int, total_steps: int, power: float) -> float:
    """base * (1 - step/total)^power, clamped at 0; monotone non-increasing."""
    frac = max(0.0, 1.0 - step / total_steps)
    return base * frac**power


class AdamW:
    """Decoupled-weight-decay Adam over a ParamStore.

    ``lr_groups`` maps group tags to base learning rates; parameters whose
    group is not listed use ``lr``. The schedule scales every group by the
    same polynomial factor.
    """

    def __init__(self, params: ParamStore, lr: float, total_steps: int,
                 lr_groups: dict[str, float] | None = None,
                 weight_decay: float = 0.05, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, power: float = 0.9):
        self.params = params
        self.lr = lr
        self.lr_groups = dict(lr_groups or {})
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.power = power
        self.total_steps = total_steps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def current_lr(self, group: str = "main") -> float:
        base = self.lr_groups.get(group, self.lr)
        return poly_lr(base, self.step_count, self.total_steps, self.power)

    def zero_grad(self) -> None:
        self.params.zero_grads()

    def step(self) -> None:
        b1, b2 = self.betas
        t = self.step_count + 1
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name} has no gradient; run backward() first")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            lr = self.current_lr(self.params.lr_group(name))
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.step_count += 1

    # -- checkpoint support -------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m__{name}"] = self.m[name].copy()
            out[f"v__{name}"] = self.v[name].copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.m:
            self.m[name] = np.asarray(arrays[f"m__{name}"], dtype=np.float64).copy()
            self.v[name] = np.asarray(arrays[f"v__{name}"], dtype=np.float64).copy()
            if self.m[name].shape != self.params[name].data.shape:
                raise ValueError(f"moment shape mismatch for {name}")
        self.step_count = int(step_count)
