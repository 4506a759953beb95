"""Scene-aware query initialization guided by semantic voxel scores.

Foreground-confident voxels are selected by ratio, projected, and turned
into queries by a learned softmax-weighted sum, so every scene-aware query
is a convex combination of selected voxel features. Selection itself is
non-differentiable routing; gradients reach the projected features and
the weighting transform only.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .autodiff import ShapeError, Tensor, concat_rows, gather_rows, softmax_rows
from .nn import Linear, ParamStore


@dataclasses.dataclass
class SelectionResult:
    """Indices of the kept voxels, highest foreground confidence first."""

    idx: np.ndarray      # unique voxel indices, len ceil(alpha * m), min 1
    scores: np.ndarray   # matching confidences, non-increasing
    alpha: float


@dataclasses.dataclass
class QuerySet:
    """Stacked scene-aware rows (first) and learnable rows (last)."""

    tensor: Tensor
    num_scene: int
    num_learnable: int

    @property
    def q(self) -> int:
        return self.num_scene + self.num_learnable

    def provenance(self) -> list[str]:
        return ["scene"] * self.num_scene + ["learnable"] * self.num_learnable


def _stable_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def select_voxels(sem_logits: np.ndarray, alpha: float) -> SelectionResult:
    """Keep the ceil(alpha*m) voxels whose best foreground probability is
    highest; exact ties break toward the lower voxel index."""
    sem_logits = np.asarray(sem_logits, dtype=np.float64)
    m = sem_logits.shape[0]
    if m < 1:
        raise ValueError("select_voxels needs at least one voxel")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    probs = _stable_softmax(sem_logits)[:, :-1]
    best = probs.max(axis=1)
    count = max(1, math.ceil(alpha * m))
    order = np.lexsort((np.arange(m), -best))
    idx = order[:count]
    return SelectionResult(idx=idx, scores=best[idx], alpha=alpha)


class SceneQueryInitializer:
    """Projects selected voxel features and aggregates them into queries
    with learned, per-query softmax weights."""

    def __init__(self, store: ParamStore, d_in: int, d: int, num_queries: int,
                 rng: np.random.Generator):
        self.num_queries = num_queries
        self.proj = Linear(store, "query_init.proj", d_in, d, rng)
        self.psi = Linear(store, "query_init.psi", d, num_queries, rng)

    def weights(self, selected: Tensor) -> Tensor:
        """(num_queries, n_sel) voxel weights, rows summing to 1."""
        return softmax_rows(self.psi(selected).relu().t())

    def compute(self, features: Tensor, sel: SelectionResult) -> tuple[Tensor, Tensor]:
        if len(sel.idx) == 0:
            raise ValueError("empty voxel selection")
        selected = gather_rows(self.proj(features), sel.idx)
        w = self.weights(selected)
        return w @ selected, w

    def __call__(self, features: Tensor, sel: SelectionResult) -> Tensor:
        return self.compute(features, sel)[0]


def mix_queries(scene: Tensor | None, learnable: Tensor | None) -> QuerySet:
    """Row-concatenate scene-aware and learnable queries (either may be
    absent for the single-source ablations)."""
    parts = [t for t in (scene, learnable) if t is not None and t.shape[0] > 0]
    if not parts:
        raise ValueError("query set would be empty")
    widths = {t.shape[1] for t in parts}
    if len(widths) != 1:
        raise ShapeError(f"query widths disagree: {sorted(widths)}")
    n_scene = scene.shape[0] if scene is not None else 0
    n_learn = learnable.shape[0] if learnable is not None else 0
    tensor = parts[0] if len(parts) == 1 else concat_rows(parts)
    return QuerySet(tensor=tensor, num_scene=n_scene, num_learnable=n_learn)
