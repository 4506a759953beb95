"""Voxel feature extractor and the voxel-wise auxiliary heads.

The extractor is a deliberately small stand-in for a sparse-convolution
U-Net: a pointwise MLP on normalized coordinates and colors, followed by
rounds of mean aggregation over the lattice neighborhood interleaved with
residual pointwise MLPs. It keeps a local receptive field over voxels
while staying trainable on a CPU in minutes.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .autodiff import ShapeError, Tensor, gather_rows, log_softmax_rows, take_per_row
from .nn import MLP, ParamStore
from .pointcloud import VoxelGrid, normalize_unit_box

def _offsets(max_l1: int) -> np.ndarray:
    cells = np.array(list(np.ndindex(3, 3, 3)), dtype=np.int64) - 1
    l1 = np.abs(cells).sum(axis=1)
    return cells[(l1 >= 1) & (l1 <= max_l1)]


# 6 = faces, 18 = faces + edges, 26 = full cube shell
_OFFSETS = {6: _offsets(1), 18: _offsets(2), 26: _offsets(3)}


def neighborhood_mean_operator(grid: VoxelGrid, connectivity: int = 26) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse (m, m) operator averaging each voxel with its occupied
    lattice neighbors (closed neighborhood, so isolated voxels pass through)."""
    if connectivity not in _OFFSETS:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    m = grid.m
    lookup = {tuple(k): i for i, k in enumerate(grid.grid_keys)}
    rows, cols = [], []
    for i, key in enumerate(grid.grid_keys):
        rows.append(i)
        cols.append(i)
        for off in _OFFSETS[connectivity]:
            j = lookup.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if j is not None:
                rows.append(i)
                cols.append(j)
    rows = np.asarray(rows)
    counts = np.bincount(rows, minlength=m).astype(np.float64)
    vals = 1.0 / counts[rows]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    return mat, mat.T.tocsr()


class FeatureExtractor:
    """Pointwise MLP + K rounds of neighborhood mean aggregation."""

    def __init__(self, store: ParamStore, d_out: int, rounds: int,
                 rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or d_out
        self.rounds = rounds
        self.input_mlp = MLP(store, "backbone.input", [6, hidden, d_out], rng)
        self.round_mlps = [
            MLP(store, f"backbone.round{k}", [d_out, hidden, d_out], rng)
            for k in range(rounds)
        ]

    def __call__(self, grid: VoxelGrid, nbr_op: tuple[sp.csr_matrix, sp.csr_matrix]) -> Tensor:
        lo, hi = grid.bbox()
        x = np.concatenate([normalize_unit_box(grid.coords, lo, hi), grid.colors], axis=1)
        h = self.input_mlp(Tensor.const(x))
        mat, mat_t = nbr_op
        for mlp in self.round_mlps:
            agg = Tensor.from_op(np.asarray(mat @ h.data), [(h, lambda g: np.asarray(mat_t @ g))])
            h = h + mlp(agg)
        return h


class SemanticHead:
    """Per-voxel class logits over c foreground classes plus background."""

    def __init__(self, store: ParamStore, d_in: int, num_classes: int, rng: np.random.Generator):
        self.mlp = MLP(store, "sem_head", [d_in, d_in, num_classes + 1], rng, lr_group="voxel_heads")

    def __call__(self, features: Tensor) -> Tensor:
        return self.mlp(features)


class GeometricHead:
    """Per-voxel offset toward the instance center (or absolute center in
    coordinate-regression mode)."""

    def __init__(self, store: ParamStore, d_in: int, rng: np.random.Generator):
        self.mlp = MLP(store, "geo_head", [d_in, d_in, 3], rng, lr_group="voxel_heads")

    def __call__(self, features: Tensor) -> Tensor:
        return self.mlp(features)


def semantic_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of voxel class predictions against 1-based labels."""
    labels = np.asarray(labels, dtype=np.int64)
    width = logits.shape[1]
    if labels.min() < 1 or labels.max() > width:
        raise ValueError(f"labels must lie in 1..{width}, got range "
                         f"[{labels.min()}, {labels.max()}]")
    picked = take_per_row(log_softmax_rows(logits), labels - 1)
    return -picked.mean()


def geometric_loss(delta: Tensor, voxel_coords: np.ndarray, gt_centers: np.ndarray,
                   valid: np.ndarray) -> Tensor:
    """Mean L1 distance between predicted offsets and center offsets, over
    voxels that belong to an instance; exactly 0 when none do."""
    if delta.shape != voxel_coords.shape or gt_centers.shape != voxel_coords.shape:
        raise ShapeError(f"geometric_loss shapes disagree: {delta.shape} vs "
                         f"{voxel_coords.shape} vs {gt_centers.shape}")
    idx = np.flatnonzero(valid)
    if len(idx) == 0:
        return Tensor.const(0.0)
    target = gt_centers[idx] - voxel_coords[idx]
    diff = gather_rows(delta, idx) - Tensor.const(target)
    return diff.abs().sum() * (1.0 / len(idx))


def coordinate_regression_loss(pred_centers: Tensor, gt_centers: np.ndarray,
                               valid: np.ndarray) -> Tensor:
    """L1 on absolute centers (ablation alternative to offset estimation)."""
    idx = np.flatnonzero(valid)
    if len(idx) == 0:
        return Tensor.const(0.0)
    diff = gather_rows(pred_centers, idx) - Tensor.const(gt_centers[idx])
    return diff.abs().sum() * (1.0 / len(idx))


@dataclasses.dataclass
class GeometricBias:
    delta: Tensor      # (m, 3) predicted offsets
    refined: Tensor    # (m, 3) voxel coords + offsets


def refine_coords(grid: VoxelGrid, delta: Tensor) -> GeometricBias:
    """Shift voxel coordinates by the predicted offsets; the raw
    coordinates are data, so the gradient reaches only the offsets."""
    if delta.shape != grid.coords.shape:
        raise ShapeError(f"delta shape {delta.shape} != coords {grid.coords.shape}")
    return GeometricBias(delta=delta, refined=Tensor.const(grid.coords) + delta)
