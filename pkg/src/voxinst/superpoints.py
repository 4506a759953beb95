"""Graph-based voxel over-segmentation and resolution-changing pooling.

Superpoints come from the Felzenszwalb-Huttenlocher merge procedure on a
k-nearest-neighbor voxel graph. The graph construction is a stand-in for
datasets that ship precomputed segments; edge weights mix spatial and
color distance so segments rarely cross object boundaries on colored
scenes.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .autodiff import ShapeError, Tensor, gather_rows, sparse_matmul
from .pointcloud import VoxelGrid


@dataclasses.dataclass
class SuperpointPartition:
    """Partition of the m voxels into n_s non-empty superpoints."""

    voxel_to_superpoint: np.ndarray        # (m,)
    superpoint_to_voxels: list[np.ndarray]  # n_s sorted index arrays

    def __post_init__(self):
        self._pool = None
        self._pool_t = None

    @property
    def n_s(self) -> int:
        return len(self.superpoint_to_voxels)

    @property
    def m(self) -> int:
        return self.voxel_to_superpoint.shape[0]

    def pool_operator(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse (n_s, m) mean-pooling matrix and its transpose, cached."""
        if self._pool is None:
            rows = self.voxel_to_superpoint
            sizes = np.bincount(rows, minlength=self.n_s).astype(np.float64)
            vals = 1.0 / sizes[rows]
            mat = sp.csr_matrix((vals, (rows, np.arange(self.m))), shape=(self.n_s, self.m))
            self._pool = mat
            self._pool_t = mat.T.tocsr()
        return self._pool, self._pool_t


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)
        self.internal = np.zeros(n)  # max weight absorbed into the component

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int, w: float) -> None:
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        self.internal[a] = w


def _knn_edges(coords: np.ndarray, k: int) -> np.ndarray:
    """Undirected kNN edge list (i < j), deduplicated, ties by index."""
    m = coords.shape[0]
    k = min(k, m - 1)
    if k < 1:
        return np.empty((0, 2), dtype=np.int64)
    pairs = set()
    chunk = max(1, min(m, 2_000_000 // max(m, 1)))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        d2 = ((coords[lo:hi, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        # stable argsort keeps the lower index first on exact distance ties
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        for row, i in enumerate(range(lo, hi)):
            for j in nearest[row]:
                pairs.add((min(i, int(j)), max(i, int(j))))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.array(sorted(pairs), dtype=np.int64)
    return edges


def segment_superpoints(grid: VoxelGrid, k: int = 8, threshold: float = 6.0) -> SuperpointPartition:
    """Felzenszwalb-Huttenlocher merging on the kNN voxel graph.

    Edge weight = ||coord difference|| / voxel_size + ||color difference||.
    Two components merge while the joining weight does not exceed
    min(internal_a + threshold/|a|, internal_b + threshold/|b|). Edges are
    processed in (weight, i, j) order, so the result is deterministic.
    """
    if grid.m < 1:
        raise ValueError("empty voxel grid")
    if k < 1:
        raise ValueError(f"neighbor count must be >= 1, got {k}")
    m = grid.m
    edges = _knn_edges(grid.coords, k)

    uf = _UnionFind(m)
    if len(edges):
        dc = np.linalg.norm(grid.coords[edges[:, 0]] - grid.coords[edges[:, 1]], axis=1)
        df = np.linalg.norm(grid.colors[edges[:, 0]] - grid.colors[edges[:, 1]], axis=1)
        weights = dc / grid.voxel_size + df
        order = np.lexsort((edges[:, 1], edges[:, 0], weights))
        for e in order:
            i, j = edges[e]
            w = weights[e]
            a, b = uf.find(i), uf.find(j)
            if a == b:
                continue
            if w <= min(uf.internal[a] + threshold / uf.size[a],
                        uf.internal[b] + threshold / uf.size[b]):
                uf.union(a, b, w)

    roots = np.array([uf.find(i) for i in range(m)])
    # relabel components by first appearance so ids are order-canonical
    _, first_idx, labels = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first_idx))
    labels = rank[labels]
    groups = [np.flatnonzero(labels == s) for s in range(labels.max() + 1)]
    return SuperpointPartition(voxel_to_superpoint=labels, superpoint_to_voxels=groups)


def pool_to_superpoints(values: Tensor, part: SuperpointPartition) -> Tensor:
    """Mean of member-voxel rows per superpoint; gradient splits evenly."""
    if values.shape[0] != part.m:
        raise ShapeError(f"values have {values.shape[0]} rows, partition covers {part.m} voxels")
    mat, mat_t = part.pool_operator()
    return sparse_matmul(mat, mat_t, values)


def broadcast_to_points(sp_values: Tensor, part: SuperpointPartition, grid: VoxelGrid) -> Tensor:
    """Copy each superpoint row to all of its points via voxel membership."""
    if sp_values.shape[0] != part.n_s:
        raise ShapeError(f"values have {sp_values.shape[0]} rows, partition has {part.n_s} superpoints")
    if part.m != grid.m:
        raise ShapeError(f"partition covers {part.m} voxels, grid has {grid.m}")
    idx = part.voxel_to_superpoint[grid.point_to_voxel]
    return gather_rows(sp_values, idx)


def point_to_superpoint(part: SuperpointPartition, grid: VoxelGrid) -> np.ndarray:
    """(n,) superpoint index of every point."""
    return part.voxel_to_superpoint[grid.point_to_voxel]
