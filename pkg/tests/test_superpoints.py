import math

import numpy as np
import pytest

from voxinst.autodiff import ShapeError, Tensor
from voxinst.pointcloud import PointCloud, voxelize
from voxinst.superpoints import (SuperpointPartition, broadcast_to_points,
                                 pool_to_superpoints, segment_superpoints)

from oracles import finite_diff_grad, grads_close, loop_broadcast, loop_pool


def grid_from(coords, colors=None, voxel_size=1.0):
    coords = np.asarray(coords, dtype=np.float64)
    colors = np.full_like(coords, 0.5) if colors is None else np.asarray(colors)
    pc = PointCloud(coords=coords, colors=colors, num_classes=2)
    return voxelize(pc, voxel_size)


def reference_felzenszwalb(coords, colors, voxel_size, k, threshold):
    """Step-by-step merge trace with python sets (independent of the
    library's union-find)."""
    m = len(coords)
    edges = set()
    for i in range(m):
        dists = sorted((math.dist(coords[i], coords[j]), j)
                       for j in range(m) if j != i)
        for _, j in dists[:k]:
            edges.add((min(i, j), max(i, j)))
    weighted = []
    for i, j in edges:
        w = (math.dist(coords[i], coords[j]) / voxel_size
             + math.dist(colors[i], colors[j]))
        weighted.append((w, i, j))
    weighted.sort()

    comps = {i: {i} for i in range(m)}
    owner = {i: i for i in range(m)}
    internal = {i: 0.0 for i in range(m)}
    for w, i, j in weighted:
        a, b = owner[i], owner[j]
        if a == b:
            continue
        if w <= min(internal[a] + threshold / len(comps[a]),
                    internal[b] + threshold / len(comps[b])):
            comps[a] |= comps[b]
            for v in comps[b]:
                owner[v] = a
            del comps[b]
            internal[a] = w
    return {frozenset(c) for c in comps.values()}


def partition_sets(part: SuperpointPartition):
    return {frozenset(map(int, g)) for g in part.superpoint_to_voxels}


class TestSegmentation:
    def test_two_far_clusters_stay_apart(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 0.3, size=(10, 3))
        b = rng.normal(0, 0.3, size=(10, 3)) + 50.0
        grid = grid_from(np.vstack([a, b]))
        part = segment_superpoints(grid, k=3, threshold=5.0)
        assert part.n_s == 2

    def test_infinite_threshold_merges_everything(self):
        rng = np.random.default_rng(1)
        grid = grid_from(rng.uniform(0, 10, size=(30, 3)))
        part = segment_superpoints(grid, k=4, threshold=np.inf)
        assert part.n_s == 1

    def test_twenty_voxel_fixture_matches_reference_trace(self):
        rng = np.random.default_rng(2)
        coords = rng.uniform(0, 4, size=(20, 3))
        colors = rng.uniform(0, 1, size=(20, 3))
        grid = grid_from(coords, colors, voxel_size=1.0)
        part = segment_superpoints(grid, k=4, threshold=3.0)
        expect = reference_felzenszwalb(grid.coords, grid.colors, 1.0, 4, 3.0)
        assert partition_sets(part) == expect

    @pytest.mark.parametrize("seed", range(5))
    def test_is_partition_and_stable(self, seed):
        rng = np.random.default_rng(seed)
        grid = grid_from(rng.uniform(0, 5, size=(40, 3)),
                         rng.uniform(0, 1, size=(40, 3)))
        p1 = segment_superpoints(grid, k=5, threshold=4.0)
        p2 = segment_superpoints(grid, k=5, threshold=4.0)
        np.testing.assert_array_equal(p1.voxel_to_superpoint, p2.voxel_to_superpoint)
        seen = np.concatenate(p1.superpoint_to_voxels)
        assert sorted(seen) == list(range(grid.m))
        assert all(len(g) > 0 for g in p1.superpoint_to_voxels)

    def test_single_voxel(self):
        part = segment_superpoints(grid_from([[0.0, 0.0, 0.0]]), k=8, threshold=1.0)
        assert part.n_s == 1

    def test_bad_args(self):
        grid = grid_from([[0.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            segment_superpoints(grid, k=0, threshold=1.0)


def manual_partition(groups, m):
    v2s = np.zeros(m, dtype=np.int64)
    for s, g in enumerate(groups):
        v2s[np.asarray(g)] = s
    return SuperpointPartition(voxel_to_superpoint=v2s,
                               superpoint_to_voxels=[np.asarray(g) for g in groups])


class TestPooling:
    def test_singleton_partition_is_identity(self):
        part = manual_partition([[0], [1], [2]], 3)
        x = np.random.default_rng(3).normal(size=(3, 4))
        out = pool_to_superpoints(Tensor.const(x), part)
        np.testing.assert_allclose(out.data, x)

    def test_two_row_mean(self):
        part = manual_partition([[0, 1]], 2)
        out = pool_to_superpoints(Tensor.const([[1.0], [3.0]]), part)
        np.testing.assert_allclose(out.data, [[2.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        groups = [[0, 3, 5], [1, 2], [4, 6, 7, 8], [9]]
        part = manual_partition(groups, 10)
        x = rng.normal(size=(10, 4))
        out = pool_to_superpoints(Tensor.const(x), part)
        np.testing.assert_allclose(out.data, loop_pool(x, [np.asarray(g) for g in groups]),
                                   atol=1e-12)

    def test_constant_preserved(self):
        part = manual_partition([[0, 1, 2], [3, 4]], 5)
        out = pool_to_superpoints(Tensor.const(np.full((5, 3), 2.5)), part)
        np.testing.assert_allclose(out.data, 2.5)

    def test_gradient_splits_evenly(self):
        part = manual_partition([[0, 1], [2]], 3)
        x = Tensor.param(np.random.default_rng(5).normal(size=(3, 2)))
        pool_to_superpoints(x, part).sum().backward()
        np.testing.assert_allclose(x.grad, [[0.5, 0.5], [0.5, 0.5], [1.0, 1.0]])

    def test_shape_mismatch(self):
        part = manual_partition([[0, 1]], 2)
        with pytest.raises(ShapeError):
            pool_to_superpoints(Tensor.const(np.zeros((3, 2))), part)


class TestBroadcast:
    def make(self):
        coords = np.array([[0.0, 0, 0], [0.0, 0.001, 0], [5.0, 0, 0], [5.0, 0.001, 0]])
        grid = grid_from(coords, voxel_size=1.0)
        part = segment_superpoints(grid, k=1, threshold=10.0)
        return grid, part

    def test_single_superpoint_everywhere_identical(self):
        grid, _ = self.make()
        part = manual_partition([list(range(grid.m))], grid.m)
        out = broadcast_to_points(Tensor.const([[1.0, 2.0]]), part, grid)
        assert out.shape == (4, 2)
        np.testing.assert_allclose(out.data, [[1.0, 2.0]] * 4)

    def test_pool_broadcast_round_trip_on_piecewise_constant(self):
        grid, part = self.make()
        values = np.array([[float(s)] * 2 for s in part.voxel_to_superpoint])
        pooled = pool_to_superpoints(Tensor.const(values), part)
        back = broadcast_to_points(pooled, part, grid)
        per_voxel = back.data[[pts[0] for pts in grid.voxel_to_points]]
        np.testing.assert_allclose(per_voxel, values)

    def test_matches_loop_oracle(self):
        grid, part = self.make()
        rng = np.random.default_rng(6)
        sp_vals = rng.normal(size=(part.n_s, 3))
        out = broadcast_to_points(Tensor.const(sp_vals), part, grid)
        expect = loop_broadcast(sp_vals, part.voxel_to_superpoint[grid.point_to_voxel])
        np.testing.assert_allclose(out.data, expect)

    def test_gradients(self):
        grid, part = self.make()
        x = Tensor.param(np.random.default_rng(7).normal(size=(part.n_s, 2)))

        def value():
            t = Tensor(x.data, requires_grad=True)
            return (broadcast_to_points(t, part, grid) * 3.0).sum().item()

        (broadcast_to_points(x, part, grid) * 3.0).sum().backward()
        assert grads_close(x.grad, finite_diff_grad(value, x.data))
