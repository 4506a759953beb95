"""Prediction-to-ground-truth assignment: cost matrix and Hungarian solver.

Assignment totals are computed with math.fsum (the exactly rounded sum),
so cost comparisons are consistent across summation orders; a brute-force
permutation oracle summing the same way must agree bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .decoder import LayerPrediction
from .pointcloud import PointCloud, VoxelGrid
from .superpoints import SuperpointPartition, point_to_superpoint


@dataclasses.dataclass
class GroundTruthInstance:
    """One labeled object at superpoint and point resolution."""

    class_id: int              # 1..c
    sp_mask: np.ndarray        # (n_s,) bool, majority point membership
    point_mask: np.ndarray     # (n,) bool

    def __post_init__(self):
        if not self.sp_mask.any():
            raise ValueError("ground-truth instance covers no superpoint")


@dataclasses.dataclass
class CostMatrix:
    costs: np.ndarray  # (q, n_gt)
    lambda_cls: float
    lambda_bce: float
    lambda_dice: float


@dataclasses.dataclass
class Assignment:
    """Injective map from ground-truth index to prediction index."""

    pred_for_gt: np.ndarray  # (n_gt,)
    total_cost: float

    @property
    def n_gt(self) -> int:
        return len(self.pred_for_gt)


def build_gt_instances(pc: PointCloud, grid: VoxelGrid,
                       part: SuperpointPartition) -> list[GroundTruthInstance]:
    """Derive loss targets from a labeled cloud.

    A superpoint belongs to the instance holding the majority of its
    points (ties toward the lower id, background id 0 competes too).
    Instances that win no superpoint cannot be supervised at this
    resolution and are skipped; they still exist for point-level
    evaluation.
    """
    if not pc.has_labels:
        raise ValueError("cloud has no ground-truth labels")
    sp_of_point = point_to_superpoint(part, grid)
    max_inst = int(pc.instance.max())
    counts = np.zeros((part.n_s, max_inst + 1), dtype=np.int64)
    np.add.at(counts, (sp_of_point, pc.instance), 1)
    sp_majority = counts.argmax(axis=1)

    out = []
    for k in range(1, max_inst + 1):
        point_mask = pc.instance == k
        if not point_mask.any():
            continue
        sp_mask = sp_majority == k
        if not sp_mask.any():
            continue
        class_id = int(pc.semantic[point_mask][0])
        out.append(GroundTruthInstance(class_id=class_id, sp_mask=sp_mask,
                                       point_mask=point_mask))
    return out


def pair_cost(pred: LayerPrediction, gts: list[GroundTruthInstance],
              lambda_cls: float = 0.8, lambda_bce: float = 1.0,
              lambda_dice: float = 1.0, dice_eps: float = 1.0) -> CostMatrix:
    """(q, n_gt) matching costs: negative class probability plus mask BCE
    (mean over superpoints) plus dice loss, all on soft masks.

    Matching is routing, not a differentiable path, so this works on raw
    arrays.
    """
    if not gts:
        raise ValueError("pair_cost needs at least one ground-truth instance")
    probs = pred.class_probs.data
    logits = pred.mask_logits.data
    soft = pred.soft_masks.data
    n_s = logits.shape[1]
    targets = np.stack([g.sp_mask for g in gts]).astype(np.float64)  # (n_gt, n_s)
    classes = np.array([g.class_id - 1 for g in gts])

    cls_term = -lambda_cls * probs[:, classes]
    # elementwise BCE from logits: softplus(z) - z*t, averaged over superpoints
    softplus_mean = np.logaddexp(0.0, logits).mean(axis=1, keepdims=True)
    bce = softplus_mean - (logits @ targets.T) / n_s
    inter = soft @ targets.T
    denom = soft.sum(axis=1, keepdims=True) + targets.sum(axis=1)[None, :]
    dice = 1.0 - (2.0 * inter + dice_eps) / (denom + dice_eps)

    costs = cls_term + lambda_bce * bce + lambda_dice * dice
    return CostMatrix(costs=costs, lambda_cls=lambda_cls, lambda_bce=lambda_bce,
                      lambda_dice=lambda_dice)


# -- Hungarian solver ------------------------------------------------------


def _augmenting_path_solve(cost: np.ndarray):
    """Jonker-Volgenant shortest augmenting paths for an (n, m) matrix
    with n <= m. Returns (col4row, u, v)."""
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m)
    col4row = np.full(n, -1, dtype=np.intp)
    row4col = np.full(m, -1, dtype=np.intp)

    for cur in range(n):
        shortest = np.full(m, np.inf)
        pred_row = np.full(m, cur, dtype=np.intp)
        done = np.zeros(m, dtype=bool)
        scanned_rows = []
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            scanned_rows.append(i)
            rem = np.flatnonzero(~done)
            red = min_val + cost[i, rem] - u[i] - v[rem]
            better = red < shortest[rem]
            shortest[rem[better]] = red[better]
            pred_row[rem[better]] = i
            pos = int(np.argmin(shortest[rem]))
            j = int(rem[pos])
            min_val = shortest[j]
            done[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
        u[cur] += min_val
        for r in scanned_rows:
            if r != cur:
                u[r] += min_val - shortest[col4row[r]]
        dv = done & (shortest < np.inf)
        v[dv] -= min_val - shortest[dv]

        j = sink
        while True:
            i = int(pred_row[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row, u, v


def _assignment_total(cost: np.ndarray, pred_for_gt: np.ndarray) -> float:
    return math.fsum(cost[int(pred_for_gt[j]), j] for j in range(cost.shape[1]))


def _lexicographic_refine(cost: np.ndarray) -> np.ndarray:
    """Exact lexicographically-smallest minimizer (columns in order pick the
    smallest prediction row that still admits an optimal completion).
    Quadratically many sub-solves; only used when ties are possible."""
    q, g = cost.shape
    used = np.zeros(q, dtype=bool)
    fixed_costs: list[float] = []
    result = np.full(g, -1, dtype=np.intp)
    for j in range(g):
        candidates = []
        avail = np.flatnonzero(~used)
        rest_cols = np.arange(j + 1, g)
        for i in avail:
            rows_left = avail[avail != i]
            if len(rest_cols):
                sub = cost[np.ix_(rows_left, rest_cols)]
                sub_cols, _, _ = _augmenting_path_solve(sub.T)
                tail = [sub[int(sub_cols[t]), t] for t in range(len(rest_cols))]
            else:
                tail = []
            total = math.fsum(fixed_costs + [cost[i, j]] + tail)
            candidates.append((total, i))
        best_total = min(t for t, _ in candidates)
        best_i = next(i for t, i in candidates if t == best_total)
        result[j] = best_i
        used[best_i] = True
        fixed_costs.append(cost[best_i, j])
    return result


def hungarian(cost) -> Assignment:
    """Minimum-cost injective assignment of ground-truth columns to
    prediction rows; among exact minimizers, the lexicographically smallest
    vector of prediction indices wins."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-d, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN entries")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    q, g = cost.shape
    if q < g:
        raise ValueError(f"need at least as many predictions as targets, got {q} x {g}")

    col4row, u, v = _augmenting_path_solve(cost.T)
    pred_for_gt = col4row.copy()

    # Tie screen: an alternative optimum can only use edges with zero
    # reduced cost; if none are close to zero outside the matching, the
    # minimizer is unique and the JV answer already is lexicographic.
    scale = max(1.0, float(np.abs(cost).max()))
    slack = cost.T - u[:, None] - v[None, :]
    slack[np.arange(g), col4row] = np.inf
    if slack.min(initial=np.inf) <= 1e-9 * scale:
        pred_for_gt = _lexicographic_refine(cost)

    return Assignment(pred_for_gt=pred_for_gt,
                      total_cost=_assignment_total(cost, pred_for_gt))
