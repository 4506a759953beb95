"""Independent reference implementations used as test oracles.

Everything here is deliberately written in the dumbest possible style
(scalar loops, explicit enumerations, stdlib math) and stays decoupled
from the library code paths it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of an array, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def grads_close(analytic: np.ndarray, fd: np.ndarray, rel: float = 1e-3,
                abs_floor: float = 1e-6) -> bool:
    a = analytic.reshape(-1)
    b = fd.reshape(-1)
    return all(abs(a[i] - b[i]) <= max(abs_floor, rel * max(abs(a[i]), abs(b[i])))
               for i in range(a.size))


def softmax_row(row) -> list[float]:
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def attention_single_head(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d) + mask) v with explicit loops."""
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = []
        for j in range(k.shape[0]):
            s = sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d)
            if mask is not None:
                s += mask[i, j]
            scores.append(s)
        w = softmax_row(scores)
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


def brute_force_assignment(cost: np.ndarray):
    """Minimum over all injective column->row maps; totals via fsum.

    Returns (best_assignment, best_total); ties resolved to the
    lexicographically smallest assignment vector.
    """
    q, g = cost.shape
    best = None
    best_total = math.inf
    for rows in itertools.permutations(range(q), g):
        total = math.fsum(cost[rows[j], j] for j in range(g))
        if total < best_total or (total == best_total and list(rows) < list(best)):
            best_total = total
            best = list(rows)
    return best, best_total


def loop_pool(values: np.ndarray, groups: list[np.ndarray]) -> np.ndarray:
    out = np.zeros((len(groups), values.shape[1]))
    for s, members in enumerate(groups):
        for col in range(values.shape[1]):
            out[s, col] = sum(values[i, col] for i in members) / len(members)
    return out


def loop_broadcast(sp_values: np.ndarray, sp_of_point: np.ndarray) -> np.ndarray:
    out = np.zeros((len(sp_of_point), sp_values.shape[1]))
    for i, s in enumerate(sp_of_point):
        out[i] = sp_values[s]
    return out


def scalar_cross_entropy(logit_rows, labels_0based) -> float:
    total = 0.0
    for row, label in zip(logit_rows, labels_0based):
        total += -math.log(softmax_row(row)[label])
    return total / len(labels_0based)


def scalar_bce_mean(logits, targets) -> float:
    total = 0.0
    for z, t in zip(logits, targets):
        p = 1.0 / (1.0 + math.exp(-z))
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
    return total / len(logits)


def scalar_dice(soft, targets, eps: float = 1.0) -> float:
    inter = sum(s * t for s, t in zip(soft, targets))
    return 1.0 - (2 * inter + eps) / (sum(soft) + sum(targets) + eps)


def scalar_l1_center_loss(deltas, coords, centers, valid) -> float:
    terms = []
    for i in range(len(deltas)):
        if valid[i]:
            terms.append(sum(abs(deltas[i][a] - (centers[i][a] - coords[i][a]))
                             for a in range(3)))
    return sum(terms) / len(terms) if terms else 0.0


def oracle_average_precision(preds, gts, iou_thr: float) -> float:
    """Greedy matching and all-point PR integration with explicit loops.

    preds: list of (score, set_of_point_indices); gts: list of sets.
    Ranking ties prefer the larger mask, then insertion order.
    """
    order = sorted(range(len(preds)),
                   key=lambda i: (-preds[i][0], -len(preds[i][1]), i))
    matched = set()
    flags = []
    for i in order:
        _, mask = preds[i]
        best_iou, best_j = 0.0, None
        for j, gt in enumerate(gts):
            if j in matched:
                continue
            union = len(mask | gt)
            iou = len(mask & gt) / union if union else 0.0
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j is not None and best_iou >= iou_thr:
            matched.add(best_j)
            flags.append(1)
        else:
            flags.append(0)

    n_gt = len(gts)
    if n_gt == 0 or not flags:
        return 0.0
    precisions, recalls = [], []
    for k in range(1, len(flags) + 1):
        tp = sum(flags[:k])
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    ap = 0.0
    prev_recall = 0.0
    for k in range(len(flags)):
        if flags[k]:
            p_right = max(precisions[k:])
            ap += (recalls[k] - prev_recall) * p_right
            prev_recall = recalls[k]
    return ap
