"""Instance-segmentation evaluation: mask IoU and average precision.

The protocol follows the common indoor-scan benchmark style: greedy
score-ordered matching against unmatched same-class ground truth at an IoU
threshold, all-point interpolated PR integration, per-class AP pooled over
scenes, and mAP averaged over IoU thresholds 0.50:0.95:0.05. There is no
minimum region size and no void-label forgiveness; the synthetic ground
truth has neither.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .decoder import LayerPrediction
from .pointcloud import VoxelGrid
from .superpoints import SuperpointPartition, point_to_superpoint

MAP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclasses.dataclass
class ScoredInstance:
    mask: np.ndarray   # (n,) bool, point level
    class_id: int      # 1..c
    score: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


@dataclasses.dataclass
class EvalInstance:
    mask: np.ndarray   # (n,) bool, point level
    class_id: int


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 0 when both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask lengths differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def _ranked(preds: list[ScoredInstance]) -> list[int]:
    """Score-descending order; ties prefer the larger mask, then insertion."""
    sizes = [int(np.count_nonzero(p.mask)) for p in preds]
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, -sizes[i], i))


def _match_scene(preds: list[ScoredInstance], gts: list[EvalInstance],
                 class_id: int, iou_thr: float) -> tuple[list[tuple[float, int, int]], int]:
    """Greedy matching of one scene's predictions of one class.

    Returns ([(score, mask_size, tp_flag)...] in ranked order, n_gt).
    """
    gt_masks = [g.mask for g in gts if g.class_id == class_id]
    matched = np.zeros(len(gt_masks), dtype=bool)
    rows = []
    cls_preds = [p for p in preds if p.class_id == class_id]
    for i in _ranked(cls_preds):
        p = cls_preds[i]
        best_iou, best_j = 0.0, -1
        for j, gm in enumerate(gt_masks):
            if matched[j]:
                continue
            iou = mask_iou(p.mask, gm)
            if iou > best_iou:
                best_iou, best_j = iou, j
        tp = 1 if (best_j >= 0 and best_iou >= iou_thr) else 0
        if tp:
            matched[best_j] = True
        rows.append((p.score, int(np.count_nonzero(p.mask)), tp))
    return rows, len(gt_masks)


def _ap_from_rows(rows: list[tuple[float, int, int]], n_gt: int) -> float:
    """All-point interpolated area under the PR curve.

    ``rows`` must already be in ranking order (score desc with the tie
    rules applied); only the tp flags and n_gt matter afterwards.
    """
    if n_gt == 0:
        return 0.0
    if not rows:
        return 0.0
    flags = np.array([r[2] for r in rows], dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    precision = tp / (tp + fp)
    recall = tp / n_gt
    # precision made monotone non-increasing from the right
    p_interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for k in range(len(rows)):
        if flags[k]:
            ap += (recall[k] - prev_r) * p_interp[k]
            prev_r = recall[k]
    return float(ap)


def average_precision(preds: list[ScoredInstance], gts: list[EvalInstance],
                      class_id: int, iou_thr: float) -> float:
    """AP of one class on one pooled collection of predictions."""
    rows, n_gt = _match_scene(preds, gts, class_id, iou_thr)
    return _ap_from_rows(rows, n_gt)


@dataclasses.dataclass
class EvalReport:
    classes: list[int]
    per_class_ap: dict[int, dict[float, float]]
    map_all: float
    ap50: float
    ap25: float
    per_scene: list[dict[str, int]]  # tp/fp/fn at IoU 0.5

    def as_kv(self) -> list[tuple[str, float]]:
        rows = [("mAP", self.map_all), ("AP50", self.ap50), ("AP25", self.ap25)]
        for cls in self.classes:
            for thr, value in sorted(self.per_class_ap[cls].items()):
                rows.append((f"class.{cls}.AP{int(round(thr * 100))}", value))
        return rows

    def as_text(self) -> str:
        lines = ["metric            value",
                 "-" * 24,
                 f"mAP               {self.map_all:.4f}",
                 f"AP50              {self.ap50:.4f}",
                 f"AP25              {self.ap25:.4f}"]
        for cls in self.classes:
            ap = self.per_class_ap[cls]
            lines.append(f"class {cls:<3} AP50    {ap[0.5]:.4f}   AP25 {ap[0.25]:.4f}")
        for s, d in enumerate(self.per_scene):
            lines.append(f"scene {s:<3} tp={d['tp']} fp={d['fp']} fn={d['fn']}")
        return "\n".join(lines) + "\n"


def evaluate(scene_preds: list[list[ScoredInstance]],
             scene_gts: list[list[EvalInstance]]) -> EvalReport:
    """Pooled-over-scenes AP; matching stays per scene. Classes with no
    ground truth anywhere are skipped, not scored 0."""
    if len(scene_preds) != len(scene_gts):
        raise ValueError("prediction/ground-truth scene counts differ")
    classes = sorted({g.class_id for gts in scene_gts for g in gts})
    thresholds = sorted(set(MAP_THRESHOLDS) | {0.25})

    per_class_ap: dict[int, dict[float, float]] = {c: {} for c in classes}
    for cls in classes:
        for thr in thresholds:
            pooled: list[tuple[float, int, int]] = []
            n_gt = 0
            for preds, gts in zip(scene_preds, scene_gts):
                rows, scene_n = _match_scene(preds, gts, cls, thr)
                pooled.extend(rows)
                n_gt += scene_n
            pooled.sort(key=lambda r: (-r[0], -r[1]))
            per_class_ap[cls][thr] = _ap_from_rows(pooled, n_gt)

    def class_mean(thr: float) -> float:
        if not classes:
            return 0.0
        return float(np.mean([per_class_ap[c][thr] for c in classes]))

    map_all = float(np.mean([class_mean(t) for t in MAP_THRESHOLDS])) if classes else 0.0

    per_scene = []
    for preds, gts in zip(scene_preds, scene_gts):
        tp = fp = 0
        n_gt_scene = len(gts)
        for cls in sorted({p.class_id for p in preds}):
            rows, _ = _match_scene(preds, gts, cls, 0.5)
            tp += sum(r[2] for r in rows)
            fp += sum(1 - r[2] for r in rows)
        per_scene.append({"tp": tp, "fp": fp, "fn": n_gt_scene - tp})

    return EvalReport(classes=classes, per_class_ap=per_class_ap,
                      map_all=map_all, ap50=class_mean(0.5), ap25=class_mean(0.25),
                      per_scene=per_scene)


def write_report(report: EvalReport, txt_path, kv_path) -> None:
    with open(txt_path, "w") as fh:
        fh.write(report.as_text())
    with open(kv_path, "w") as fh:
        for key, value in report.as_kv():
            fh.write(f"{key}={value:.17g}\n")


def gt_instances_for_eval(pc) -> list[EvalInstance]:
    """Point-level ground truth for a labeled cloud (every instance counts,
    whether or not it survives superpoint quantization)."""
    out = []
    for k in np.unique(pc.instance):
        if k == 0:
            continue
        mask = pc.instance == k
        out.append(EvalInstance(mask=mask, class_id=int(pc.semantic[mask][0])))
    return out


# -- inference post-processing --------------------------------------------


def instances_from_prediction(pred: LayerPrediction, part: SuperpointPartition,
                              grid: VoxelGrid, max_instances: int = 100,
                              min_points: int = 1,
                              drop_background: bool = True) -> list[ScoredInstance]:
    """Turn one layer's raw predictions into scored point-level instances.

    Confidence is the foreground class probability times the mean soft
    mask score over the binary support (at superpoint resolution). Queries
    whose argmax class is background, or whose mask keeps fewer than
    ``min_points`` points, are dropped; the ``max_instances`` most
    confident survive.
    """
    probs = pred.class_probs.data
    soft = pred.soft_masks.data
    binary = pred.binary_masks
    num_fg = probs.shape[1] - 1
    sp_of_point = point_to_superpoint(part, grid)

    kept: list[ScoredInstance] = []
    for i in range(probs.shape[0]):
        if drop_background and int(np.argmax(probs[i])) == num_fg:
            continue
        support = binary[i]
        if not support.any():
            continue
        point_mask = support[sp_of_point]
        if np.count_nonzero(point_mask) < min_points:
            continue
        cls = int(np.argmax(probs[i, :num_fg]))
        score = float(probs[i, cls] * soft[i, support].mean())
        kept.append(ScoredInstance(mask=point_mask, class_id=cls + 1, score=score))
    kept.sort(key=lambda s: -s.score)
    return kept[:max_instances]


# -- prediction dump format -------------------------------------------------
#
# Line 1: "voxinst-preds 1"
# Line 2: "scene <id> points <n> superpoints <n_s> layers <L+1> queries <q> classes <c>"
# Per layer:   "layer <l>"
# Per query:   "query <i> class <cid> score <float>"
#              "spmask <n_s chars of 0/1>"
#              "points <k> <k point indices>"

_DUMP_MAGIC = "voxinst-preds 1"


@dataclasses.dataclass
class DumpedQuery:
    query: int
    class_id: int
    score: float
    sp_mask: np.ndarray
    point_mask: np.ndarray

    def to_scored(self) -> ScoredInstance:
        return ScoredInstance(mask=self.point_mask, class_id=self.class_id,
                              score=self.score)


def write_prediction_dump(path, scene_id: str, preds: list[LayerPrediction],
                          part: SuperpointPartition, grid: VoxelGrid,
                          num_classes: int) -> None:
    sp_of_point = point_to_superpoint(part, grid)
    q = preds[0].class_probs.shape[0]
    with open(path, "w") as fh:
        fh.write(_DUMP_MAGIC + "\n")
        fh.write(f"scene {scene_id} points {grid.n} superpoints {part.n_s} "
                 f"layers {len(preds)} queries {q} classes {num_classes}\n")
        for pred in preds:
            fh.write(f"layer {pred.layer}\n")
            probs = pred.class_probs.data
            soft = pred.soft_masks.data
            for i in range(q):
                cls = int(np.argmax(probs[i, :num_classes]))
                support = pred.binary_masks[i]
                conf = float(probs[i, cls] * soft[i, support].mean()) if support.any() else 0.0
                fh.write(f"query {i} class {cls + 1} score {conf:.17g}\n")
                fh.write("spmask " + "".join("1" if b else "0" for b in support) + "\n")
                idx = np.flatnonzero(support[sp_of_point])
                fh.write(f"points {len(idx)}" +
                         ("" if len(idx) == 0 else " " + " ".join(map(str, idx))) + "\n")


def read_prediction_dump(path) -> dict:
    """Parse a dump back into per-layer query records."""
    with open(path) as fh:
        if fh.readline().strip() != _DUMP_MAGIC:
            raise ValueError(f"{path}: not a prediction dump")
        head = fh.readline().split()
        meta = {"scene": head[1], "points": int(head[3]), "superpoints": int(head[5]),
                "layers": int(head[7]), "queries": int(head[9]), "classes": int(head[11])}
        layers: list[list[DumpedQuery]] = []
        current: list[DumpedQuery] | None = None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "layer":
                current = []
                layers.append(current)
            elif parts[0] == "query":
                qid, cls, score = int(parts[1]), int(parts[3]), float(parts[5])
                sp_line = fh.readline().split()
                sp_mask = np.frombuffer(sp_line[1].encode(), dtype=np.uint8) == ord("1")
                pt_parts = fh.readline().split()
                k = int(pt_parts[1])
                idx = np.array([int(t) for t in pt_parts[2:2 + k]], dtype=np.int64)
                point_mask = np.zeros(meta["points"], dtype=bool)
                point_mask[idx] = True
                current.append(DumpedQuery(query=qid, class_id=cls, score=score,
                                           sp_mask=sp_mask, point_mask=point_mask))
    if len(layers) != meta["layers"]:
        raise ValueError(f"{path}: header claims {meta['layers']} layers, found {len(layers)}")
    meta["layer_queries"] = layers
    return meta
