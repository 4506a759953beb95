"""Set-prediction training objective with per-layer deep supervision."""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor, gather_rows, take_per_row
from .decoder import LayerPrediction
from .matching import Assignment, GroundTruthInstance


@dataclasses.dataclass
class LossWeights:
    lambda_cls: float = 0.8
    lambda_bce: float = 1.0
    lambda_dice: float = 1.0
    lambda_aux: float = 0.4
    dice_eps: float = 1.0


def dice_loss(soft: Tensor, gt: np.ndarray, eps: float = 1.0) -> Tensor:
    """1 - soft Dice overlap of a [0,1] mask row against a binary target."""
    t = Tensor.const(np.asarray(gt, dtype=np.float64))
    inter = (soft * t).sum()
    return 1.0 - (2.0 * inter + eps) / (soft.sum() + t.data.sum() + eps)


def bce_with_logits(logits: Tensor, gt: np.ndarray) -> Tensor:
    """Mean binary cross-entropy computed from logits (overflow-safe)."""
    t = Tensor.const(np.asarray(gt, dtype=np.float64))
    return (logits.softplus() - logits * t).mean()


def classification_loss(pred: LayerPrediction, assignment: Assignment | None,
                        gts: list[GroundTruthInstance]) -> Tensor:
    """Mean cross-entropy over all queries; unmatched queries target the
    background class."""
    q, width = pred.class_logits.shape
    targets = np.full(q, width - 1, dtype=np.int64)
    if assignment is not None:
        for j, i in enumerate(assignment.pred_for_gt):
            targets[int(i)] = gts[j].class_id - 1
    return -take_per_row(pred.class_log_probs, targets).mean()


def matched_mask_losses(pred: LayerPrediction, assignment: Assignment,
                        gts: list[GroundTruthInstance],
                        dice_eps: float) -> tuple[Tensor, Tensor]:
    """(bce, dice) averaged over matched pairs."""
    rows = assignment.pred_for_gt
    targets = np.stack([g.sp_mask for g in gts]).astype(np.float64)
    t = Tensor.const(targets)
    logits = gather_rows(pred.mask_logits, rows)
    soft = gather_rows(pred.soft_masks, rows)

    bce = (logits.softplus() - logits * t).mean()
    inter = (soft * t).sum(axis=1)
    denom = soft.sum(axis=1) + Tensor.const(targets.sum(axis=1))
    dice = (1.0 - (2.0 * inter + dice_eps) / (denom + dice_eps)).mean()
    return bce, dice


def total_loss(preds: list[LayerPrediction], gts: list[GroundTruthInstance],
               assignments: list[Assignment | None],
               sem_loss: Tensor, geo_loss: Tensor,
               weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Auxiliary semantic/geometric terms plus, per decoder layer, the
    classification cross-entropy and (over matched pairs only) the BCE and
    dice mask terms. Matching must have been recomputed per layer.

    Returns the scalar loss and a per-term float breakdown for logging.
    """
    if len(assignments) != len(preds):
        raise ValueError(f"{len(preds)} predictions but {len(assignments)} assignments")
    terms: dict[str, float] = {}
    total = weights.lambda_aux * (sem_loss + geo_loss)
    terms["sem"] = sem_loss.item()
    terms["geo"] = geo_loss.item()

    for pred, assignment in zip(preds, assignments):
        ce = classification_loss(pred, assignment, gts)
        total = total + weights.lambda_cls * ce
        terms[f"cls_{pred.layer}"] = ce.item()
        if gts and assignment is not None:
            bce, dice = matched_mask_losses(pred, assignment, gts, weights.dice_eps)
            total = total + weights.lambda_bce * bce + weights.lambda_dice * dice
            terms[f"bce_{pred.layer}"] = bce.item()
            terms[f"dice_{pred.layer}"] = dice.item()
        else:
            terms[f"bce_{pred.layer}"] = 0.0
            terms[f"dice_{pred.layer}"] = 0.0
    terms["total"] = total.item()
    return total, terms
