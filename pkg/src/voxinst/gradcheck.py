"""Finite-difference verification of the full training objective.

Central differences with a small epsilon are compared element-by-element
against the analytic gradients of the complete per-scene loss (auxiliary
terms, per-layer matching, classification, and mask terms all active).
Matching and top-k selection are recomputed inside every evaluation; they
are locally constant at generic points, so the check is well-posed away
from assignment/selection ties.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .config import RunConfig
from .model import PreparedScene, SegmentationModel
from .scenes import SceneSpec, generate_scene


@dataclasses.dataclass
class GradCheckReport:
    checked: int
    failures: list[tuple[str, int, float, float, float]]  # name, flat idx, analytic, fd, err
    worst: tuple[str, float]

    @property
    def passed(self) -> bool:
        return not self.failures


def tiny_config(**overrides) -> RunConfig:
    """Smallest config that still exercises every code path."""
    base = dict(
        seed=7, num_classes=3, d_backbone=8, d_model=8, heads=2,
        backbone_rounds=1, fourier_bands=2, ffn_hidden=16,
        num_scene_queries=2, num_learnable_queries=2, decoder_layers=2,
        voxel_size=0.05, sp_knn=4, sp_threshold=8.0, steps=1,
    )
    base.update(overrides)
    return RunConfig(**base)


def tiny_scene(num_classes: int = 3, seed: int = 11):
    spec = SceneSpec(seed=seed, num_classes=num_classes,
                     room_extent=((0.8, 1.0), (0.8, 1.0), (0.6, 0.8)),
                     instance_count=(2, 3), points_per_instance=(25, 40),
                     background_points=(40, 60), noise_sigma=0.003,
                     twin_prob=0.0)
    return generate_scene(spec)


def check_model_gradients(model: SegmentationModel, prep: PreparedScene,
                          eps: float = 1e-5, rel_tol: float = 1e-3,
                          abs_tol: float = 1e-6,
                          progress: bool = False) -> GradCheckReport:
    def loss_value() -> float:
        loss, _ = model.training_loss(prep)
        return loss.item()

    loss, _ = model.training_loss(prep)
    model.params.zero_grads()
    loss.backward()
    model.fill_missing_grads()
    analytic = {name: p.grad.copy() for name, p in model.params.items()}

    failures = []
    worst = ("", 0.0)
    checked = 0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            denom = max(abs(ana[i]), abs(fd), abs_tol / rel_tol)
            err = abs(ana[i] - fd) / denom
            checked += 1
            if err > worst[1]:
                worst = (f"{name}[{i}]", err)
            if abs(ana[i] - fd) > max(abs_tol, rel_tol * max(abs(ana[i]), abs(fd))):
                failures.append((name, i, float(ana[i]), float(fd), float(err)))
        if progress:
            print(f"  {name}: checked {flat.size} entries")
    return GradCheckReport(checked=checked, failures=failures, worst=worst)


def run_gradcheck(cfg: RunConfig | None = None, progress: bool = False) -> GradCheckReport:
    cfg = cfg or tiny_config()
    model = SegmentationModel(cfg)
    prep = model.prepare(tiny_scene(cfg.num_classes))
    return check_model_gradients(model, prep, progress=progress)
