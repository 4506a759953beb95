"""Procedural labeled indoor-style scenes and rigid augmentations.

Scenes are a floor, two walls, and a handful of object instances sampled
from per-class surface archetypes. Classes carry characteristic hue bands
(with per-instance and per-point jitter) so semantics are learnable from
color and local shape; instances sometimes come with a same-class twin
placed a few centimeters away to exercise nearby-instance separation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os

import numpy as np

from .pointcloud import PointCloud, read_scene, write_scene

log = logging.getLogger(__name__)

ARCHETYPES = ("box", "cylinder", "sphere", "slab")


@dataclasses.dataclass
class SceneSpec:
    seed: int = 0
    num_classes: int = 4
    room_extent: tuple = ((2.0, 3.5), (2.0, 3.5), (2.0, 2.6))
    instance_count: tuple = (3, 6)
    points_per_instance: tuple = (250, 600)
    background_points: tuple = (800, 1400)
    noise_sigma: float = 0.004
    twin_prob: float = 0.35

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.instance_count[0] < 0:
            raise ValueError("instance count must be >= 0")
        for lo, hi in self.room_extent:
            if lo <= 0 or hi < lo:
                raise ValueError(f"bad room extent range ({lo}, {hi})")


@dataclasses.dataclass
class AugmentConfig:
    flip: bool = True
    rotate_z: bool = True
    translate: bool = True
    scale: bool = True
    translate_range: float = 0.2
    scale_range: tuple = (0.9, 1.1)

    def __post_init__(self):
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")


def class_archetype(class_id: int) -> str:
    return ARCHETYPES[(class_id - 1) % len(ARCHETYPES)]


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb)


def class_base_color(class_id: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    hue = ((class_id - 1) + rng.uniform(0.1, 0.9)) / num_classes
    return _hsv_to_rgb(hue % 1.0, rng.uniform(0.55, 0.9), rng.uniform(0.45, 0.85))


def _surface_box(rng, half, count):
    areas = np.array([half[1] * half[2], half[1] * half[2],
                      half[0] * half[2], half[0] * half[2],
                      half[0] * half[1], half[0] * half[1]])
    face = rng.choice(6, size=count, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(count, 2))
    pts = np.empty((count, 3))
    for axis in range(3):
        sel = (face // 2) == axis
        sign = np.where(face[sel] % 2 == 0, 1.0, -1.0)
        others = [a for a in range(3) if a != axis]
        pts[sel, axis] = sign * half[axis]
        pts[sel, others[0]] = u[sel, 0] * half[others[0]]
        pts[sel, others[1]] = u[sel, 1] * half[others[1]]
    return pts


def _surface_cylinder(rng, radius, half_h, count):
    side_area = 2 * math.pi * radius * 2 * half_h
    cap_area = math.pi * radius**2
    p = np.array([side_area, cap_area, cap_area])
    part = rng.choice(3, size=count, p=p / p.sum())
    theta = rng.uniform(0, 2 * math.pi, size=count)
    pts = np.empty((count, 3))
    side = part == 0
    pts[side, 0] = radius * np.cos(theta[side])
    pts[side, 1] = radius * np.sin(theta[side])
    pts[side, 2] = rng.uniform(-half_h, half_h, size=side.sum())
    for which, z in ((1, half_h), (2, -half_h)):
        sel = part == which
        r = radius * np.sqrt(rng.uniform(0, 1, size=sel.sum()))
        pts[sel, 0] = r * np.cos(theta[sel])
        pts[sel, 1] = r * np.sin(theta[sel])
        pts[sel, 2] = z
    return pts


def _surface_sphere(rng, radius, count):
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius


def _surface_slab(rng, half, count):
    # flat board: a box with one thin axis, sampled symmetrically
    return _surface_box(rng, half, count)


def _instance_points(rng, archetype: str, count: int):
    """Points on the archetype surface, centered at the origin; returns
    (points, half-extent bbox)."""
    if archetype == "box":
        half = rng.uniform(0.12, 0.3, size=3)
        return _surface_box(rng, half, count), half
    if archetype == "cylinder":
        radius = rng.uniform(0.1, 0.22)
        half_h = rng.uniform(0.15, 0.35)
        return _surface_cylinder(rng, radius, half_h, count), np.array([radius, radius, half_h])
    if archetype == "sphere":
        radius = rng.uniform(0.12, 0.25)
        return _surface_sphere(rng, radius, count), np.full(3, radius)
    if archetype == "slab":
        half = np.array([rng.uniform(0.18, 0.35), rng.uniform(0.18, 0.35),
                         rng.uniform(0.015, 0.04)])
        return _surface_slab(rng, half, count), half
    raise ValueError(f"unknown archetype {archetype!r}")


def _boxes_overlap(a_lo, a_hi, b_lo, b_hi, pad: float) -> bool:
    return bool(np.all(a_lo - pad < b_hi) and np.all(b_lo - pad < a_hi))


def generate_scene(spec: SceneSpec, return_info: bool = False):
    """Deterministic labeled scene for the given spec seed.

    Placement uses bounded rejection sampling; when an instance cannot be
    placed it is dropped with a logged warning, so scenes may carry fewer
    instances than drawn.
    """
    rng = np.random.default_rng(spec.seed)
    room = np.array([rng.uniform(lo, hi) for lo, hi in spec.room_extent])

    coords_parts, colors_parts, sem_parts, inst_parts = [], [], [], []
    info = []

    # background: floor plus two walls, area-weighted point counts
    n_bg = int(rng.integers(spec.background_points[0], spec.background_points[1] + 1))
    areas = np.array([room[0] * room[1], room[0] * room[2], room[1] * room[2]])
    counts = np.maximum(1, (areas / areas.sum() * n_bg).astype(int))
    floor = np.column_stack([rng.uniform(0, room[0], counts[0]),
                             rng.uniform(0, room[1], counts[0]),
                             np.zeros(counts[0])])
    wall_y = np.column_stack([rng.uniform(0, room[0], counts[1]),
                              np.zeros(counts[1]),
                              rng.uniform(0, room[2], counts[1])])
    wall_x = np.column_stack([np.zeros(counts[2]),
                              rng.uniform(0, room[1], counts[2]),
                              rng.uniform(0, room[2], counts[2])])
    bg = np.concatenate([floor, wall_y, wall_x])
    bg_color = np.clip(rng.uniform(0.55, 0.7) + rng.normal(0, 0.02, size=(len(bg), 3)), 0, 1)
    coords_parts.append(bg)
    colors_parts.append(bg_color)
    sem_parts.append(np.full(len(bg), spec.num_classes + 1, dtype=np.int64))
    inst_parts.append(np.zeros(len(bg), dtype=np.int64))

    n_inst = int(rng.integers(spec.instance_count[0], spec.instance_count[1] + 1))
    placed: list[tuple[np.ndarray, np.ndarray]] = []
    next_id = 1
    pending: list[tuple[int, np.ndarray | None]] = [(int(rng.integers(1, spec.num_classes + 1)), None)
                                                    for _ in range(n_inst)]
    i = 0
    while i < len(pending):
        class_id, near_center = pending[i]
        i += 1
        count = int(rng.integers(spec.points_per_instance[0], spec.points_per_instance[1] + 1))
        pts, half = _instance_points(rng, class_archetype(class_id), count)
        center = None
        for _ in range(60):
            if near_center is None:
                cand = np.array([rng.uniform(half[0] + 0.1, room[0] - half[0] - 0.1),
                                 rng.uniform(half[1] + 0.1, room[1] - half[1] - 0.1),
                                 half[2] + rng.uniform(0.0, 0.3)])
            else:
                side = rng.normal(size=2)
                side = side / np.linalg.norm(side)
                gap = rng.uniform(0.02, 0.06)
                cand = near_center.copy()
                cand[:2] = cand[:2] + side * (2 * half[:2].max() + gap)
                cand[2] = half[2] + rng.uniform(0.0, 0.1)
                if np.any(cand[:2] < half[:2]) or np.any(cand[:2] > room[:2] - half[:2]):
                    continue
            lo, hi = cand - half, cand + half
            if all(not _boxes_overlap(lo, hi, p_lo, p_hi, pad=0.02) for p_lo, p_hi in placed):
                center = cand
                break
        if center is None:
            log.warning("scene %d: dropped an instance after placement retries", spec.seed)
            continue
        placed.append((center - half, center + half))

        world = pts + center + rng.normal(0, spec.noise_sigma, size=pts.shape)
        base = class_base_color(class_id, spec.num_classes, rng)
        colors = np.clip(base + rng.normal(0, 0.03, size=(count, 3)), 0, 1)
        coords_parts.append(world)
        colors_parts.append(colors)
        sem_parts.append(np.full(count, class_id, dtype=np.int64))
        inst_parts.append(np.full(count, next_id, dtype=np.int64))
        info.append({"instance": next_id, "class": class_id,
                     "archetype": class_archetype(class_id), "center": center})
        next_id += 1

        if near_center is None and rng.uniform() < spec.twin_prob:
            pending.append((class_id, center))

    coords = np.concatenate(coords_parts)
    perm = rng.permutation(len(coords))
    pc = PointCloud(
        coords=coords[perm],
        colors=np.concatenate(colors_parts)[perm],
        semantic=np.concatenate(sem_parts)[perm],
        instance=np.concatenate(inst_parts)[perm],
        num_classes=spec.num_classes,
    )
    pc.validate()
    if return_info:
        return pc, info
    return pc


def augment(pc: PointCloud, cfg: AugmentConfig, seed: int) -> PointCloud:
    """Rigid transform (plus optional isotropic scaling) of coordinates;
    colors and labels are untouched."""
    rng = np.random.default_rng(seed)
    coords = pc.coords.copy()
    if cfg.flip and rng.uniform() < 0.5:
        coords[:, 0] = -coords[:, 0]
    if cfg.rotate_z:
        theta = rng.uniform(0, 2 * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        coords = coords @ rot.T
    if cfg.translate:
        coords = coords + rng.uniform(-cfg.translate_range, cfg.translate_range, size=3)
    if cfg.scale:
        coords = coords * rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    return PointCloud(coords=coords, colors=pc.colors.copy(),
                      semantic=None if pc.semantic is None else pc.semantic.copy(),
                      instance=None if pc.instance is None else pc.instance.copy(),
                      num_classes=pc.num_classes)


# -- dataset directory ------------------------------------------------------


def write_dataset(out_dir, spec: SceneSpec, num_train: int, num_val: int,
                  voxel_hint: float = 0.02) -> dict:
    """Generate scenes into ``out_dir`` with a manifest and split lists.

    Scene seeds are spec.seed + index, train first, so any (spec, counts)
    pair reproduces the same dataset bit for bit.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format": 1,
        "classes": spec.num_classes,
        "voxel_hint": voxel_hint,
        "base_seed": spec.seed,
        "splits": {"train": [], "val": []},
    }
    for split, count, offset in (("train", num_train, 0), ("val", num_val, num_train)):
        for i in range(count):
            scene_spec = dataclasses.replace(spec, seed=spec.seed + offset + i)
            pc = generate_scene(scene_spec)
            name = f"{split}_{i:04d}.txt"
            write_scene(pc, os.path.join(out_dir, name), voxel_hint=voxel_hint)
            manifest["splits"][split].append(name)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


@dataclasses.dataclass
class Dataset:
    root: str
    classes: int
    voxel_hint: float
    train_files: list[str]
    val_files: list[str]

    def load(self, name: str) -> PointCloud:
        pc, _ = read_scene(os.path.join(self.root, name))
        return pc


def load_dataset(root) -> Dataset:
    path = os.path.join(root, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.json under {root}")
    with open(path) as fh:
        manifest = json.load(fh)
    return Dataset(root=str(root), classes=int(manifest["classes"]),
                   voxel_hint=float(manifest.get("voxel_hint", 0.02)),
                   train_files=list(manifest["splits"]["train"]),
                   val_files=list(manifest["splits"]["val"]))
