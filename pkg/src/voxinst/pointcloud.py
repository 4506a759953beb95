"""Point clouds, uniform-grid voxelization, and scene file formats.

Labels follow the file convention throughout: semantic labels live in
1..c+1 with c+1 meaning background, instance ids are 0 for background and
1..k for objects.
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass
class PointCloud:
    """n points with coordinates (meters), colors in [0,1], optional labels."""

    coords: np.ndarray
    colors: np.ndarray
    semantic: np.ndarray | None = None
    instance: np.ndarray | None = None
    num_classes: int = 0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.semantic is not None:
            self.semantic = np.asarray(self.semantic, dtype=np.int64)
        if self.instance is not None:
            self.instance = np.asarray(self.instance, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def has_labels(self) -> bool:
        return self.semantic is not None and self.instance is not None

    def validate(self) -> None:
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must be (n, 3), got {self.coords.shape}")
        if self.colors.shape != self.coords.shape:
            raise ValueError(f"colors shape {self.colors.shape} != coords {self.coords.shape}")
        if not np.isfinite(self.coords).all():
            raise ValueError("coords contain non-finite values")
        if self.colors.min(initial=0.0) < 0.0 or self.colors.max(initial=0.0) > 1.0:
            raise ValueError("colors must lie in [0, 1]")
        if self.semantic is not None:
            if self.semantic.shape != (self.n,):
                raise ValueError("semantic labels must have length n")
            if self.num_classes and (self.semantic.min() < 1 or self.semantic.max() > self.num_classes + 1):
                raise ValueError(f"semantic labels outside 1..{self.num_classes + 1}")
        if self.instance is not None:
            if self.instance.shape != (self.n,):
                raise ValueError("instance ids must have length n")
            if self.instance.min() < 0:
                raise ValueError("instance ids must be >= 0")
        if self.has_labels:
            for k in np.unique(self.instance):
                if k == 0:
                    continue
                labels = np.unique(self.semantic[self.instance == k])
                if len(labels) != 1:
                    raise ValueError(f"instance {k} spans semantic labels {labels}")

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.coords.min(axis=0), self.coords.max(axis=0)


@dataclasses.dataclass
class VoxelGrid:
    """m voxels of averaged points plus the bidirectional point/voxel map."""

    coords: np.ndarray                 # (m, 3) mean of member point coords
    colors: np.ndarray                 # (m, 3) mean of member point colors
    grid_keys: np.ndarray              # (m, 3) int lattice key, lexicographically sorted
    point_to_voxel: np.ndarray         # (n,)
    voxel_to_points: list[np.ndarray]  # m arrays partitioning 0..n-1
    voxel_size: float
    num_classes: int = 0
    semantic: np.ndarray | None = None        # (m,) majority label in 1..c+1
    majority_instance: np.ndarray | None = None  # (m,) majority instance id, 0 = background
    gt_center: np.ndarray | None = None       # (m, 3) instance centroid at point resolution
    center_valid: np.ndarray | None = None    # (m,) True where majority instance is nonzero

    @property
    def m(self) -> int:
        return self.coords.shape[0]

    @property
    def n(self) -> int:
        return self.point_to_voxel.shape[0]

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.coords.min(axis=0), self.coords.max(axis=0)


def _majority_per_group(group_idx: np.ndarray, values: np.ndarray, num_groups: int,
                        num_values: int) -> np.ndarray:
    """Majority value per group; ties break toward the lower value."""
    counts = np.zeros((num_groups, num_values), dtype=np.int64)
    np.add.at(counts, (group_idx, values), 1)
    return counts.argmax(axis=1)


def voxelize(pc: PointCloud, voxel_size: float) -> VoxelGrid:
    """Bucket points into a uniform grid of ``voxel_size`` meters.

    Voxels are ordered by lexicographic grid key, so the output is
    independent of the input point order. Ground-truth fields, when the
    cloud is labeled, use majority votes (ties toward the lower id) and
    instance centroids computed over all points of the instance.
    """
    if pc.n < 1:
        raise ValueError("cannot voxelize an empty point cloud")
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")

    keys = np.floor(pc.coords / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m = uniq.shape[0]

    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    sums_c = np.zeros((m, 3))
    sums_f = np.zeros((m, 3))
    np.add.at(sums_c, inverse, pc.coords)
    np.add.at(sums_f, inverse, pc.colors)
    mean_coords = sums_c / counts[:, None]
    mean_colors = sums_f / counts[:, None]

    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(counts.astype(np.int64))[:-1]
    voxel_to_points = np.split(order, bounds)

    grid = VoxelGrid(
        coords=mean_coords,
        colors=mean_colors,
        grid_keys=uniq,
        point_to_voxel=inverse,
        voxel_to_points=voxel_to_points,
        voxel_size=float(voxel_size),
        num_classes=pc.num_classes,
    )

    if pc.has_labels:
        c1 = pc.num_classes + 2 if pc.num_classes else int(pc.semantic.max()) + 1
        grid.semantic = _majority_per_group(inverse, pc.semantic, m, c1)
        max_inst = int(pc.instance.max())
        grid.majority_instance = _majority_per_group(inverse, pc.instance, m, max_inst + 1)

        centroids = np.zeros((max_inst + 1, 3))
        for k in range(1, max_inst + 1):
            pts = pc.coords[pc.instance == k]
            if len(pts):
                centroids[k] = pts.mean(axis=0)
        grid.center_valid = grid.majority_instance > 0
        grid.gt_center = np.where(grid.center_valid[:, None],
                                  centroids[grid.majority_instance], 0.0)
    return grid


def unit_box_params(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine (scale, offset) mapping [lo, hi] to [0, 1] per axis.

    Degenerate axes (hi == lo) map to the constant 0.5.
    """
    span = hi - lo
    degenerate = span <= 0
    scale = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, span))
    offset = np.where(degenerate, 0.5, -lo * scale)
    return scale, offset


def normalize_unit_box(coords: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    scale, offset = unit_box_params(lo, hi)
    return coords * scale + offset


# -- scene file format ---------------------------------------------------
#
# Line 1:  "voxscene 1"
# Line 2:  "<n> <voxel_hint> <num_classes> <has_labels>"
# Then n records: "x y z r g b" plus "sem inst" when has_labels is 1.

_MAGIC = "voxscene 1"


def write_scene(pc: PointCloud, path, voxel_hint: float = 0.02) -> None:
    labeled = 1 if pc.has_labels else 0
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"{pc.n} {voxel_hint:.17g} {pc.num_classes} {labeled}\n")
        for i in range(pc.n):
            x, y, z = pc.coords[i]
            r, g, b = pc.colors[i]
            line = f"{x:.17g} {y:.17g} {z:.17g} {r:.17g} {g:.17g} {b:.17g}"
            if labeled:
                line += f" {pc.semantic[i]} {pc.instance[i]}"
            fh.write(line + "\n")


def read_scene(path) -> tuple[PointCloud, float]:
    """Parse a scene file; returns the cloud and its voxel-size hint."""
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a scene file (header {magic!r})")
        head = fh.readline().split()
        if len(head) != 4:
            raise ValueError(f"{path}: malformed scene header")
        n, voxel_hint, c, labeled = int(head[0]), float(head[1]), int(head[2]), int(head[3])
        body = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    want = 8 if labeled else 6
    if body.shape != (n, want):
        raise ValueError(f"{path}: expected {n} x {want} records, got {body.shape}")
    pc = PointCloud(
        coords=body[:, :3],
        colors=body[:, 3:6],
        semantic=body[:, 6].astype(np.int64) if labeled else None,
        instance=body[:, 7].astype(np.int64) if labeled else None,
        num_classes=c,
    )
    pc.validate()
    return pc, voxel_hint


# -- PLY export ----------------------------------------------------------

_PALETTE = np.array([
    [166, 206, 227], [31, 120, 180], [178, 223, 138], [51, 160, 44],
    [251, 154, 153], [227, 26, 28], [253, 191, 111], [255, 127, 0],
    [202, 178, 214], [106, 61, 154], [255, 255, 153], [177, 89, 40],
], dtype=np.uint8)


def instance_colors(ids: np.ndarray) -> np.ndarray:
    """Deterministic color per instance id; id 0 renders dark gray."""
    ids = np.asarray(ids, dtype=np.int64)
    colors = _PALETTE[(ids - 1) % len(_PALETTE)]
    colors[ids == 0] = (60, 60, 60)
    return colors


def write_ply(path, coords: np.ndarray, colors_u8: np.ndarray) -> None:
    """ASCII PLY with per-vertex uchar colors."""
    n = coords.shape[0]
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(n):
            x, y, z = coords[i]
            r, g, b = colors_u8[i]
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
