"""Run configuration: one flat, validated record for every hyperparameter."""

from __future__ import annotations

import dataclasses
import hashlib
import json

import yaml


@dataclasses.dataclass
class RunConfig:
    # reproducibility
    seed: int = 0
    # data
    dataset_dir: str = "data"
    voxel_size: float = 0.02
    num_classes: int = 4
    augment: bool = True
    # superpoints
    sp_knn: int = 8
    sp_threshold: float = 6.0
    # model widths
    d_backbone: int = 32
    d_model: int = 32
    heads: int = 4
    backbone_rounds: int = 3
    backbone_neighborhood: int = 26
    fourier_bands: int = 6
    ffn_hidden: int = 64
    # queries
    num_scene_queries: int = 8
    num_learnable_queries: int = 8
    alpha: float = 0.4
    # decoder
    decoder_layers: int = 3
    tau: float = 0.5
    use_pos_encoding: bool = True
    use_scene_update: bool = True
    use_geo: bool = True
    geo_coordinate_regression: bool = False
    # loss
    lambda_cls: float = 0.8
    lambda_bce: float = 1.0
    lambda_dice: float = 1.0
    lambda_aux: float = 0.4
    dice_eps: float = 1.0
    # optimization
    lr: float = 3e-4
    lr_voxel_heads: float = 3e-3
    weight_decay: float = 0.05
    poly_power: float = 0.9
    steps: int = 2000
    batch_scenes: int = 1
    # schedule of side effects
    eval_every: int = 500
    checkpoint_every: int = 500
    # inference post-processing
    max_instances: int = 100
    mask_min_points: int = 1
    drop_background_queries: bool = True
    # scene generation (gen-data)
    gen_train_scenes: int = 50
    gen_val_scenes: int = 10
    scene_instance_count: tuple = (3, 6)
    scene_points_per_instance: tuple = (250, 600)
    scene_background_points: tuple = (800, 1400)
    scene_noise_sigma: float = 0.004
    scene_twin_prob: float = 0.35

    # fields that determine parameter shapes; the checkpoint hash covers these
    _ARCH_FIELDS = (
        "num_classes", "d_backbone", "d_model", "heads", "backbone_rounds",
        "backbone_neighborhood", "fourier_bands", "ffn_hidden",
        "num_scene_queries", "num_learnable_queries", "decoder_layers",
        "use_pos_encoding", "use_scene_update", "use_geo",
    )

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.decoder_layers < 1:
            raise ValueError("decoder_layers must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.backbone_neighborhood not in (6, 18, 26):
            raise ValueError("backbone_neighborhood must be 6, 18 or 26")
        if self.num_scene_queries + self.num_learnable_queries < 1:
            raise ValueError("query set would be empty")
        if self.steps < 0 or self.batch_scenes < 1:
            raise ValueError("steps must be >= 0 and batch_scenes >= 1")
        if self.geo_coordinate_regression and not self.use_geo:
            raise ValueError("geo_coordinate_regression needs use_geo")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def arch_hash(self) -> str:
        arch = {k: getattr(self, k) for k in self._ARCH_FIELDS}
        blob = json.dumps(arch, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: _coerce(cls, k, v) for k, v in raw.items()})
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return cls.from_dict(raw)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _coerce(cls, key: str, value):
    # YAML gives lists where the dataclass defaults are tuples
    field_type = {f.name: f.default for f in dataclasses.fields(cls)}
    if isinstance(field_type.get(key), tuple) and isinstance(value, list):
        return tuple(value)
    return value
