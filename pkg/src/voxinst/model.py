"""Full segmentation model: backbone, query initialization, decoder, loss.

The model owns the parameter store; per-scene geometry (voxel grid,
superpoints, sparse operators, loss targets) is computed once into a
``PreparedScene`` and reused across training steps.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .autodiff import Tensor
from .backbone import (FeatureExtractor, GeometricHead, SemanticHead,
                       coordinate_regression_loss, geometric_loss,
                       neighborhood_mean_operator, refine_coords, semantic_loss)
from .config import RunConfig
from .decoder import (DecoderConfig, FourierEncoder, InterleavingDecoder,
                      LayerPrediction, SceneState)
from .evaluation import ScoredInstance, instances_from_prediction
from .losses import LossWeights, total_loss
from .matching import Assignment, GroundTruthInstance, build_gt_instances, hungarian, pair_cost
from .nn import MLP, Linear, ParamStore
from .optim import AdamW
from .pointcloud import PointCloud, VoxelGrid, voxelize
from .queries import SceneQueryInitializer, mix_queries, select_voxels
from .superpoints import SuperpointPartition, pool_to_superpoints, segment_superpoints


@dataclasses.dataclass
class PreparedScene:
    cloud: PointCloud
    grid: VoxelGrid
    part: SuperpointPartition
    nbr_op: tuple
    gts: list[GroundTruthInstance]


@dataclasses.dataclass
class ForwardOutput:
    features: Tensor
    sem_logits: Tensor
    delta: Tensor | None
    refined: Tensor | None
    state: SceneState
    predictions: list[LayerPrediction]


class SegmentationModel:
    def __init__(self, cfg: RunConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = rng or np.random.default_rng(cfg.seed)
        store = ParamStore()
        c = cfg.num_classes
        d = cfg.d_model

        self.extractor = FeatureExtractor(store, cfg.d_backbone, cfg.backbone_rounds, rng)
        self.sem_head = SemanticHead(store, cfg.d_backbone, c, rng)
        self.geo_head = GeometricHead(store, cfg.d_backbone, rng) if cfg.use_geo else None
        self.sp_transform = MLP(store, "sp_transform", [cfg.d_backbone, d, d], rng)
        self.mask_features_proj = Linear(store, "mask_features", d, d, rng)
        self.query_init = (SceneQueryInitializer(store, cfg.d_backbone, d,
                                                 cfg.num_scene_queries, rng)
                           if cfg.num_scene_queries > 0 else None)
        self.learnable_queries = (store.add("queries.learnable",
                                            rng.normal(0.0, 0.02, size=(cfg.num_learnable_queries, d)))
                                  if cfg.num_learnable_queries > 0 else None)
        self.pos_encoder = (FourierEncoder(store, d, cfg.fourier_bands, rng)
                            if cfg.use_pos_encoding else None)
        self.decoder = InterleavingDecoder(store, d, c, DecoderConfig(
            layers=cfg.decoder_layers, tau=cfg.tau, heads=cfg.heads,
            fourier_bands=cfg.fourier_bands, ffn_hidden=cfg.ffn_hidden,
            use_pos_encoding=cfg.use_pos_encoding,
            use_scene_update=cfg.use_scene_update), rng)
        self.params = store
        self.loss_weights = LossWeights(cfg.lambda_cls, cfg.lambda_bce,
                                        cfg.lambda_dice, cfg.lambda_aux, cfg.dice_eps)

    # -- scene preparation -------------------------------------------

    def prepare(self, pc: PointCloud) -> PreparedScene:
        grid = voxelize(pc, self.cfg.voxel_size)
        part = segment_superpoints(grid, k=self.cfg.sp_knn, threshold=self.cfg.sp_threshold)
        nbr = neighborhood_mean_operator(grid, self.cfg.backbone_neighborhood)
        gts = build_gt_instances(pc, grid, part) if pc.has_labels else []
        return PreparedScene(cloud=pc, grid=grid, part=part, nbr_op=nbr, gts=gts)

    # -- forward -------------------------------------------------------

    def forward(self, prep: PreparedScene,
                capture_attention: list | None = None) -> ForwardOutput:
        cfg = self.cfg
        grid = prep.grid
        feats = self.extractor(grid, prep.nbr_op)
        sem_logits = self.sem_head(feats)

        delta = refined = None
        if self.geo_head is not None:
            raw = self.geo_head(feats)
            if cfg.geo_coordinate_regression:
                delta, refined = raw, raw
            else:
                bias = refine_coords(grid, raw)
                delta, refined = bias.delta, bias.refined
            sp_coords = pool_to_superpoints(refined, prep.part)
        else:
            sp_coords = pool_to_superpoints(Tensor.const(grid.coords), prep.part)

        sp_feats = pool_to_superpoints(self.sp_transform(feats), prep.part)
        if self.pos_encoder is not None:
            lo, hi = grid.bbox()
            pos = self.pos_encoder(sp_coords, lo, hi)
        else:
            pos = Tensor.const(np.zeros(sp_feats.shape))
        state = SceneState(features=sp_feats, coords=sp_coords, pos_encoding=pos,
                           mask_features=self.mask_features_proj(sp_feats))

        scene_q = self.query_init(feats, select_voxels(sem_logits.data, cfg.alpha)) \
            if self.query_init is not None else None
        queries = mix_queries(scene_q, self.learnable_queries)

        preds = self.decoder.decode(queries, state, capture_attention=capture_attention)
        return ForwardOutput(features=feats, sem_logits=sem_logits, delta=delta,
                             refined=refined, state=state, predictions=preds)

    # -- loss ------------------------------------------------------------

    def match_layers(self, out: ForwardOutput,
                     gts: list[GroundTruthInstance]) -> list[Assignment | None]:
        if not gts:
            return [None] * len(out.predictions)
        w = self.loss_weights
        return [
            hungarian(pair_cost(pred, gts, w.lambda_cls, w.lambda_bce,
                                w.lambda_dice, w.dice_eps).costs)
            for pred in out.predictions
        ]

    def loss(self, prep: PreparedScene, out: ForwardOutput) -> tuple[Tensor, dict]:
        grid = prep.grid
        sem = semantic_loss(out.sem_logits, grid.semantic)
        if self.geo_head is None:
            geo = Tensor.const(0.0)
        elif self.cfg.geo_coordinate_regression:
            geo = coordinate_regression_loss(out.refined, grid.gt_center, grid.center_valid)
        else:
            geo = geometric_loss(out.delta, grid.coords, grid.gt_center, grid.center_valid)
        assignments = self.match_layers(out, prep.gts)
        return total_loss(out.predictions, prep.gts, assignments, sem, geo, self.loss_weights)

    def training_loss(self, prep: PreparedScene) -> tuple[Tensor, dict]:
        return self.loss(prep, self.forward(prep))

    # -- inference -------------------------------------------------------

    def predict_instances(self, prep: PreparedScene) -> tuple[list[ScoredInstance], ForwardOutput]:
        out = self.forward(prep)
        final = out.predictions[-1]
        instances = instances_from_prediction(
            final, prep.part, prep.grid, max_instances=self.cfg.max_instances,
            min_points=self.cfg.mask_min_points,
            drop_background=self.cfg.drop_background_queries)
        return instances, out

    def fill_missing_grads(self) -> None:
        """Parameters outside the active graph (ablation toggles, empty
        selections) get explicit zero gradients before the update."""
        for _, p in self.params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# -- checkpoint format -------------------------------------------------------
#
# Single .npz archive. Keys:
#   param arrays under their store names, optimizer moments as m__<name> /
#   v__<name>, and "__meta__" holding a JSON string with the full config,
#   the architecture hash, the step counter, and the sampler RNG state.


def save_checkpoint(path, model: SegmentationModel, optimizer: AdamW | None = None,
                    step: int = 0, sampler_state: dict | None = None) -> None:
    arrays = model.params.state_arrays()
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    meta = {
        "format": 1,
        "config": model.cfg.to_dict(),
        "arch_hash": model.cfg.arch_hash(),
        "step": int(step),
        "sampler_state": sampler_state,
        "has_optimizer": optimizer is not None,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (meta, arrays). Model/optimizer loading is the caller's job
    so partial loads (params only) stay possible."""
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
        meta = json.loads(bytes(npz["__meta__"]).decode())
    return meta, arrays


def model_from_checkpoint(path) -> tuple[SegmentationModel, dict, dict[str, np.ndarray]]:
    meta, arrays = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    if cfg.arch_hash() != meta["arch_hash"]:
        raise ValueError("checkpoint architecture hash does not match its config")
    model = SegmentationModel(cfg)
    model.params.load_arrays({k: v for k, v in arrays.items()
                              if not k.startswith(("m__", "v__"))})
    return model, meta, arrays
