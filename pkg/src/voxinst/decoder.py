"""Interleaving transformer decoder over superpoint tokens.

Each layer first refines the instance queries with masked cross-attention
against position-reinforced scene features, then lets the scene features
attend back to the refined queries, so information flows both ways without
deep stacks. Every layer (and the pre-decoder state) emits masks and class
probabilities for per-layer supervision.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import (ShapeError, Tensor, concat_cols, log_softmax_rows,
                       softmax_rows)
from .nn import MLP, LayerNorm, Linear, MultiHeadAttention, ParamStore
from .pointcloud import unit_box_params
from .queries import QuerySet


@dataclasses.dataclass
class DecoderConfig:
    layers: int = 3
    tau: float = 0.5
    heads: int = 4
    fourier_bands: int = 6
    ffn_hidden: int = 64
    use_pos_encoding: bool = True
    use_scene_update: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"need at least one decoder layer, got {self.layers}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


@dataclasses.dataclass
class SceneState:
    """Superpoint-resolution tokens consumed by the decoder."""

    features: Tensor       # (n_s, d) pooled, transformed voxel features
    coords: Tensor         # (n_s, 3) pooled refined coordinates (graph-live)
    pos_encoding: Tensor   # (n_s, d) encoding of coords, zeros when disabled
    mask_features: Tensor  # (n_s, d) static projection used by the mask head

    @property
    def n_s(self) -> int:
        return self.features.shape[0]


@dataclasses.dataclass
class LayerPrediction:
    layer: int
    mask_logits: Tensor     # (q, n_s)
    soft_masks: Tensor      # (q, n_s) sigmoid of the logits
    binary_masks: np.ndarray  # (q, n_s) soft > tau
    class_logits: Tensor    # (q, c+1)
    class_probs: Tensor     # (q, c+1) rows sum to 1

    @property
    def class_log_probs(self) -> Tensor:
        return log_softmax_rows(self.class_logits)


class FourierEncoder:
    """sin/cos features of box-normalized coordinates, mapped to width d.

    The normalizing box comes from raw voxel coordinates (constant data),
    so the encoding stays smooth in the refined coordinates and gradients
    flow back into the offset head.
    """

    def __init__(self, store: ParamStore, d: int, bands: int, rng: np.random.Generator):
        self.bands = bands
        self.proj = Linear(store, "pos_enc.proj", 6 * bands, d, rng)

    def features(self, coords: Tensor, lo: np.ndarray, hi: np.ndarray) -> Tensor:
        scale, offset = unit_box_params(lo, hi)
        x = coords * Tensor.const(scale) + Tensor.const(offset)
        parts = []
        for b in range(self.bands):
            arg = x * (np.pi * 2.0**b)
            parts.append(arg.sin())
            parts.append(arg.cos())
        return concat_cols(parts)

    def __call__(self, coords: Tensor, lo: np.ndarray, hi: np.ndarray) -> Tensor:
        return self.proj(self.features(coords, lo, hi))


def attention_mask(prev_soft: np.ndarray | None, tau: float, shape: tuple[int, int]) -> Tensor:
    """Additive mask: -inf where the previous soft score fell below tau.

    A query row with every superpoint masked is reset to all-zeros so its
    softmax stays defined. Passing ``prev_soft=None`` (no earlier
    prediction) yields the all-zeros mask.
    """
    if prev_soft is None:
        return Tensor.const(np.zeros(shape))
    prev_soft = np.asarray(prev_soft, dtype=np.float64)
    if prev_soft.shape != shape:
        raise ShapeError(f"soft scores {prev_soft.shape} != expected {shape}")
    blocked = prev_soft < tau
    mask = np.where(blocked, -np.inf, 0.0)
    mask[blocked.all(axis=1)] = 0.0
    return Tensor.const(mask)


class QueryRefineBlock:
    """Masked cross-attention into the scene, query self-attention, FFN.

    Pre-norm residual wiring: zeroing a branch's output projection leaves
    the queries untouched.
    """

    def __init__(self, store: ParamStore, name: str, d: int, heads: int,
                 ffn_hidden: int, rng: np.random.Generator):
        self.norm_cross = LayerNorm(store, f"{name}.norm_cross", d)
        self.cross = MultiHeadAttention(store, f"{name}.cross", d, heads, rng)
        self.norm_self = LayerNorm(store, f"{name}.norm_self", d)
        self.self_attn = MultiHeadAttention(store, f"{name}.self", d, heads, rng)
        self.norm_ffn = LayerNorm(store, f"{name}.norm_ffn", d)
        self.ffn = MLP(store, f"{name}.ffn", [d, ffn_hidden, d], rng)

    def __call__(self, queries: Tensor, scene_kv: Tensor, mask: Tensor,
                 capture: list | None = None) -> Tensor:
        normed = self.norm_cross(queries)
        if capture is None:
            attended = self.cross(normed, scene_kv, scene_kv, mask)
        else:
            attended, w = self.cross(normed, scene_kv, scene_kv, mask, return_weights=True)
            capture.append(("cross", w, mask.data.copy()))
        x = queries + attended
        normed = self.norm_self(x)
        x = x + self.self_attn(normed, normed, normed)
        return x + self.ffn(self.norm_ffn(x))


class SceneUpdateBlock:
    """Superpoints attend to the refined queries (unmasked), then FFN."""

    def __init__(self, store: ParamStore, name: str, d: int, heads: int,
                 ffn_hidden: int, rng: np.random.Generator):
        self.norm_cross = LayerNorm(store, f"{name}.norm_cross", d)
        self.cross = MultiHeadAttention(store, f"{name}.cross", d, heads, rng)
        self.norm_ffn = LayerNorm(store, f"{name}.norm_ffn", d)
        self.ffn = MLP(store, f"{name}.ffn", [d, ffn_hidden, d], rng)

    def __call__(self, scene_feats: Tensor, queries: Tensor, pos: Tensor) -> Tensor:
        q_in = self.norm_cross(scene_feats) + pos
        x = scene_feats + self.cross(q_in, queries, queries)
        return x + self.ffn(self.norm_ffn(x))


class PredictionHead:
    """Shared mask head (normalize + affine, dot with mask features) and
    shallow class MLP; one instance serves every decoder layer."""

    def __init__(self, store: ParamStore, d: int, num_classes: int, rng: np.random.Generator):
        self.mask_norm = LayerNorm(store, "mask_head.norm", d)
        self.mask_proj = Linear(store, "mask_head.proj", d, d, rng)
        self.cls_mlp = MLP(store, "cls_head", [d, d, num_classes + 1], rng)

    def __call__(self, queries: Tensor, mask_features: Tensor, tau: float,
                 layer: int) -> LayerPrediction:
        if queries.shape[1] != mask_features.shape[1]:
            raise ShapeError(f"query width {queries.shape} != mask features {mask_features.shape}")
        embed = self.mask_proj(self.mask_norm(queries))
        logits = embed @ mask_features.t()
        soft = logits.sigmoid()
        cls_logits = self.cls_mlp(queries)
        return LayerPrediction(
            layer=layer,
            mask_logits=logits,
            soft_masks=soft,
            binary_masks=soft.data > tau,
            class_logits=cls_logits,
            class_probs=softmax_rows(cls_logits),
        )


class InterleavingDecoder:
    """L layers of alternating query refinement and scene update."""

    def __init__(self, store: ParamStore, d: int, num_classes: int,
                 cfg: DecoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.refine = [
            QueryRefineBlock(store, f"decoder.{i}.refine", d, cfg.heads, cfg.ffn_hidden, rng)
            for i in range(cfg.layers)
        ]
        self.update = [
            SceneUpdateBlock(store, f"decoder.{i}.update", d, cfg.heads, cfg.ffn_hidden, rng)
            for i in range(cfg.layers)
        ] if cfg.use_scene_update else []
        self.head = PredictionHead(store, d, num_classes, rng)

    def decode(self, queries: QuerySet, state: SceneState,
               capture_attention: list | None = None) -> list[LayerPrediction]:
        """Run all layers; returns layers+1 predictions (index 0 comes from
        the initial queries and seeds the first attention mask)."""
        cfg = self.cfg
        q_t = queries.tensor
        feats = state.features
        preds = [self.head(q_t, state.mask_features, cfg.tau, layer=0)]
        for ell in range(1, cfg.layers + 1):
            mask = attention_mask(preds[-1].soft_masks.data, cfg.tau,
                                  (q_t.shape[0], state.n_s))
            scene_kv = feats + state.pos_encoding if cfg.use_pos_encoding else feats
            layer_capture = [] if capture_attention is not None else None
            q_t = self.refine[ell - 1](q_t, scene_kv, mask, capture=layer_capture)
            if cfg.use_scene_update:
                pos = state.pos_encoding if cfg.use_pos_encoding else \
                    Tensor.const(np.zeros(state.pos_encoding.shape))
                feats = self.update[ell - 1](feats, q_t, pos)
            preds.append(self.head(q_t, state.mask_features, cfg.tau, layer=ell))
            if capture_attention is not None:
                capture_attention.append((ell, layer_capture))
        return preds
