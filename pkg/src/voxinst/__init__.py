"""Desk-scale 3D point-cloud instance segmentation.

Semantic-guided query initialization plus an interleaving transformer
decoder over superpoint tokens, trained end-to-end with bipartite
matching, on procedurally generated synthetic scenes.
"""

__version__ = "0.1.0"

from .config import RunConfig
from .model import SegmentationModel, model_from_checkpoint, save_checkpoint

__all__ = ["RunConfig", "SegmentationModel", "model_from_checkpoint", "save_checkpoint"]
