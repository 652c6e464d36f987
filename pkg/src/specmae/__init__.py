"""Spectral-index-guided dynamic token masking for masked-autoencoder pretraining."""

from .masking import MaskPlan, plan_masking, saliency
from .model import ModelConfig
from .raster_io import Band, Raster, load_raster, save_raster
from .spectral import BandMap, IndexKind, compute_index, compute_knowledge_tensor
from .trainer import TrainConfig, pretrain

__version__ = "0.1.0"

__all__ = [
    "Band", "BandMap", "IndexKind", "MaskPlan", "ModelConfig", "Raster", "TrainConfig",
    "compute_index", "compute_knowledge_tensor", "load_raster", "plan_masking", "pretrain",
    "saliency", "save_raster",
]
