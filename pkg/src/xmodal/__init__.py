"""Desk-scale cross-modality (RGB/IR) person retrieval workbench."""

from .config import RunConfig
from .data import Dataset, DatasetSpec, generate_dataset, sample_batch
from .losses import LossConfig, quadruplet_loss, ranking_loss, total_loss, triplet_loss
from .network import Model, NetConfig, Switches
from .tensor import Tensor, backward, no_grad

__all__ = [
    "Dataset",
    "DatasetSpec",
    "LossConfig",
    "Model",
    "NetConfig",
    "RunConfig",
    "Switches",
    "Tensor",
    "backward",
    "generate_dataset",
    "no_grad",
    "quadruplet_loss",
    "ranking_loss",
    "sample_batch",
    "total_loss",
    "triplet_loss",
]
