"""Data-free recovery of pruned CNNs: a numpy autodiff engine, TinyNet, global
magnitude pruning, BatchNorm-statistics image synthesis and distillation."""
from .config import RunConfig
from .distill import distill, evaluate, kd_loss
from .dream import SynDataset, generate_dataset, synthesize_batch
from .nn import Model, load_checkpoint, save_checkpoint, tinynet
from .prune import MaskSet, apply_mask, compute_mask, prune

__version__ = "0.1.0"

__all__ = [
    "MaskSet", "Model", "RunConfig", "SynDataset", "apply_mask", "compute_mask", "distill",
    "evaluate", "generate_dataset", "kd_loss", "load_checkpoint", "prune", "save_checkpoint",
    "synthesize_batch", "tinynet",
]
