"""Optimal-transport bottleneck for segmentation (Python bindings)."""

from ._l2gnet import (
    CheckpointError,
    DatasetFormatError,
    Model,
    NumericalError,
    ShapeError,
    default_model_config,
    dice,
    embed,
    gen_synthetic,
    gradcheck,
    hausdorff,
    load_dataset,
    nystrom_embed,
    ot_align,
    position_weights,
    quantize,
    save_dataset,
    sinkhorn,
    sinkhorn_converge,
)

__all__ = [
    "CheckpointError",
    "DatasetFormatError",
    "Model",
    "NumericalError",
    "ShapeError",
    "default_model_config",
    "dice",
    "embed",
    "gen_synthetic",
    "gradcheck",
    "hausdorff",
    "load_dataset",
    "nystrom_embed",
    "ot_align",
    "position_weights",
    "quantize",
    "save_dataset",
    "sinkhorn",
    "sinkhorn_converge",
]
