"""Coordinate network, its optimizer, TV losses and sampling grids."""

from .network import (
    EncodingConfig,
    InrConfig,
    InrModel,
    encode,
    inr_backward,
    inr_forward,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamState, adam_step
from .regularizers import tv_axial, tv_spatial, tv_temporal
from .sampling import downsample, full_grid, jittered_grid, pixel_centers

__all__ = [
    "EncodingConfig",
    "InrConfig",
    "InrModel",
    "encode",
    "inr_forward",
    "inr_backward",
    "save_checkpoint",
    "load_checkpoint",
    "AdamState",
    "adam_step",
    "tv_spatial",
    "tv_temporal",
    "tv_axial",
    "jittered_grid",
    "full_grid",
    "downsample",
    "pixel_centers",
]
