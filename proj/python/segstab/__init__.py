"""Reproducibility metrics for brain-segmentation label volumes.

Thin wrapper over the compiled core: NIfTI label-map I/O, atlas ROI masks,
Dice / Surface Dice / HD95 in physical mm, nearest-neighbor label resampling,
and longitudinal trend fitting.
"""

from ._core import (
    BinaryMask,
    LabelVolume,
    PairMetrics,
    ParseError,
    RoiClass,
    RoiRegistry,
    RoiSpec,
    TrendFit,
    UsageError,
    default_registry,
    dice,
    extract_mask,
    fit_trend,
    hd95,
    load_registry,
    mape_percent,
    mask_volume_cm3,
    oracle,
    pair_metrics,
    read_affine_transform,
    read_label_volume,
    resample_labels,
    surface_dice,
    write_label_volume,
)

__all__ = [
    "BinaryMask",
    "LabelVolume",
    "PairMetrics",
    "ParseError",
    "RoiClass",
    "RoiRegistry",
    "RoiSpec",
    "TrendFit",
    "UsageError",
    "default_registry",
    "dice",
    "extract_mask",
    "fit_trend",
    "hd95",
    "load_registry",
    "mape_percent",
    "mask_volume_cm3",
    "oracle",
    "pair_metrics",
    "read_affine_transform",
    "read_label_volume",
    "resample_labels",
    "surface_dice",
    "write_label_volume",
]

__version__ = "0.1.0"
