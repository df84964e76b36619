"""Raw-domain video super-resolution toolkit."""

from ._core import (
    Model,
    RawFrame,
    count_params_flops,
    crop_phase_safe,
    delinearize,
    estimate_homography,
    linearize,
    mosaic,
    normalize_raw,
    pack_bayer,
    procedural_clip,
    psnr,
    quantize_raw,
    resize_bicubic,
    ssim,
    synth_dataset,
    train,
    unpack_bayer,
    warp_homography,
)

__all__ = [
    "Model",
    "RawFrame",
    "count_params_flops",
    "crop_phase_safe",
    "delinearize",
    "estimate_homography",
    "linearize",
    "mosaic",
    "normalize_raw",
    "pack_bayer",
    "procedural_clip",
    "psnr",
    "quantize_raw",
    "resize_bicubic",
    "ssim",
    "synth_dataset",
    "train",
    "unpack_bayer",
    "warp_homography",
]

__version__ = "0.1.0"
