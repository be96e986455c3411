"""Temporal plug-in video denoising: Python bindings to the C++ core."""

from ._tapvd import (
    ConfigError,
    DataError,
    NumericError,
    VideoDenoiser,
    add_noise,
    deform_conv,
    load_srgb_video,
    make_toy,
    noise_descriptor,
    pack_raw_to_rgbg,
    psnr,
    read_png,
    ssim,
    temporal_coherence,
    unpack_rgbg_to_raw,
    write_png,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "VideoDenoiser",
    "add_noise",
    "deform_conv",
    "load_srgb_video",
    "make_toy",
    "noise_descriptor",
    "pack_raw_to_rgbg",
    "psnr",
    "read_png",
    "ssim",
    "temporal_coherence",
    "unpack_rgbg_to_raw",
    "write_png",
]
