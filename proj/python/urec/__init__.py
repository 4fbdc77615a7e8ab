"""Undersampled MRI reconstruction toolkit."""

from ._urec import (
    ArgumentError,
    Error,
    FormatError,
    IoError,
    Model,
    ShapeError,
    builtin_profiles,
    count_parameters,
    fft2c,
    gaussian_mask,
    ifft2c,
    mae,
    phantom,
    psnr,
    run_cli,
    ssim,
    zero_filled,
)

__all__ = [
    "ArgumentError",
    "Error",
    "FormatError",
    "IoError",
    "Model",
    "ShapeError",
    "builtin_profiles",
    "count_parameters",
    "fft2c",
    "gaussian_mask",
    "ifft2c",
    "mae",
    "phantom",
    "psnr",
    "run_cli",
    "ssim",
    "zero_filled",
]
