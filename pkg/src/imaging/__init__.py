"""Operators, kernels and quality measures shared by both learning pipelines."""

from src.imaging.kernels import (
    BLUR_SETTINGS,
    blur_kernel_by_name,
    disk_kernel,
    gaussian_kernel,
    make_blur_kernel,
    motion_kernel,
)
from src.imaging.operators import (
    DegradationOp,
    GradientField,
    Kernel,
    add_awgn,
    adjoint_convolve,
    apply_degradation,
    apply_degradation_adjoint,
    as_image,
    decimate,
    grad_adjoint,
    grad_op,
    initial_estimate,
    periodic_convolve,
    tap_correlation,
    zero_upsample,
)
from src.imaging.quality import PSNR_CAP, mean_psnr, psnr

__all__ = [
    "BLUR_SETTINGS",
    "DegradationOp",
    "GradientField",
    "Kernel",
    "PSNR_CAP",
    "add_awgn",
    "adjoint_convolve",
    "apply_degradation",
    "apply_degradation_adjoint",
    "as_image",
    "blur_kernel_by_name",
    "decimate",
    "disk_kernel",
    "gaussian_kernel",
    "grad_adjoint",
    "grad_op",
    "initial_estimate",
    "make_blur_kernel",
    "mean_psnr",
    "motion_kernel",
    "periodic_convolve",
    "psnr",
    "tap_correlation",
    "zero_upsample",
]
