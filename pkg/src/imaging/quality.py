"""Image quality measures."""

from typing import Iterable, Sequence

import numpy as np

from src.exceptions import ParameterError, ShapeMismatchError
from src.imaging.operators import as_image

# Returned instead of +inf for identical images.
PSNR_CAP = 300.0


def psnr(u: np.ndarray, g: np.ndarray, peak: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio in dB.

    Args:
        u: Estimate
        g: Reference
        peak: Peak signal value

    Returns:
        ``10*log10(peak^2 / MSE)``, capped at ``PSNR_CAP``
    """
    u = as_image(u, "estimate")
    g = as_image(g, "reference")
    if u.shape != g.shape:
        raise ShapeMismatchError(f"psnr: shapes {u.shape} and {g.shape} differ")
    mse = float(np.mean((u - g) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak ** 2 / mse), PSNR_CAP))


def mean_psnr(estimates: Sequence[np.ndarray], references: Iterable[np.ndarray]) -> float:
    """Dataset-averaged PSNR."""
    values = [psnr(u, g) for u, g in zip(estimates, references, strict=True)]
    if not values:
        raise ParameterError("mean_psnr needs at least one image pair")
    return float(np.mean(values))
