"""
Blur kernel constructors and the named blur settings used by the experiments.
"""

import logging
import math
from typing import Dict, Optional

import numpy as np

from src.exceptions import ParameterError
from src.imaging.operators import Kernel

logger = logging.getLogger(__name__)


def gaussian_kernel(sigma: float, width: Optional[int] = None) -> Kernel:
    """
    Sampled isotropic Gaussian truncated to ``width x width`` taps.

    Args:
        sigma: Standard deviation in pixels
        width: Support size; defaults to ``2*ceil(3*sigma) + 1``

    Returns:
        Normalized kernel centred on its middle tap
    """
    if sigma <= 0:
        raise ParameterError(f"gaussian sigma must be positive, got {sigma}")
    if width is None:
        width = 2 * math.ceil(3 * sigma) + 1
    if width < 1:
        raise ParameterError(f"gaussian width must be positive, got {width}")
    offsets = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    profile = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    taps = np.outer(profile, profile)
    return Kernel(taps / taps.sum())


def disk_kernel(diameter: int) -> Kernel:
    """Uniform kernel over the pixels whose centre lies within the disk."""
    if diameter < 1:
        raise ParameterError(f"disk diameter must be positive, got {diameter}")
    offsets = np.arange(diameter, dtype=np.float64) - (diameter - 1) / 2.0
    yy, xx = np.meshgrid(offsets, offsets, indexing="ij")
    taps = (yy ** 2 + xx ** 2 <= (diameter / 2.0) ** 2).astype(np.float64)
    return Kernel(taps / taps.sum())


def motion_kernel(length: int, angle: float = 0.0) -> Kernel:
    """
    Uniform kernel along a discretized line segment.

    Args:
        length: Segment length in pixels
        angle: Direction in radians, counter-clockwise from the horizontal

    Returns:
        Normalized kernel anchored at the segment centre
    """
    if length < 1:
        raise ParameterError(f"motion length must be positive, got {length}")
    half = (length - 1) / 2.0
    t = np.linspace(-half, half, 2 * length - 1)
    cols = np.floor(t * math.cos(angle) + 0.5).astype(int)
    rows = np.floor(-t * math.sin(angle) + 0.5).astype(int)
    pixels = sorted(set(zip(rows.tolist(), cols.tolist())))

    r0 = min(r for r, _ in pixels)
    c0 = min(c for _, c in pixels)
    height = max(r for r, _ in pixels) - r0 + 1
    width = max(c for _, c in pixels) - c0 + 1
    taps = np.zeros((height, width), dtype=np.float64)
    for r, c in pixels:
        taps[r - r0, c - c0] = 1.0
    return Kernel(taps / taps.sum(), anchor=(-r0, -c0))


def make_blur_kernel(kind: str, **params) -> Kernel:
    """
    Dispatch to a kernel constructor by kind.

    Args:
        kind: ``"gaussian"`` (width, sigma), ``"disk"`` (diameter) or
            ``"motion"`` (length, angle)

    Returns:
        Normalized kernel
    """
    builders = {
        "gaussian": gaussian_kernel,
        "disk": disk_kernel,
        "motion": motion_kernel,
    }
    if kind not in builders:
        raise ParameterError(f"unknown blur kind: {kind}")
    return builders[kind](**params)


# Named settings: FoE deblurring (gauss5, disk5, motion5), TV deblurring
# (gaussianA/B/C) and the near-delta blur of the super-resolution task.
BLUR_SETTINGS: Dict[str, Dict] = {
    "gauss5": {"kind": "gaussian", "width": 5, "sigma": 1.0},
    "disk5": {"kind": "disk", "diameter": 5},
    "motion5": {"kind": "motion", "length": 5, "angle": 0.0},
    "gaussianA": {"kind": "gaussian", "sigma": 0.5},
    "gaussianB": {"kind": "gaussian", "sigma": 1.0},
    "gaussianC": {"kind": "gaussian", "sigma": 1.5},
    "sr": {"kind": "gaussian", "width": 3, "sigma": 0.1},
}


def blur_kernel_by_name(name: str) -> Kernel:
    """Kernel of a named blur setting (``"delta"`` gives the identity kernel)."""
    if name == "delta":
        return Kernel.delta()
    if name not in BLUR_SETTINGS:
        raise ParameterError(
            f"unknown blur setting: {name} (known: {', '.join(sorted(BLUR_SETTINGS))}, delta)"
        )
    params = dict(BLUR_SETTINGS[name])
    return make_blur_kernel(params.pop("kind"), **params)
