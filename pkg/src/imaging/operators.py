"""
Linear Operators for Periodic Image Restoration

This module provides the shared numerical substrate of both learning
pipelines: image validation, periodic convolution (direct and FFT based),
degradation operators (identity, blur, decimated blur), the forward
difference gradient and additive white Gaussian noise.

Conventions:
- Images are 2D ``float64`` arrays, row-major, nominal range [0, 1].
- A kernel with taps ``k`` and anchor ``c`` acts as
  ``(K x)[i] = sum_a k[a] * x[i - (a - c)]`` with periodic indexing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import fft

from src.exceptions import KernelSizeError, ParameterError, ShapeMismatchError

logger = logging.getLogger(__name__)

Shape = Tuple[int, int]


def as_image(values, name: str = "image") -> np.ndarray:
    """
    Validate and convert an array-like to an image.

    Args:
        values: 2D array-like of finite reals
        name: Name used in error messages

    Returns:
        ``float64`` array (a copy when a conversion was needed)
    """
    img = np.asarray(values, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2D, got shape {img.shape}")
    if img.size == 0:
        raise ShapeMismatchError(f"{name} is empty")
    if not np.all(np.isfinite(img)):
        raise ParameterError(f"{name} contains non-finite values")
    return img


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


@dataclass(frozen=True, eq=False)
class Kernel:
    """
    Convolution kernel with an explicit anchor.

    The taps are stored read-only; spectra are cached per image shape.
    """

    taps: np.ndarray
    anchor: Optional[Tuple[int, int]] = None
    _otf_cache: Dict[Shape, np.ndarray] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim == 1:
            taps = taps[np.newaxis, :]
        if taps.ndim != 2 or taps.size == 0:
            raise ShapeMismatchError(f"kernel taps must be a non-empty 2D array, got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ParameterError("kernel taps must be finite")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

        anchor = self.anchor
        if anchor is None:
            anchor = ((taps.shape[0] - 1) // 2, (taps.shape[1] - 1) // 2)
        anchor = (int(anchor[0]), int(anchor[1]))
        if not (0 <= anchor[0] < taps.shape[0] and 0 <= anchor[1] < taps.shape[1]):
            raise ParameterError(f"anchor {anchor} outside kernel support {taps.shape}")
        object.__setattr__(self, "anchor", anchor)

    @classmethod
    def delta(cls) -> "Kernel":
        """1x1 identity kernel."""
        return cls(np.ones((1, 1)))

    @property
    def shape(self) -> Shape:
        return self.taps.shape

    def otf(self, shape: Shape) -> np.ndarray:
        """Transfer function of the kernel on a periodic grid of ``shape``."""
        shape = (int(shape[0]), int(shape[1]))
        cached = self._otf_cache.get(shape)
        if cached is None:
            cached = kernel_otf(self.taps, self.anchor, shape)
            cached.flags.writeable = False
            self._otf_cache[shape] = cached
        return cached


def _check_fits(kernel_shape: Shape, shape: Shape) -> None:
    if kernel_shape[0] > shape[0] or kernel_shape[1] > shape[1]:
        raise KernelSizeError(f"kernel of size {kernel_shape} larger than image of size {shape}")


def kernel_otf(taps: np.ndarray, anchor: Tuple[int, int], shape: Shape) -> np.ndarray:
    """
    Optical transfer function of a kernel.

    Args:
        taps: Kernel taps
        anchor: Anchor tap (row, col)
        shape: Image shape

    Returns:
        Complex spectrum of shape ``shape``
    """
    taps = np.asarray(taps, dtype=np.float64)
    _check_fits(taps.shape, shape)
    padded = np.zeros(shape, dtype=np.float64)
    padded[: taps.shape[0], : taps.shape[1]] = taps
    padded = np.roll(padded, (-anchor[0], -anchor[1]), axis=(0, 1))
    return fft.fft2(padded)


def fft_convolve(img: np.ndarray, otf: np.ndarray) -> np.ndarray:
    """Periodic convolution with a precomputed transfer function."""
    return np.real(fft.ifft2(fft.fft2(img) * otf))


def fft_correlate(img: np.ndarray, otf: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`fft_convolve`."""
    return np.real(fft.ifft2(fft.fft2(img) * np.conj(otf)))


def periodic_convolve(img: np.ndarray, ker: Kernel, method: str = "fft") -> np.ndarray:
    """
    Circular convolution of an image with a kernel.

    Args:
        img: Input image
        ker: Kernel
        method: ``"fft"`` or ``"direct"`` (sum of shifted copies)

    Returns:
        Image of the same shape
    """
    _check_fits(ker.shape, img.shape)
    if method == "fft":
        return fft_convolve(img, ker.otf(img.shape))
    if method == "direct":
        out = np.zeros(img.shape, dtype=np.float64)
        for (a, b), tap in np.ndenumerate(ker.taps):
            if tap != 0.0:
                out += tap * np.roll(img, (a - ker.anchor[0], b - ker.anchor[1]), axis=(0, 1))
        return out
    raise ParameterError(f"unknown convolution method: {method}")


def adjoint_convolve(img: np.ndarray, ker: Kernel, method: str = "fft") -> np.ndarray:
    """
    Exact adjoint of :func:`periodic_convolve` (periodic correlation).

    Args:
        img: Input image
        ker: Kernel
        method: ``"fft"`` or ``"direct"``

    Returns:
        Image of the same shape
    """
    _check_fits(ker.shape, img.shape)
    if method == "fft":
        return fft_correlate(img, ker.otf(img.shape))
    if method == "direct":
        out = np.zeros(img.shape, dtype=np.float64)
        for (a, b), tap in np.ndenumerate(ker.taps):
            if tap != 0.0:
                out += tap * np.roll(img, (ker.anchor[0] - a, ker.anchor[1] - b), axis=(0, 1))
        return out
    raise ParameterError(f"unknown convolution method: {method}")


def tap_correlation(x: np.ndarray, y: np.ndarray, kernel_shape: Shape,
                    anchor: Tuple[int, int]) -> np.ndarray:
    """
    Derivative of ``<K x, y>`` with respect to the taps of ``K``.

    Entry ``a`` equals ``sum_i x[i - (a - anchor)] * y[i]``.

    Args:
        x: Image the kernel acts on
        y: Image paired with ``K x``
        kernel_shape: Shape of the kernel support
        anchor: Anchor of the kernel

    Returns:
        Array of shape ``kernel_shape``
    """
    _check_same_shape(x, y, "tap_correlation")
    _check_fits(kernel_shape, x.shape)
    corr = np.real(fft.ifft2(fft.fft2(y) * np.conj(fft.fft2(x))))
    rows = (np.arange(kernel_shape[0]) - anchor[0]) % x.shape[0]
    cols = (np.arange(kernel_shape[1]) - anchor[1]) % x.shape[1]
    return corr[np.ix_(rows, cols)]


# ----------------------------------------------------------------------
# Decimation and degradation operators
# ----------------------------------------------------------------------

def decimate(img: np.ndarray, factor: int) -> np.ndarray:
    """Keep rows and columns whose index is a multiple of ``factor``."""
    if img.shape[0] % factor or img.shape[1] % factor:
        raise ShapeMismatchError(f"image shape {img.shape} not divisible by factor {factor}")
    return img[::factor, ::factor].copy()


def zero_upsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Adjoint of :func:`decimate`: interleave zeros."""
    out = np.zeros((img.shape[0] * factor, img.shape[1] * factor), dtype=np.float64)
    out[::factor, ::factor] = img
    return out


@dataclass(frozen=True, eq=False)
class DegradationOp:
    """
    Forward model ``A`` of ``f = A u + e``.

    kind is one of ``"identity"``, ``"blur"`` or ``"decimated_blur"``.
    """

    kind: str
    kernel: Optional[Kernel] = None
    factor: int = 1

    KINDS = ("identity", "blur", "decimated_blur")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ParameterError(f"unknown degradation kind: {self.kind}")
        if self.kind == "identity":
            object.__setattr__(self, "kernel", None)
            object.__setattr__(self, "factor", 1)
        elif self.kernel is None:
            raise ParameterError(f"degradation kind {self.kind} needs a kernel")
        if self.kind == "blur":
            object.__setattr__(self, "factor", 1)
        if self.kind == "decimated_blur" and int(self.factor) < 2:
            raise ParameterError(f"decimation factor must be >= 2, got {self.factor}")
        object.__setattr__(self, "factor", int(self.factor))

    @classmethod
    def identity(cls) -> "DegradationOp":
        return cls("identity")

    @classmethod
    def blur(cls, kernel: Kernel) -> "DegradationOp":
        return cls("blur", kernel)

    @classmethod
    def decimated_blur(cls, kernel: Kernel, factor: int) -> "DegradationOp":
        return cls("decimated_blur", kernel, factor)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def output_shape(self, shape: Shape) -> Shape:
        """Shape of ``A u`` for ``u`` of the given shape."""
        if shape[0] % self.factor or shape[1] % self.factor:
            raise ShapeMismatchError(f"image shape {shape} not divisible by factor {self.factor}")
        return (shape[0] // self.factor, shape[1] // self.factor)

    def input_shape(self, shape: Shape) -> Shape:
        """Shape of ``A^T f`` for data ``f`` of the given shape."""
        return (shape[0] * self.factor, shape[1] * self.factor)

    def otf(self, shape: Shape) -> np.ndarray:
        """Blur transfer function on the image grid (ones for the identity)."""
        if self.kernel is None:
            return np.ones(shape, dtype=np.complex128)
        return self.kernel.otf(shape)

    def describe(self) -> str:
        if self.kind == "identity":
            return "identity"
        size = "x".join(str(s) for s in self.kernel.shape)
        if self.kind == "blur":
            return f"blur({size})"
        return f"decimated_blur({size}, d={self.factor})"


def apply_degradation(op: DegradationOp, img: np.ndarray) -> np.ndarray:
    """
    Apply the forward model.

    Args:
        op: Degradation operator
        img: Image in the unknown's space

    Returns:
        Data-space image
    """
    img = as_image(img)
    if op.kind == "identity":
        return img.copy()
    if op.kind == "decimated_blur":
        op.output_shape(img.shape)
    blurred = periodic_convolve(img, op.kernel)
    if op.kind == "blur":
        return blurred
    return decimate(blurred, op.factor)


def apply_degradation_adjoint(op: DegradationOp, img: np.ndarray) -> np.ndarray:
    """
    Apply ``A^T``.

    Args:
        op: Degradation operator
        img: Data-space image

    Returns:
        Image in the unknown's space
    """
    if op.kind == "identity":
        return np.array(img, dtype=np.float64, copy=True)
    if op.kind == "blur":
        return adjoint_convolve(img, op.kernel)
    return adjoint_convolve(zero_upsample(img, op.factor), op.kernel)


def apply_normal(op: DegradationOp, img: np.ndarray) -> np.ndarray:
    """``A^T A`` applied to an image."""
    return apply_degradation_adjoint(op, apply_degradation(op, img))


def initial_estimate(op: DegradationOp, f: np.ndarray) -> np.ndarray:
    """
    Starting point in the unknown's space built from the data.

    The data itself for same-size operators, nearest-neighbour
    upsampling for decimation.
    """
    if op.kind == "decimated_blur":
        return np.repeat(np.repeat(f, op.factor, axis=0), op.factor, axis=1).astype(np.float64)
    return np.array(f, dtype=np.float64, copy=True)


# ----------------------------------------------------------------------
# Discrete gradient
# ----------------------------------------------------------------------

class GradientField(NamedTuple):
    """Forward differences of an image (vertical, horizontal)."""

    vertical: np.ndarray
    horizontal: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.vertical, self.horizontal])


def grad_op(img: np.ndarray) -> GradientField:
    """Periodic forward differences ``(D^v u, D^h u)``."""
    return GradientField(np.roll(img, -1, axis=0) - img, np.roll(img, -1, axis=1) - img)


def grad_adjoint(gf) -> np.ndarray:
    """
    Exact adjoint of :func:`grad_op` (negative periodic divergence).

    Args:
        gf: ``GradientField`` or an array of shape (2, H, W)
    """
    pv, ph = gf[0], gf[1]
    _check_same_shape(pv, ph, "grad_adjoint")
    return (np.roll(pv, 1, axis=0) - pv) + (np.roll(ph, 1, axis=1) - ph)


GRADIENT_NORM_SQUARED = 8.0


def add_awgn(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """
    Add i.i.d. Gaussian noise.

    Args:
        img: Input image
        sigma: Noise standard deviation (>= 0)
        seed: Seed of the noise stream

    Returns:
        Noisy copy of the image
    """
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return img + sigma * rng.standard_normal(img.shape)
