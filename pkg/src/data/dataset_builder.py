"""
Dataset Builder Module for Bilevel Restoration Learning.

This module synthesizes the training and test pairs (ground truth g_j,
degraded f_j) used by both learning pipelines:
- binary edge images with equi-spaced orientations and sub-pixel shifts
- random patches cut from a directory of grayscale images
- degradation by identity, periodic blur or blur + decimation, optionally
  computed on a reflexively padded image and cropped back
- additive white Gaussian noise with per-sample seeds
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ParameterError, ShapeMismatchError
from src.imaging.kernels import blur_kernel_by_name
from src.imaging.operators import (
    DegradationOp,
    add_awgn,
    apply_degradation,
    decimate,
    periodic_convolve,
)

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]

PADDINGS = ("periodic", "reflexive_crop")

# Test edge sets use a seed stream disjoint from training seeds.
TEST_SEED_OFFSET = 1_000_003


def _to_python_type(value):
    """Convert NumPy types to native Python types for JSON serialization."""
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


# ----------------------------------------------------------------------
# Specifications
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeSetSpec:
    """Edge images with orientations ``2 j pi / count``."""

    count: int = 64
    size: int = 64
    seed: int = 42
    test_count: Optional[int] = None

    def __post_init__(self):
        if self.count < 1:
            raise ParameterError(f"edge set count must be >= 1, got {self.count}")
        if self.size < 2:
            raise ParameterError(f"edge image size must be >= 2, got {self.size}")
        if self.test_count is not None and self.test_count < 1:
            raise ParameterError(f"test_count must be >= 1, got {self.test_count}")


@dataclass(frozen=True)
class PatchSetSpec:
    """Random patches from every ``*.pgm`` / ``*.pnm`` in a directory."""

    source_dir: str
    patches_per_image: int = 3
    patch_size: int = 100
    seed: int = 42

    def __post_init__(self):
        if self.patches_per_image < 1:
            raise ParameterError(f"patches_per_image must be >= 1, got {self.patches_per_image}")
        if self.patch_size < 1:
            raise ParameterError(f"patch_size must be >= 1, got {self.patch_size}")


@dataclass(frozen=True)
class DegradationSpec:
    """Named blur, noise level, decimation factor and boundary handling."""

    blur: str = "gauss5"
    noise_sigma: float = 0.01
    factor: int = 1
    padding: str = "periodic"

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.factor < 1:
            raise ParameterError(f"decimation factor must be >= 1, got {self.factor}")
        if self.padding not in PADDINGS:
            raise ParameterError(f"unknown padding: {self.padding} (known: {', '.join(PADDINGS)})")


def build_operator(spec: DegradationSpec) -> DegradationOp:
    """Degradation operator of a specification."""
    if spec.blur == "delta" and spec.factor == 1:
        return DegradationOp.identity()
    kernel = blur_kernel_by_name(spec.blur)
    if spec.factor == 1:
        return DegradationOp.blur(kernel)
    return DegradationOp.decimated_blur(kernel, spec.factor)


# ----------------------------------------------------------------------
# Generators
# ----------------------------------------------------------------------

def gen_edge_image(theta: float, shift: float, size: int) -> np.ndarray:
    """
    Binary half-plane image.

    Pixel (i, j) is 1 where ``(j - c) cos(theta) + (i - c) sin(theta) >= shift``
    with ``c = (size - 1) / 2``.
    """
    if size < 2:
        raise ParameterError(f"edge image size must be >= 2, got {size}")
    c = (size - 1) / 2.0
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    level = (cols - c) * math.cos(theta) + (rows - c) * math.sin(theta)
    return (level >= shift).astype(np.float64)


def edge_orientations(count: int, offset: float = 0.0) -> np.ndarray:
    return offset + 2.0 * np.pi * np.arange(count) / count


def extract_patches(sources: Sequence[np.ndarray], patches_per_image: int, patch_size: int,
                    seed: int) -> Tuple[List[np.ndarray], List[Tuple[int, int, int]]]:
    """
    Cut random square patches.

    Args:
        sources: Source images
        patches_per_image: Patches per source image
        patch_size: Patch side length
        seed: Random seed of the corner positions

    Returns:
        Tuple of (patches, offsets) with offsets ``(image index, row, col)``
    """
    rng = np.random.default_rng(seed)
    patches, offsets = [], []
    for idx, img in enumerate(sources):
        if patch_size > img.shape[0] or patch_size > img.shape[1]:
            raise ShapeMismatchError(
                f"patch size {patch_size} larger than source image {idx} of shape {img.shape}"
            )
        for _ in range(patches_per_image):
            r = int(rng.integers(0, img.shape[0] - patch_size + 1))
            c = int(rng.integers(0, img.shape[1] - patch_size + 1))
            patches.append(img[r:r + patch_size, c:c + patch_size].copy())
            offsets.append((idx, r, c))
    return patches, offsets


def degrade(g: np.ndarray, op: DegradationOp, padding: str = "periodic") -> np.ndarray:
    """
    Noise-free degradation with the chosen boundary handling.

    ``reflexive_crop`` blurs a symmetrically padded copy and crops it back
    before decimation.
    """
    if padding not in PADDINGS:
        raise ParameterError(f"unknown padding: {padding}")
    if padding == "periodic" or op.is_identity:
        return apply_degradation(op, g)

    rows, cols = op.kernel.shape
    pad = max(rows, cols)
    pad = op.factor * math.ceil(pad / op.factor)
    padded = np.pad(g, pad, mode="symmetric")
    blurred = periodic_convolve(padded, op.kernel)[pad:pad + g.shape[0], pad:pad + g.shape[1]]
    if op.kind == "decimated_blur":
        return decimate(blurred, op.factor)
    return blurred


def degrade_pair(g: np.ndarray, op: DegradationOp, sigma: float, seed: int,
                 padding: str = "periodic") -> Pair:
    """Ground truth and its degraded, noisy observation."""
    f = add_awgn(degrade(g, op, padding), sigma, seed)
    return g, f


def gen_edge_dataset(spec: EdgeSetSpec, degradation: DegradationSpec,
                     split: str = "train") -> List[Pair]:
    """
    Degraded edge images for one split.

    Training orientations are ``2 j pi / s``; the test split is rotated by
    ``pi / s`` and draws shifts and noise from an independent seed stream.
    """
    if split not in ("train", "test"):
        raise ParameterError(f"unknown split: {split}")
    op = build_operator(degradation)
    if split == "train":
        count, seed, offset = spec.count, spec.seed, 0.0
    else:
        count = spec.test_count or spec.count
        seed = spec.seed + TEST_SEED_OFFSET
        offset = np.pi / count
    op.output_shape((spec.size, spec.size))

    shifts = np.random.default_rng(seed).uniform(-0.5, 0.5, count)
    pairs = []
    for j, theta in enumerate(edge_orientations(count, offset)):
        g = gen_edge_image(theta, shifts[j], spec.size)
        pairs.append(degrade_pair(g, op, degradation.noise_sigma, seed + j, degradation.padding))
    return pairs


# ----------------------------------------------------------------------
# Stateful builder
# ----------------------------------------------------------------------

class TrainingSetBuilder:
    """
    Seeded construction of training/test sets with logged statistics.
    """

    def __init__(self, degradation: DegradationSpec, random_state: int = 42):
        """
        Initialize the builder.

        Args:
            degradation: Degradation applied to every ground truth
            random_state: Seed of the noise streams
        """
        self.degradation = degradation
        self.random_state = random_state
        self.op = build_operator(degradation)
        self.build_stats: Dict[str, Dict] = {}

    def _record(self, name: str, pairs: Sequence[Pair]) -> None:
        stats = {
            "count": len(pairs),
            "shape": list(pairs[0][0].shape) if pairs else [],
            "data_shape": list(pairs[0][1].shape) if pairs else [],
            "noise_sigma": self.degradation.noise_sigma,
            "operator": self.op.describe(),
        }
        self.build_stats[name] = {k: _to_python_type(v) for k, v in stats.items()}
        logger.info(
            f"Built {name}: {stats['count']} pairs, truth {tuple(stats['shape'])}, "
            f"data {tuple(stats['data_shape'])}, {stats['operator']}, sigma={stats['noise_sigma']}"
        )

    def edge_sets(self, spec: EdgeSetSpec) -> Tuple[List[Pair], List[Pair]]:
        """Training and test edge pairs."""
        train = gen_edge_dataset(spec, self.degradation, "train")
        test = gen_edge_dataset(spec, self.degradation, "test")
        self._record("edge_train", train)
        self._record("edge_test", test)
        return train, test

    def patch_set(self, spec: PatchSetSpec) -> List[Pair]:
        """Degraded random patches from a directory of grayscale images."""
        from src.artifacts.image_io import read_image_directory

        sources = read_image_directory(spec.source_dir)
        patches, _ = extract_patches(sources, spec.patches_per_image, spec.patch_size, spec.seed)
        pairs = [
            degrade_pair(g, self.op, self.degradation.noise_sigma, self.random_state + j,
                         self.degradation.padding)
            for j, g in enumerate(patches)
        ]
        self._record("patches", pairs)
        return pairs

    def export_dataset(self, pairs: Sequence[Pair], out_dir: Path, name: str) -> Path:
        """
        Write pairs as 16-bit PGM files plus a JSON manifest.

        Returns:
            Path of the manifest
        """
        from src.artifacts.image_io import write_pgm

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for j, (g, f) in enumerate(pairs):
            truth = out_dir / f"{name}_{j:03d}_truth.pgm"
            data = out_dir / f"{name}_{j:03d}_data.pgm"
            write_pgm(g, truth, maxval=65535)
            write_pgm(f, data, maxval=65535)
            entries.append({"truth": truth.name, "data": data.name})

        manifest = out_dir / f"{name}_manifest.json"
        with open(manifest, "w") as fh:
            json.dump({
                "name": name,
                "degradation": {
                    "blur": self.degradation.blur,
                    "noise_sigma": self.degradation.noise_sigma,
                    "factor": self.degradation.factor,
                    "padding": self.degradation.padding,
                },
                "stats": self.build_stats,
                "pairs": entries,
            }, fh, indent=2, sort_keys=True)
        logger.info(f"✅ Exported {len(entries)} pairs to {out_dir}")
        return manifest


def load_dataset(manifest: Path) -> List[Pair]:
    """
    Read pairs written by ``TrainingSetBuilder.export_dataset``.

    Args:
        manifest: Path of the JSON manifest; image paths are relative to it

    Returns:
        List of (ground truth, degraded) pairs in manifest order
    """
    from src.artifacts.image_io import read_pgm

    manifest = Path(manifest)
    with open(manifest) as fh:
        entries = json.load(fh)["pairs"]
    root = manifest.parent
    pairs = [(read_pgm(root / e["truth"]), read_pgm(root / e["data"])) for e in entries]
    logger.info(f"Loaded {len(pairs)} pairs from {manifest}")
    return pairs


def build_edge_sets(spec: EdgeSetSpec, degradation: DegradationSpec) -> Tuple[List[Pair], List[Pair]]:
    """
    Convenience function to build the training and test edge sets.
    """
    return TrainingSetBuilder(degradation, spec.seed).edge_sets(spec)
