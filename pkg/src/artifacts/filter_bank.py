"""
Filter-bank files for learned parameters.

Byte layout (little-endian):

    magic     5 bytes   b"BLRF1"
    kind      u8        0 = FoE, 1 = TV discretization
    symmetry  u8        0 = none, 1 = transpose, 2 = rot90
    L         u32
    rows      u32       kernel rows (FoE: kappa, TV: 2)
    cols      u32       kernel cols (FoE: kappa, TV: 3)
    payload   float64   FoE: alphas (L) then kernels (L*kappa*kappa)
                        TV: kernels1 (L*2*3) then kernels2 (L*3*2)

Metadata lives in a JSON sidecar ``<file>.json`` without timestamps.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from src.exceptions import FormatError
from src.models.foe import FoEParams
from src.models.tv_discretization import FilterFamily

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"BLRF1"
HEADER = struct.Struct("<5sBBIII")
KIND_FOE = 0
KIND_TV = 1
KIND_NAMES = {KIND_FOE: "foe", KIND_TV: "tvdisc"}
SYMMETRY_CODES = {"none": 0, "transpose": 1, "rot90": 2}
SYMMETRY_NAMES = {v: k for k, v in SYMMETRY_CODES.items()}
PAYLOAD_DTYPE = np.dtype("<f8")


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _write(path: PathLike, kind: int, symmetry: str, dims: Tuple[int, int, int],
           payload: np.ndarray, metadata: Optional[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = HEADER.pack(MAGIC, kind, SYMMETRY_CODES[symmetry], *dims)
    path.write_bytes(header + np.ascontiguousarray(payload, dtype=PAYLOAD_DTYPE).tobytes())

    meta = {"kind": KIND_NAMES[kind], "symmetry": symmetry, "L": dims[0]}
    meta.update(metadata or {})
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
    return path


def write_foe_params(params: FoEParams, path: PathLike,
                     metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write FoE weights and filters."""
    dims = (params.num_filters, params.kernel_size, params.kernel_size)
    payload = np.concatenate([params.alphas, params.kernels.ravel()])
    return _write(path, KIND_FOE, "none", dims, payload, metadata)


def write_filter_family(fam: FilterFamily, path: PathLike,
                        metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write a TV discretization filter family."""
    return _write(path, KIND_TV, fam.symmetry, (fam.num_filters, 2, 3), fam.flat(), metadata)


def read_filter_bank(path: PathLike) -> Tuple[Union[FoEParams, FilterFamily], Dict[str, Any]]:
    """
    Read a filter-bank file and its sidecar.

    Returns:
        Tuple of (FoEParams or FilterFamily, metadata dict; empty when the
        sidecar is missing)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"filter-bank file not found: {path}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, kind, sym_code, num_filters, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} (expected {MAGIC!r})")
    if kind not in KIND_NAMES:
        raise FormatError(f"{path}: unknown payload kind {kind}")
    if sym_code not in SYMMETRY_NAMES:
        raise FormatError(f"{path}: unknown symmetry code {sym_code}")

    if kind == KIND_FOE:
        if rows != cols:
            raise FormatError(f"{path}: FoE kernels must be square, got {rows}x{cols}")
        expected = num_filters * (1 + rows * cols)
    else:
        if (rows, cols) != (2, 3):
            raise FormatError(f"{path}: TV kernels must be 2x3/3x2, got {rows}x{cols}")
        expected = num_filters * 12
    payload = data[HEADER.size:]
    if len(payload) != expected * PAYLOAD_DTYPE.itemsize:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header declares "
            f"{expected * PAYLOAD_DTYPE.itemsize}"
        )
    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).astype(np.float64)

    if kind == KIND_FOE:
        model = FoEParams(values[:num_filters], values[num_filters:].reshape(num_filters, rows, cols))
    else:
        model = FilterFamily.from_flat(values, num_filters, SYMMETRY_NAMES[sym_code])

    metadata: Dict[str, Any] = {}
    meta_path = sidecar_path(path)
    if meta_path.exists():
        with open(meta_path) as fh:
            metadata = json.load(fh)
    return model, metadata
