"""
Netpbm image files: grayscale PGM (P2/P5) and false-colour PPM (P6) error maps.
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.exceptions import FormatError, ParameterError, ShapeMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IMAGE_SUFFIXES = (".pgm", ".pnm")


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def _parse_header(data: bytes, path: PathLike) -> Tuple[bytes, List[int], int]:
    """
    Read the magic number and three integer fields of a netpbm header.

    Comments (``#`` to end of line) may appear between any two tokens.

    Returns:
        Tuple of (magic, [width, height, maxval], offset of the payload)
    """
    tokens: List[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError(f"{path}: truncated header")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])

    magic = tokens[0]
    try:
        fields = [int(t) for t in tokens[1:]]
    except ValueError:
        raise FormatError(f"{path}: malformed header fields {tokens[1:]}")
    # exactly one whitespace byte separates the header from a binary payload
    return magic, fields, pos + 1


def read_pgm(path: PathLike) -> np.ndarray:
    """
    Read a P2 or P5 grayscale image scaled to [0, 1].

    Args:
        path: File path

    Returns:
        ``float64`` image (values divided by maxval)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    data = path.read_bytes()
    magic, (width, height, maxval), offset = _parse_header(data, path)
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: unsupported magic {magic!r} (expected P2 or P5)")
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise FormatError(f"{path}: invalid dimensions {width}x{height} or maxval {maxval}")

    count = width * height
    if magic == b"P2":
        try:
            values = np.array(data[offset:].split(), dtype=np.int64)
        except ValueError:
            raise FormatError(f"{path}: non-numeric pixel data")
        if values.size < count:
            raise FormatError(f"{path}: truncated payload ({values.size} of {count} values)")
        values = values[:count]
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = data[offset:offset + count * dtype.itemsize]
        if len(payload) < count * dtype.itemsize:
            raise FormatError(
                f"{path}: truncated payload ({len(payload)} of {count * dtype.itemsize} bytes)"
            )
        values = np.frombuffer(payload, dtype=dtype).astype(np.int64)

    if np.any(values > maxval) or np.any(values < 0):
        raise FormatError(f"{path}: pixel values outside [0, {maxval}]")
    return values.reshape(height, width).astype(np.float64) / maxval


def quantize(img: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Clip to [0, 1] and round ``v * maxval`` half up."""
    return _round_half_up(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)


def write_pgm(img: np.ndarray, path: PathLike, maxval: int = 255, binary: bool = True) -> Path:
    """
    Write a grayscale image.

    Args:
        img: Image, clipped to [0, 1] on export
        path: Target file
        maxval: 255 or up to 65535 (16-bit big-endian payload)
        binary: P5 when True, P2 otherwise

    Returns:
        Path of the written file
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeMismatchError(f"write_pgm expects a 2D image, got shape {img.shape}")
    if not 0 < maxval <= 65535:
        raise ParameterError(f"maxval must lie in [1, 65535], got {maxval}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    values = quantize(img, maxval)
    height, width = img.shape
    if binary:
        header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
        dtype = ">u2" if maxval > 255 else "u1"
        path.write_bytes(header + values.astype(dtype).tobytes())
    else:
        lines = [f"P2\n{width} {height}\n{maxval}"]
        lines.extend(" ".join(str(v) for v in row) for row in values)
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def error_map_rgb(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """
    Diverging colour map of ``clamp(u - g, -1, 1)``.

    +1 is red, -1 is blue and 0 is white; channels interpolate linearly and
    round half up.
    """
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if u.shape != g.shape:
        raise ShapeMismatchError(f"error map: shapes {u.shape} and {g.shape} differ")
    e = np.clip(u - g, -1.0, 1.0)
    fade = 255.0 * (1.0 - np.abs(e))
    full = np.full_like(e, 255.0)
    red = np.where(e >= 0, full, fade)
    blue = np.where(e >= 0, fade, full)
    rgb = np.stack([red, fade, blue], axis=-1)
    return _round_half_up(rgb).astype(np.uint8)


def write_error_map(u: np.ndarray, g: np.ndarray, path: PathLike) -> Path:
    """Write the false-colour error map of ``u - g`` as a binary PPM."""
    rgb = error_map_rgb(u, g)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = rgb.shape[:2]
    path.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + rgb.tobytes())
    return path


def read_ppm(path: PathLike) -> np.ndarray:
    """Read a binary 8-bit PPM into an (H, W, 3) ``uint8`` array."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    data = path.read_bytes()
    magic, (width, height, maxval), offset = _parse_header(data, path)
    if magic != b"P6" or maxval != 255:
        raise FormatError(f"{path}: expected an 8-bit P6 file")
    payload = data[offset:offset + 3 * width * height]
    if len(payload) < 3 * width * height:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def read_image_directory(source_dir: PathLike) -> List[np.ndarray]:
    """
    Read every PGM/PNM file of a directory in sorted name order.

    Raises:
        FileNotFoundError: The directory does not exist
        ParameterError: The directory holds no grayscale images
    """
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {source_dir}")
    files = sorted(p for p in source_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ParameterError(f"no .pgm/.pnm images in {source_dir}")
    images = [read_pgm(p) for p in files]
    logger.info(f"Loaded {len(images)} images from {source_dir}")
    return images
