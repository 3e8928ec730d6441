"""
Berry localization heatmaps.

Heatmaps arrive from the point decoder as NPY v1.0 files (2-D,
little-endian float32/float64, C order) or as a plain-text fallback:
a header line "HF <width> <height>" followed by width*height decimals.
"""

import io
import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib import format as npy_format
from numpy.typing import NDArray

from vinecc.constants import HEATMAP_RANGE_TOLERANCE
from vinecc.errors import ArgumentError, FormatError, RangeError

logger = logging.getLogger(__name__)

NPY_MAGIC = b"\x93NUMPY"
TEXT_MAGIC = b"HF"
_SUPPORTED_DTYPES = ("<f4", "<f8")


@dataclass(frozen=True, eq=False)
class Heatmap:
    """
    Dense berry scores.

    Attributes:
        values: float64 array of shape (height, width), each in [0, 1]
        stride_factor: Downsampling factor of the producing model
    """
    values: NDArray[np.float64]
    stride_factor: int = 1

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ArgumentError(f"Heatmap must be a non-empty 2-D grid, got shape {values.shape}")
        if self.stride_factor < 1:
            raise ArgumentError(f"stride_factor must be >= 1, got {self.stride_factor}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def __repr__(self) -> str:
        return f"Heatmap(width={self.width}, height={self.height}, stride_factor={self.stride_factor})"


def _check_range(values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Reject values beyond the tolerance band, then clamp into [0, 1]."""
    low, high = -HEATMAP_RANGE_TOLERANCE, 1.0 + HEATMAP_RANGE_TOLERANCE
    bad = ~((values >= low) & (values <= high))
    if bad.any():
        row, col = (int(v) for v in np.argwhere(bad)[0])
        raise RangeError(
            f"{int(bad.sum())} heatmap value(s) outside [0, 1], "
            f"first at row {row}, col {col}: {values[row, col]!r}"
        )
    return np.clip(values, 0.0, 1.0)


def _load_npy(data: bytes) -> NDArray[np.float64]:
    stream = io.BytesIO(data)
    try:
        version = npy_format.read_magic(stream)
    except ValueError as e:
        raise FormatError(f"Bad NPY magic: {e}", offset=0)
    if version != (1, 0):
        raise FormatError(f"Unsupported NPY version {version[0]}.{version[1]}, expected 1.0")
    try:
        shape, fortran_order, dtype = npy_format.read_array_header_1_0(stream)
    except ValueError as e:
        raise FormatError(f"Bad NPY header: {e}", offset=stream.tell())

    if dtype.str not in _SUPPORTED_DTYPES:
        raise FormatError(f"Unsupported NPY dtype {dtype.str!r}, expected one of {_SUPPORTED_DTYPES}")
    if fortran_order:
        raise FormatError("Fortran-ordered NPY arrays are not supported")
    if len(shape) != 2:
        raise FormatError(f"Heatmap must be 2-D, got rank {len(shape)}")
    if shape[0] < 1 or shape[1] < 1:
        raise FormatError(f"Heatmap dimensions must be positive, got {shape}")

    offset = stream.tell()
    count = shape[0] * shape[1]
    if len(data) - offset < count * dtype.itemsize:
        raise FormatError(
            f"NPY payload holds {len(data) - offset} bytes, need {count * dtype.itemsize}",
            offset=offset,
        )
    payload = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return payload.reshape(shape).astype(np.float64)


def _load_text(data: bytes) -> NDArray[np.float64]:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise FormatError("Text heatmap must be ASCII", offset=e.start)
    tokens = text.split()
    if len(tokens) < 3 or tokens[0] != "HF":
        raise FormatError("Text heatmap header must be 'HF <width> <height>'", offset=0)
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise FormatError("Text heatmap width and height must be integers", offset=0)
    if width < 1 or height < 1:
        raise FormatError(f"Heatmap dimensions must be positive, got {width}x{height}")
    body = tokens[3:]
    if len(body) != width * height:
        raise FormatError(f"Text heatmap has {len(body)} values, expected {width * height}")
    try:
        values = np.array([float(t) for t in body], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"Text heatmap value is not a number: {e}")
    return values.reshape((height, width))


def load_heatmap(data: bytes, stride_factor: int = 1) -> Heatmap:
    """
    Load a heatmap from NPY v1.0 or text bytes.

    Args:
        data: File contents
        stride_factor: Downsampling factor of the producing model

    Returns:
        Heatmap with values clamped into [0, 1]

    Raises:
        FormatError: Unsupported container, dtype or rank
        RangeError: Values outside [-1e-6, 1 + 1e-6]
    """
    if data.startswith(NPY_MAGIC):
        values = _load_npy(data)
    elif data.lstrip().startswith(TEXT_MAGIC):
        values = _load_text(data)
    else:
        raise FormatError("Unrecognized heatmap format (expected NPY or 'HF' text)", offset=0)

    heatmap = Heatmap(values=_check_range(values), stride_factor=stride_factor)
    logger.debug(f"Loaded {heatmap!r}")
    return heatmap


def save_heatmap_npy(heatmap: Heatmap, dtype: str = "<f8") -> bytes:
    """
    Serialize a heatmap as NPY v1.0.

    Args:
        heatmap: Heatmap to write
        dtype: "<f4" or "<f8"

    Returns:
        NPY file bytes
    """
    if dtype not in _SUPPORTED_DTYPES:
        raise ArgumentError(f"dtype must be one of {_SUPPORTED_DTYPES}")
    stream = io.BytesIO()
    npy_format.write_array(stream, heatmap.values.astype(dtype), version=(1, 0), allow_pickle=False)
    return stream.getvalue()


def save_heatmap_text(heatmap: Heatmap) -> bytes:
    """Serialize a heatmap in the 'HF' text format (round-trip exact)."""
    lines = [f"HF {heatmap.width} {heatmap.height}"]
    for row in heatmap.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    return ("\n".join(lines) + "\n").encode("ascii")
