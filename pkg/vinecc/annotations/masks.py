"""
Instance mask representations and codecs.

BinaryMask is a dense boolean grid; Rle is the COCO run-length form
(column-major, first run counts zeros). The compressed string codec
follows the cocoapi byte layout: 6-bit chunks offset by 48, sign-folded,
with runs from the fourth onward delta-coded against the run two back.
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from vinecc.errors import ArgumentError, EmptyMaskError, FormatError

BBox = Tuple[int, int, int, int]

_ALPHABET_START = 48
_ALPHABET_END = 48 + 63


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """
    A dense binary mask.

    Attributes:
        data: Boolean array of shape (height, width), row-major
    """
    data: NDArray[np.bool_]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ArgumentError(f"Mask must be 2-D, got shape {data.shape}")
        data = np.array(data, dtype=bool, order="C")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        """Create an empty mask of the given size."""
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        """Number of set pixels."""
        return int(np.count_nonzero(self.data))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self) -> int:
        return hash((self.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask(width={self.width}, height={self.height}, area={self.area})"


def _whole_number(value: Any, field: str) -> int:
    numeric = isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)
    if not numeric or not float(value).is_integer():
        raise FormatError(f"RLE {field} must hold integers, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class Rle:
    """
    Run-length encoded mask in COCO order.

    Attributes:
        size: (height, width)
        counts: Alternating run lengths, column-major, starting with zeros
    """
    size: Tuple[int, int]
    counts: Tuple[int, ...]

    def __post_init__(self):
        height, width = (_whole_number(v, "size") for v in self.size)
        if height < 0 or width < 0:
            raise FormatError(f"RLE size must be non-negative, got {self.size}")
        counts = tuple(_whole_number(c, "counts") for c in self.counts)
        if any(c < 0 for c in counts):
            raise FormatError("RLE counts must be non-negative")
        object.__setattr__(self, "size", (height, width))
        object.__setattr__(self, "counts", counts)

    @property
    def height(self) -> int:
        return self.size[0]

    @property
    def width(self) -> int:
        return self.size[1]

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> "Rle":
        """
        Build an Rle from a COCO RLE object.

        Args:
            obj: {"size": [h, w], "counts": list of ints or compressed string}

        Returns:
            Rle with explicit counts

        Raises:
            FormatError: If the object is malformed
        """
        try:
            size = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError):
            raise FormatError("RLE object needs 'size' and 'counts'")
        if not isinstance(size, (list, tuple)) or len(size) != 2:
            raise FormatError(f"RLE size must be [height, width], got {size!r}")
        if isinstance(counts, str):
            return rle_decompress(counts, (size[0], size[1]))
        if not isinstance(counts, (list, tuple)):
            raise FormatError("RLE counts must be a list or a string")
        return cls(size=(size[0], size[1]), counts=tuple(counts))

    def to_json(self, compressed: bool = True) -> Dict[str, Any]:
        """Serialize as a COCO RLE object."""
        counts: Union[str, List[int]] = rle_compress(self) if compressed else list(self.counts)
        return {"size": [self.height, self.width], "counts": counts}


MaskLike = Union[BinaryMask, Rle]


def as_binary_mask(mask: MaskLike) -> BinaryMask:
    """Return the dense form of a BinaryMask or Rle."""
    if isinstance(mask, Rle):
        return rle_decode(mask)
    return mask


# ── RLE codec ─────────────────────────────────────────────────────────────────

def rle_encode(mask: BinaryMask) -> Rle:
    """
    Encode a mask as canonical column-major RLE.

    The first count is the (possibly zero) length of the leading zero run;
    no interior run has zero length.

    Args:
        mask: Dense mask

    Returns:
        Rle with sum(counts) == height * width
    """
    flat = mask.data.ravel(order="F").astype(np.int8)
    if flat.size == 0:
        return Rle(size=mask.shape, counts=())

    change = np.flatnonzero(np.diff(flat)) + 1
    borders = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(borders)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return Rle(size=mask.shape, counts=tuple(runs.tolist()))


def rle_decode(rle: Rle) -> BinaryMask:
    """
    Decode an RLE into a dense mask.

    Args:
        rle: Run-length encoded mask

    Returns:
        BinaryMask of shape rle.size

    Raises:
        FormatError: If the counts do not sum to height * width
    """
    total = rle.height * rle.width
    counts = np.asarray(rle.counts, dtype=np.int64)
    if int(counts.sum()) != total:
        raise FormatError(
            f"RLE counts sum to {int(counts.sum())}, expected {total} "
            f"for size {rle.height}x{rle.width}"
        )
    values = (np.arange(counts.size) % 2).astype(bool)
    flat = np.repeat(values, counts)
    return BinaryMask(flat.reshape((rle.height, rle.width), order="F"))


def rle_compress(rle: Rle) -> str:
    """
    Compress RLE counts into the COCO ASCII string form.

    Args:
        rle: Run-length encoded mask

    Returns:
        String using only characters with codes 48-111
    """
    out = []
    counts = rle.counts
    for i, count in enumerate(counts):
        x = count
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + _ALPHABET_START))
    return "".join(out)


def rle_decompress(s: str, size: Sequence[int] = (0, 0)) -> Rle:
    """
    Decompress a COCO ASCII counts string.

    Args:
        s: Compressed counts
        size: (height, width) to attach to the result

    Returns:
        Rle with explicit counts

    Raises:
        FormatError: On characters outside the alphabet or a truncated run
    """
    counts: List[int] = []
    pos = 0
    n = len(s)
    while pos < n:
        x = 0
        k = 0
        more = True
        while more:
            if pos >= n:
                raise FormatError("Truncated RLE string", offset=pos)
            code = ord(s[pos])
            if not _ALPHABET_START <= code <= _ALPHABET_END:
                raise FormatError(f"Character {s[pos]!r} outside RLE alphabet", offset=pos)
            c = code - _ALPHABET_START
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return Rle(size=(size[0], size[1]), counts=tuple(counts))


# ── Geometry ──────────────────────────────────────────────────────────────────

def polygon_to_mask(poly: Sequence[Tuple[float, float]], width: int, height: int) -> BinaryMask:
    """
    Rasterize a polygon with the even-odd rule, sampling pixel centers.

    Pixel (col, row) is set iff its center (col + 0.5, row + 0.5) is inside.
    An edge counts toward a scanline when the line lies in its half-open
    vertical span, which keeps shared vertices from being counted twice.

    Args:
        poly: Vertices as (x, y) pairs
        width: Mask width in pixels
        height: Mask height in pixels

    Returns:
        BinaryMask of shape (height, width)

    Raises:
        ArgumentError: If fewer than 3 vertices are given
    """
    pts = np.asarray(poly, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ArgumentError(f"Polygon needs at least 3 (x, y) vertices, got {len(poly)}")

    xi, yi = pts[:, 0], pts[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    centers_x = np.arange(width, dtype=np.float64) + 0.5
    data = np.zeros((height, width), dtype=bool)

    for row in range(height):
        y = row + 0.5
        crossing = (yi > y) != (yj > y)
        if not crossing.any():
            continue
        a_x, a_y = xi[crossing], yi[crossing]
        b_x, b_y = xj[crossing], yj[crossing]
        x_int = (b_x - a_x) * (y - a_y) / (b_y - a_y) + a_x
        hits = np.count_nonzero(centers_x[:, None] < x_int[None, :], axis=1)
        data[row] = (hits % 2) == 1

    return BinaryMask(data)


def flat_to_vertices(flat: Sequence[float]) -> List[Tuple[float, float]]:
    """Convert a COCO flat [x0, y0, x1, y1, ...] list to vertex pairs."""
    if len(flat) % 2:
        raise FormatError(f"Polygon coordinate list has odd length {len(flat)}")
    return [(float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2)]


def polygons_to_mask(polygons: Iterable[Sequence[float]], width: int, height: int) -> BinaryMask:
    """
    Rasterize a COCO multi-part polygon segmentation.

    Parts are combined by union.

    Args:
        polygons: List of flat coordinate lists
        width: Mask width
        height: Mask height

    Returns:
        Union mask of all parts
    """
    data = np.zeros((height, width), dtype=bool)
    for flat in polygons:
        data |= polygon_to_mask(flat_to_vertices(flat), width, height).data
    return BinaryMask(data)


def mask_to_bbox(mask: BinaryMask) -> BBox:
    """
    Tight axis-aligned bounding box of the set pixels.

    Args:
        mask: Nonempty mask

    Returns:
        (x, y, w, h) in pixels

    Raises:
        EmptyMaskError: If no pixel is set
    """
    rows = np.flatnonzero(mask.data.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("Cannot derive a bounding box from an empty mask")
    cols = np.flatnonzero(mask.data.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return x0, y0, x1 - x0 + 1, y1 - y0 + 1
