"""Images, region masks and the stride-8 grid of feature points.

Images are plain 2-D ``float64`` arrays with intensities in ``[0, 1]``;
masks are 2-D ``bool`` arrays of the same shape (``True`` = inside the
region of interest). Everything downstream is indexed ``[row, col]`` while
point coordinates are ``(x, y)`` = ``(col, row)`` in full-resolution pixels.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CELL = 8
_HALF = CELL // 2
_MAJORITY = CELL * CELL // 2


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed raster files."""


def as_image(data) -> np.ndarray:
    """Validate and return ``data`` as a float64 image in [0, 1]."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    if img.size == 0:
        raise ValueError("image has a zero dimension")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def as_mask(data) -> np.ndarray:
    mask = np.asarray(data)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


# ---------------------------------------------------------------------------
# raster I/O

def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PGM header")
    return buf[start:pos], pos


def _read_pgm(buf: bytes) -> np.ndarray:
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise ImageFormatError(f"bad PGM header field {tok!r}") from exc
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError("PGM has a zero dimension")
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PGM (maxval 255) is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos:pos + width * height]
    if len(payload) != width * height:
        raise ImageFormatError("truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            if im.mode != "L":
                raise ImageFormatError(f"only 8-bit grayscale PNG is supported, got mode {im.mode}")
            arr = np.array(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot decode PNG {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageFormatError("PNG has a zero dimension")
    return arr


def read_raster(path) -> np.ndarray:
    """Read an 8-bit grayscale PGM (P5) or PNG as a ``uint8`` array."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if buf[:2] == b"P5":
        return _read_pgm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise ImageFormatError(f"{path}: not a binary PGM (P5) or PNG file")


def load_image(path) -> np.ndarray:
    return read_raster(path).astype(np.float64) / 255.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] intensities to uint8 with round-half-up."""
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_atomic(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as an 8-bit binary PGM."""
    raw = to_bytes(img)
    if raw.ndim != 2:
        raise ValueError("image must be 2-D")
    h, w = raw.shape
    write_atomic(path, b"P5\n%d %d\n255\n" % (w, h) + raw.tobytes())


def save_mask(mask: np.ndarray, path) -> None:
    save_image(as_mask(mask).astype(np.float64), path)


def load_mask(path, size: tuple[int, int]) -> np.ndarray:
    """Load a region mask for an image of ``size = (width, height)``.

    Full-resolution masks are thresholded at >127. Masks at 1/8 resolution
    (``ceil(width/8) x ceil(height/8)``) are expanded by 8x8 block replication.
    """
    width, height = size
    raw = read_raster(path)
    bits = raw > 127
    if bits.shape == (height, width):
        return bits
    coarse = (-(-height // CELL), -(-width // CELL))
    if bits.shape == coarse:
        return upsample_cells(bits)[:height, :width]
    raise ValueError(
        f"mask {path} is {bits.shape[1]}x{bits.shape[0]}; expected "
        f"{width}x{height} or {coarse[1]}x{coarse[0]}"
    )


def upsample_cells(cells: np.ndarray) -> np.ndarray:
    """Replicate every cell value over an 8x8 pixel block."""
    return np.kron(np.asarray(cells), np.ones((CELL, CELL), dtype=np.asarray(cells).dtype))


# ---------------------------------------------------------------------------
# grid points

@dataclass(frozen=True)
class GridPointSet:
    """Cell-centre feature points of a region, sorted row-major.

    ``points`` is an ``(N, 2)`` integer array of ``(x, y)`` coordinates.
    ``area`` is the point count, the region-size proxy used by the matcher.
    """

    points: np.ndarray
    centroid: np.ndarray = field(repr=False)
    max_centroid_dist: float

    @classmethod
    def from_points(cls, points) -> GridPointSet:
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        if len(pts):
            pts = np.unique(pts, axis=0)
            pts = pts[np.lexsort((pts[:, 0], pts[:, 1]))]
            centroid = pts.mean(axis=0)
            dmax = float(np.sqrt(((pts - centroid) ** 2).sum(axis=1)).max()) if len(pts) > 1 else 0.0
        else:
            centroid = np.full(2, np.nan)
            dmax = 0.0
        pts.setflags(write=False)
        centroid.setflags(write=False)
        return cls(pts, centroid, dmax)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def area(self) -> int:
        return len(self.points)

    @property
    def cells(self) -> np.ndarray:
        """``(N, 2)`` array of ``(row, col)`` grid-cell indices."""
        return (self.points[:, ::-1] - _HALF) // CELL

    def centroid_distances(self) -> np.ndarray:
        if not len(self.points):
            return np.zeros(0)
        return np.sqrt(((self.points - self.centroid) ** 2).sum(axis=1))


def cell_counts(mask: np.ndarray) -> np.ndarray:
    """Number of true pixels in every 8x8 cell, padding with False."""
    mask = as_mask(mask)
    h, w = mask.shape
    gh, gw = -(-h // CELL), -(-w // CELL)
    padded = np.zeros((gh * CELL, gw * CELL), dtype=bool)
    padded[:h, :w] = mask
    return padded.reshape(gh, CELL, gw, CELL).sum(axis=(1, 3))


def grid_points(mask: np.ndarray) -> GridPointSet:
    """Grid points at centres of cells holding at least 32 of 64 true pixels."""
    mask = as_mask(mask)
    h, w = mask.shape
    rows, cols = np.nonzero(cell_counts(mask) >= _MAJORITY)
    x = cols * CELL + _HALF
    y = rows * CELL + _HALF
    inside = (x < w) & (y < h)
    return GridPointSet.from_points(np.column_stack([x[inside], y[inside]]))
