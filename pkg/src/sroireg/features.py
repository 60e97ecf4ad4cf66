"""Dense per-cell descriptors, the feature-grid interchange format,
strip-pool saliency and the dense-feature score matrix.

A feature grid holds one descriptor per 8x8 cell, ``data[row, col, :]``.
Descriptors are unit-length or exactly zero, so inner products are cosine
similarities bounded by 1.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import CELL, GridPointSet, as_image, upsample_cells, write_atomic

log = logging.getLogger(__name__)

MAGIC = b"FGRD"
_HEADER = struct.Struct("<III")
N_ORIENT = 8
RENORM_TOL = 1e-3


class FeatureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureGrid:
    data: np.ndarray
    renormalized: int = 0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature grid must be (grid_h, grid_w, dim), got {self.data.shape}")

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def at(self, pts: GridPointSet) -> np.ndarray:
        """Descriptors of the cells holding ``pts``, shape ``(N, dim)``."""
        cells = pts.cells
        if len(cells) and (
            cells.min() < 0 or cells[:, 0].max() >= self.grid_h or cells[:, 1].max() >= self.grid_w
        ):
            raise ValueError("grid point lies outside the feature grid")
        return self.data[cells[:, 0], cells[:, 1]]


def l2_normalize(desc: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norm = np.linalg.norm(desc, axis=-1, keepdims=True)
    out = np.zeros_like(desc)
    np.divide(desc, norm, out=out, where=norm > eps)
    return out


def _check_cells(img: np.ndarray) -> tuple[int, int]:
    h, w = img.shape
    if h % CELL or w % CELL:
        raise ValueError(f"image dimensions must be multiples of {CELL}, got {w}x{h}")
    return h // CELL, w // CELL


def central_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences; edge pixels are replicated so flat borders stay flat."""
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def orientation_planes(img: np.ndarray, unsigned: bool = False) -> np.ndarray:
    """Magnitude-weighted gradient orientation votes, shape ``(H, W, 8)``.

    Bins are centred at multiples of ``2*pi/8`` (``pi/8`` when ``unsigned``)
    and each vote is split linearly between the two nearest bins.
    """
    gx, gy = central_gradients(img)
    mag = np.hypot(gx, gy)
    period = np.pi if unsigned else 2.0 * np.pi
    t = np.mod(np.arctan2(gy, gx), period) / (period / N_ORIENT)
    lo = np.floor(t)
    frac = t - lo
    lo = lo.astype(np.int64) % N_ORIENT
    hi = (lo + 1) % N_ORIENT
    planes = np.zeros(img.shape + (N_ORIENT,))
    r, c = np.indices(img.shape)
    # lo != hi for every pixel, so plain fancy assignment cannot collide
    planes[r, c, lo] = mag * (1.0 - frac)
    planes[r, c, hi] += mag * frac
    return planes


def extract_gradhist(img, unsigned: bool = False) -> FeatureGrid:
    """128-d gradient histograms: 4x4 subcells x 8 orientations over the
    16x16 window centred on each cell."""
    img = as_image(img)
    gh, gw = _check_cells(img)
    planes = orientation_planes(img, unsigned)
    h, w = img.shape
    sub = planes.reshape(h // 4, 4, w // 4, 4, N_ORIENT).sum(axis=(1, 3))
    # one zero subcell of padding on each side: window of cell i spans subcells 2i-1 .. 2i+2
    sub = np.pad(sub, ((1, 1), (1, 1), (0, 0)))
    desc = np.empty((gh, gw, 4, 4, N_ORIENT))
    for a in range(4):
        for b in range(4):
            desc[:, :, a, b] = sub[a:a + 2 * gh:2, b:b + 2 * gw:2]
    return FeatureGrid(l2_normalize(desc.reshape(gh, gw, -1)))


def extract_meanvar(img) -> FeatureGrid:
    """64-d standardized raw intensities of each cell."""
    img = as_image(img)
    gh, gw = _check_cells(img)
    cells = img.reshape(gh, CELL, gw, CELL).transpose(0, 2, 1, 3).reshape(gh, gw, CELL * CELL)
    centred = cells - cells.mean(axis=-1, keepdims=True)
    flat = np.abs(centred).max(axis=-1, keepdims=True) <= 1e-12
    std = cells.std(axis=-1, keepdims=True)
    desc = np.where(flat, 0.0, centred / (std + 1e-6))
    return FeatureGrid(l2_normalize(desc))


EXTRACTORS = {
    "gradhist": extract_gradhist,
    "meanvar": extract_meanvar,
}


# ---------------------------------------------------------------------------
# interchange format

def save_feature_grid(grid: FeatureGrid, path) -> None:
    data = np.ascontiguousarray(grid.data, dtype="<f4")
    header = MAGIC + _HEADER.pack(grid.grid_h, grid.grid_w, grid.dim)
    write_atomic(path, header + data.tobytes())


def load_feature_grid(path) -> FeatureGrid:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 4 + _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    gh, gw, dim = _HEADER.unpack_from(buf, 4)
    payload = buf[4 + _HEADER.size:]
    expected = gh * gw * dim * 4
    if len(payload) < expected:
        raise FeatureFormatError(
            f"{path}: truncated payload, header declares {gh}x{gw}x{dim} = {gh * gw * dim} floats, "
            f"found {len(payload) // 4}"
        )
    if len(payload) > expected:
        raise FeatureFormatError(f"{path}: payload longer than header {gh}x{gw}x{dim} declares")
    data = np.frombuffer(payload, dtype="<f4").reshape(gh, gw, dim).copy()
    norm = np.linalg.norm(data.astype(np.float64), axis=-1)
    off = np.minimum(np.abs(norm), np.abs(norm - 1.0)) > RENORM_TOL
    n_bad = int(off.sum())
    if n_bad:
        log.warning("%s: re-normalized %d descriptors", path, n_bad)
        data[off] = (data[off] / norm[off][:, None]).astype(np.float32)
    return FeatureGrid(data, renormalized=n_bad)


# ---------------------------------------------------------------------------
# saliency

def strip_pool_saliency(grid: FeatureGrid) -> np.ndarray:
    """Row/column strip-pooled saliency in [0, 1], one value per cell."""
    x = np.asarray(grid.data, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty feature grid")
    row_pool = x.mean(axis=1)  # (H, C)
    col_pool = x.mean(axis=0)  # (W, C)
    combined = row_pool[:, None, :] + col_pool[None, :, :]
    sal = np.linalg.norm(combined, axis=-1)
    lo, hi = sal.min(), sal.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(sal)
    return (sal - lo) / (hi - lo)


def propose_mask(saliency: np.ndarray, threshold: float, size: tuple[int, int] | None = None) -> np.ndarray:
    """Full-resolution mask from thresholding a per-cell saliency map.

    ``size`` is ``(width, height)``; the replicated mask is cropped to it.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    mask = upsample_cells(np.asarray(saliency) >= threshold)
    if size is not None:
        mask = mask[:size[1], :size[0]]
    return mask


# ---------------------------------------------------------------------------
# scores

def deep_scores(f_ir: FeatureGrid, f_vi: FeatureGrid, pts_ir: GridPointSet, pts_vi: GridPointSet) -> np.ndarray:
    """Inner products between the descriptors of every ir/vi point pair."""
    if f_ir.dim != f_vi.dim:
        raise ValueError(f"descriptor dims differ: {f_ir.dim} vs {f_vi.dim}")
    a = f_ir.at(pts_ir).astype(np.float64)
    b = f_vi.at(pts_vi).astype(np.float64)
    return a @ b.T
