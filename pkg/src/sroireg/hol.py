"""Hierarchical orientation-line (HOL) descriptors and their chi-square cost.

For every point of a region, HOL counts the other region points lying on
each concentric Chebyshev ring ``d = stride, 2*stride, ...`` and splits the
count into four directions. The descriptor therefore encodes where the point
sits inside the region's shape, independent of image appearance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import GridPointSet

TOP, BOTTOM, LEFT, RIGHT = range(4)
_ROW_CHUNK = 128


@dataclass(frozen=True)
class HOLParams:
    stride: int = 8
    k_max: int = 240  # exclusive

    def __post_init__(self):
        if self.stride <= 0 or self.k_max <= self.stride or self.k_max % self.stride:
            raise ValueError(f"invalid HOL params stride={self.stride} k_max={self.k_max}")

    @property
    def n_layers(self) -> int:
        return self.k_max // self.stride - 1

    @property
    def length(self) -> int:
        return 4 * self.n_layers


def ring_directions(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Direction index of offsets ``(dx, dy)``; diagonals go to left/right."""
    adx, ady = np.abs(dx), np.abs(dy)
    vertical = ady > adx
    return np.where(vertical, np.where(dy < 0, TOP, BOTTOM), np.where(dx < 0, LEFT, RIGHT))


def build_hol(pts: GridPointSet | np.ndarray, params: HOLParams = HOLParams()) -> np.ndarray:
    """HOL descriptors, shape ``(N, 4 * n_layers)``, layer-major.

    Column ``4 * (k // stride - 1) + direction`` counts the points at
    Chebyshev distance ``k`` in that direction.
    """
    p = np.asarray(pts.points if isinstance(pts, GridPointSet) else pts, dtype=np.int64).reshape(-1, 2)
    n = len(p)
    out = np.zeros((n, params.length), dtype=np.int64)
    if n < 2:
        return out
    dx = p[None, :, 0] - p[:, None, 0]
    dy = p[None, :, 1] - p[:, None, 1]
    cheb = np.maximum(np.abs(dx), np.abs(dy))
    if np.any(cheb % params.stride):
        raise ValueError(f"point offsets must be multiples of the stride {params.stride}")
    keep = (cheb > 0) & (cheb < params.k_max)
    rows, cols = np.nonzero(keep)
    layer = cheb[rows, cols] // params.stride - 1
    direction = ring_directions(dx[rows, cols], dy[rows, cols])
    flat = rows * params.length + layer * 4 + direction
    out.ravel()[:] = np.bincount(flat, minlength=n * params.length)
    return out


def chi2_cost(a, b) -> float:
    """Half chi-square distance between two histograms; empty bins add 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"descriptor lengths differ: {a.shape} vs {b.shape}")
    s = a + b
    d = (a - b) ** 2
    return 0.5 * float(np.divide(d, s, out=np.zeros_like(d), where=s > 0).sum())


def hol_cost_matrix(d_ir: np.ndarray, d_vi: np.ndarray) -> np.ndarray:
    """Pairwise :func:`chi2_cost`, shape ``(len(d_ir), len(d_vi))``."""
    a = np.asarray(d_ir, dtype=np.float64)
    b = np.asarray(d_vi, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"descriptor shapes are incompatible: {a.shape} vs {b.shape}")
    out = np.empty((len(a), len(b)))
    for start in range(0, len(a), _ROW_CHUNK):
        blk = a[start:start + _ROW_CHUNK, None, :]
        s = blk + b[None]
        d = (blk - b[None]) ** 2
        ratio = np.divide(d, s, out=np.zeros_like(d), where=s > 0)
        out[start:start + _ROW_CHUNK] = 0.5 * ratio.sum(axis=-1)
    return out
