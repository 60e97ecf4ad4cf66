"""
A tour of the HOL descriptor
============================

Every grid point of a region gets a histogram of the other grid points,
binned by Chebyshev ring (squares 8, 16, ... px out) and by which side of
the point they fall on. Two points with similar surroundings inside their
regions get a small chi-square cost.
"""
import numpy as np

from sroireg.hdm import area_ratio_sigma, lambda_matrix
from sroireg.hol import BOTTOM, LEFT, RIGHT, TOP, build_hol, hol_cost_matrix
from sroireg.imagecore import grid_points

# An L-shaped region on a 96x96 canvas.
mask = np.zeros((96, 96), bool)
mask[8:88, 8:40] = True
mask[56:88, 8:88] = True
pts = grid_points(mask)
d = build_hol(pts)
print(f"{len(pts)} grid points, descriptor length {d.shape[1]}")

# The corner of the L sees most of the region above it and to its right.
corner = pts.points.tolist().index([12, 84])
rings = d[corner].reshape(-1, 4)
for k in range(4):
    print(f"ring {8 * (k + 1):3d} px  top {rings[k, TOP]} bottom {rings[k, BOTTOM]} "
          f"left {rings[k, LEFT]} right {rings[k, RIGHT]}")

# Shifting the region leaves every descriptor unchanged, so the cost
# matrix against the shifted copy has a zero diagonal.
shifted = grid_points(np.roll(np.roll(mask, 8, axis=0), -8, axis=1))
c = hol_cost_matrix(d, build_hol(shifted))
print("zero diagonal after shift:", not np.diag(c).any())
print(f"median off-diagonal cost {np.median(c[~np.eye(len(c), dtype=bool)]):.1f}")

# The decay weight is largest where both points sit at their centroids.
sigma = area_ratio_sigma(len(pts), len(shifted), omega=0.5)
lam = np.diag(lambda_matrix(pts, shifted, sigma))
far = np.argmax(np.abs(pts.points - pts.points.mean(axis=0)).sum(axis=1))
print(f"sigma {sigma:.2f}; decay weight max {lam.max():.3f}, at the farthest point {lam[far]:.3f}")
