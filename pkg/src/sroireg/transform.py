"""Thin-plate splines, homographies and inverse-mapped bilinear warping.

Both models map ``(N, 2)`` arrays of ``(x, y)`` points through ``apply``.
:func:`warp_image` treats its model as the *inverse* map, output pixel ->
source location, so callers fit it from destination points to source points.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

SOLVE_RTOL = 1e-8
_SNAP = 1e-9


class FitError(ValueError):
    """Raised when a model cannot be fitted to the given correspondences."""


def _as_points(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ValueError(f"points must have shape (..., 2), got {arr.shape}")
    return arr


def tps_kernel(r: np.ndarray) -> np.ndarray:
    """Thin-plate radial basis ``r^2 log r`` with ``U(0) = 0``."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


@dataclass(frozen=True)
class TPSModel:
    control_points: np.ndarray  # (N, 2)
    weights: np.ndarray  # (N, 2)
    affine: np.ndarray  # (3, 2), rows act on [1, x, y]
    regularization: float = 0.0

    def apply(self, p) -> np.ndarray:
        return tps_apply(self, p)

    def bending_energy(self) -> float:
        k = tps_kernel(_pairwise(self.control_points, self.control_points))
        return float(np.trace(self.weights.T @ k @ self.weights))

    def to_text(self) -> str:
        f = lambda v: repr(float(v))  # noqa: E731
        lines = ["model tps", f"regularization {f(self.regularization)}", f"n_control {len(self.control_points)}"]
        for name, row in zip(("a_const", "a_x", "a_y"), self.affine):
            lines.append(f"{name} {f(row[0])} {f(row[1])}")
        for c, w in zip(self.control_points, self.weights):
            lines.append(f"control {f(c[0])} {f(c[1])} weight {f(w[0])} {f(w[1])}")
        return "\n".join(lines) + "\n"


def fit_tps(src, dst, reg: float = 0.0) -> TPSModel:
    """Fit a thin-plate spline taking ``src`` points onto ``dst`` points.

    The system is solved in coordinates centred on the source centroid and
    scaled to unit mean radius, so ``reg`` is dimensionless; the returned
    coefficients are converted back to pixel units.
    """
    src = _as_points(src).reshape(-1, 2)
    dst = _as_points(dst).reshape(-1, 2)
    n = len(src)
    if len(dst) != n:
        raise FitError(f"{n} source points but {len(dst)} destination points")
    if n < 3:
        raise FitError(f"TPS needs at least 3 control points, got {n}")
    if reg < 0:
        raise FitError("regularization must be non-negative")

    shift = src.mean(axis=0)
    scale = np.sqrt(((src - shift) ** 2).sum(axis=1)).mean()
    if scale == 0:
        raise FitError("all control points coincide")
    srcn = (src - shift) / scale
    dist = _pairwise(srcn, srcn)
    dup = np.argwhere(np.triu(dist < 1e-9, k=1))
    if len(dup):
        i, j = dup[0]
        raise FitError(f"duplicate control points {i} and {j} at {tuple(src[i])}")
    p = np.column_stack([np.ones(n), srcn])
    sv = np.linalg.svd(p, compute_uv=False)
    if sv[-1] < 1e-9 * sv[0]:
        raise FitError("control points are collinear")

    lhs = np.zeros((n + 3, n + 3))
    lhs[:n, :n] = tps_kernel(dist) + reg * np.eye(n)
    lhs[:n, n:] = p
    lhs[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            theta = scipy.linalg.solve(lhs, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise FitError(f"TPS system is singular or ill-conditioned: {exc}") from exc
    resid = np.linalg.norm(lhs @ theta - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(resid) or resid > SOLVE_RTOL:
        raise FitError(f"TPS solve residual {resid:.3g} exceeds {SOLVE_RTOL:g}")

    w, a = theta[:n], theta[n:]
    # back to pixel units: U(r/s) = U(r)/s^2 - (log s / s^2) r^2, and the r^2
    # terms collapse to a constant because sum(w) = 0 and sum(w * c) = 0
    w_pix = w / scale**2
    a_pix = np.empty((3, 2))
    a_pix[1:] = a[1:] / scale
    a_pix[0] = a[0] - shift @ a_pix[1:]
    a_pix[0] -= np.log(scale) / scale**2 * ((src**2).sum(axis=1) @ w)
    return TPSModel(src.copy(), w_pix, a_pix, float(reg))


def tps_apply(model: TPSModel, p) -> np.ndarray:
    pts = _as_points(p)
    flat = pts.reshape(-1, 2)
    out = model.affine[0] + flat @ model.affine[1:]
    for start in range(0, len(flat), 4096):
        blk = flat[start:start + 4096]
        out[start:start + 4096] += tps_kernel(_pairwise(blk, model.control_points)) @ model.weights
    return out.reshape(pts.shape)


# ---------------------------------------------------------------------------
# homography

@dataclass(frozen=True)
class HomographyModel:
    h: np.ndarray  # (3, 3)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        norm = np.linalg.norm(h)
        if norm == 0 or abs(np.linalg.det(h / norm)) < 1e-14:
            raise FitError("homography is singular")
        h = h / norm
        if h[2, 2] < 0:
            h = -h
        object.__setattr__(self, "h", h)

    def apply(self, p) -> np.ndarray:
        return homography_apply(self, p)

    def inverse(self) -> HomographyModel:
        return HomographyModel(np.linalg.inv(self.h))

    def to_text(self) -> str:
        rows = [" ".join(repr(float(v)) for v in row) for row in self.h]
        return "model homography\n" + "\n".join(f"h{i} {r}" for i, r in enumerate(rows)) + "\n"


def homography_apply(model: HomographyModel, p) -> np.ndarray:
    pts = _as_points(p)
    flat = pts.reshape(-1, 2)
    q = flat @ model.h[:, :2].T + model.h[:, 2]
    if np.any(np.abs(q[:, 2]) <= 1e-12):
        raise ValueError("point maps to infinity under the homography")
    return (q[:, :2] / q[:, 2:]).reshape(pts.shape)


def normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to zero mean and mean radius sqrt(2).

    Works on ``(N, 2)`` or stacked ``(B, N, 2)`` inputs.
    """
    c = pts.mean(axis=-2)
    d = np.sqrt(((pts - c[..., None, :]) ** 2).sum(axis=-1)).mean(axis=-1)
    s = np.sqrt(2.0) / np.maximum(d, 1e-300)
    t = np.zeros(pts.shape[:-2] + (3, 3))
    t[..., 0, 0] = s
    t[..., 1, 1] = s
    t[..., 0, 2] = -s * c[..., 0]
    t[..., 1, 2] = -s * c[..., 1]
    t[..., 2, 2] = 1.0
    return t


def _apply_affine3(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ np.swapaxes(t[..., :2, :2], -1, -2) + t[..., None, :2, 2]


def dlt_system(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT design matrix, ``(..., 2N, 9)``."""
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    r1 = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=-1)
    r2 = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def solve_dlt(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized DLT on (optionally stacked) point sets.

    Returns the de-normalized ``(..., 3, 3)`` homographies and the singular
    values of each normalized design matrix.
    """
    t_src = normalizing_transform(src)
    t_dst = normalizing_transform(dst)
    a = dlt_system(_apply_affine3(t_src, src), _apply_affine3(t_dst, dst))
    _, s, vt = np.linalg.svd(a)
    hn = vt[..., -1, :].reshape(a.shape[:-2] + (3, 3))
    return np.linalg.inv(t_dst) @ hn @ t_src, s


def _triangle_areas(q: np.ndarray) -> np.ndarray:
    """Areas of the four triangles of stacked 4-point sets ``(..., 4, 2)``."""
    out = []
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        e1 = q[..., j, :] - q[..., i, :]
        e2 = q[..., k, :] - q[..., i, :]
        out.append(0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]))
    return np.stack(out, axis=-1)


def has_collinear_triple(q: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """True where a 4-point set has 3 (near-)collinear points.

    Evaluated on normalized coordinates so ``tol`` is scale-free.
    """
    qn = _apply_affine3(normalizing_transform(q), q)
    return _triangle_areas(qn).min(axis=-1) < tol


def fit_homography(src, dst) -> HomographyModel:
    src = _as_points(src).reshape(-1, 2)
    dst = _as_points(dst).reshape(-1, 2)
    if len(src) != len(dst):
        raise FitError(f"{len(src)} source points but {len(dst)} destination points")
    if len(src) < 4:
        raise FitError(f"homography needs at least 4 correspondences, got {len(src)}")
    if len(src) == 4 and (has_collinear_triple(src) or has_collinear_triple(dst)):
        raise FitError("degenerate configuration: three of the four points are collinear")
    h, sv = solve_dlt(src, dst)
    if sv[7] < 1e-10 * sv[0]:
        raise FitError("degenerate configuration: DLT system is rank deficient")
    return HomographyModel(h)


def fit_model(src, dst, kind: str = "tps", reg: float = 0.0):
    if kind == "tps":
        return fit_tps(src, dst, reg)
    if kind == "homography":
        return fit_homography(src, dst)
    raise ValueError(f"unknown transform {kind!r}")


# ---------------------------------------------------------------------------
# warping

def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples at ``(x, y)``; 0 outside ``[0, w-1] x [0, h-1]``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64).copy()
    y = np.asarray(y, dtype=np.float64).copy()
    for c in (x, y):
        r = np.round(c)
        snap = np.abs(c - r) < _SNAP
        c[snap] = r[snap]
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    top = np.where(fx == 0, img[y0, x0], top)
    bottom = np.where(fx == 0, img[y1, x0], bottom)
    val = np.where(fy == 0, top, top * (1 - fy) + bottom * fy)
    return np.where(inside, val, 0.0)


def pixel_grid(size: tuple[int, int]) -> np.ndarray:
    """``(h, w, 2)`` array of ``(x, y)`` pixel-centre coordinates."""
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs, ys], axis=-1).astype(np.float64)


def warp_image(img: np.ndarray, mapping, out_size: tuple[int, int]) -> np.ndarray:
    """Resample ``img`` onto an ``out_size = (w, h)`` raster.

    ``mapping.apply`` takes output pixel coordinates to source coordinates.
    """
    grid = pixel_grid(out_size)
    src = mapping.apply(grid.reshape(-1, 2)).reshape(grid.shape)
    out = bilinear_sample(img, src[..., 0], src[..., 1])
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class IdentityMap:
    def apply(self, p) -> np.ndarray:
        return _as_points(p).copy()


def model_to_dict(model) -> dict:
    if isinstance(model, IdentityMap):
        return {"kind": "identity"}
    if isinstance(model, HomographyModel):
        return {"kind": "homography", "h": model.h.tolist()}
    if isinstance(model, TPSModel):
        return {
            "kind": "tps",
            "control_points": model.control_points.tolist(),
            "weights": model.weights.tolist(),
            "affine": model.affine.tolist(),
            "regularization": model.regularization,
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "identity":
        return IdentityMap()
    if kind == "homography":
        return HomographyModel(np.array(d["h"], dtype=np.float64))
    if kind == "tps":
        return TPSModel(
            np.array(d["control_points"], dtype=np.float64),
            np.array(d["weights"], dtype=np.float64),
            np.array(d["affine"], dtype=np.float64),
            float(d.get("regularization", 0.0)),
        )
    raise ValueError(f"unknown model kind {kind!r}")
