"""Hybrid HOL + dense-feature matching inside region masks.

The score of a candidate pair is the dense-feature cosine similarity minus
a HOL shape-cost penalty. The penalty is scaled by the area ratio of the two
regions and by a Gaussian of each point's normalized distance from its
region centroid, so HOL counts for less where the masks are least reliable.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureGrid, deep_scores
from .hol import HOLParams, build_hol, hol_cost_matrix
from .imagecore import GridPointSet, grid_points
from .transform import has_collinear_triple, solve_dlt

log = logging.getLogger(__name__)

TSV_HEADER = "x_ir\ty_ir\tx_vi\ty_vi\tscore"
SCORINGS = ("hybrid", "deep", "hol")

W_FEW_FOR_RANSAC = "too_few_matches_for_ransac"
W_LOW_CONSENSUS = "ransac_consensus_below_minimum"
W_NO_MATCHES = "no_matches"


class DegenerateRegionError(ValueError):
    """A region mask holds no grid points."""


@dataclass(frozen=True)
class HybridParams:
    delta: float = 1.0
    omega: float = 0.5
    theta: float = 0.2
    ransac_iters: int = 2000
    ransac_tol: float = 10.0
    ransac_min_inliers: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta}")
        if self.delta < 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if self.ransac_tol <= 0:
            raise ValueError("ransac_tol must be positive")
        if self.ransac_iters < 1 or self.ransac_min_inliers < 0 or self.seed < 0:
            raise ValueError("ransac_iters, ransac_min_inliers and seed must be non-negative counts")


@dataclass(frozen=True)
class MatchSet:
    ir: np.ndarray  # (K, 2) integer (x, y)
    vi: np.ndarray  # (K, 2)
    scores: np.ndarray  # (K,)
    warnings: tuple[str, ...] = field(default=())

    @classmethod
    def empty(cls, warnings: tuple[str, ...] = ()) -> MatchSet:
        return cls(np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64), np.zeros(0), warnings)

    def __len__(self) -> int:
        return len(self.scores)

    def subset(self, idx) -> MatchSet:
        return MatchSet(self.ir[idx], self.vi[idx], self.scores[idx], self.warnings)

    def with_warning(self, msg: str) -> MatchSet:
        return replace(self, warnings=self.warnings + (msg,))

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write(TSV_HEADER + "\n")
        for (xi, yi), (xv, yv), s in zip(self.ir, self.vi, self.scores):
            buf.write(f"{int(xi)}\t{int(yi)}\t{int(xv)}\t{int(yv)}\t{s:.6f}\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> MatchSet:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != TSV_HEADER:
            raise ValueError("matches TSV must start with the header " + TSV_HEADER.replace("\t", " "))
        rows = [ln.split("\t") for ln in lines[1:]]
        for n, r in enumerate(rows, start=2):
            if len(r) != 5:
                raise ValueError(f"matches TSV line {n}: expected 5 fields, got {len(r)}")
        if not rows:
            return cls.empty()
        ir = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64)
        vi = np.array([[int(r[2]), int(r[3])] for r in rows], dtype=np.int64)
        return cls(ir, vi, np.array([float(r[4]) for r in rows]))


# ---------------------------------------------------------------------------
# decay weights

def area_ratio_sigma(s_ir: int, s_vi: int, omega: float) -> float:
    """omega * min(area) / max(area), areas being point counts."""
    if s_ir <= 0 or s_vi <= 0:
        raise DegenerateRegionError(f"empty region (areas {s_ir}, {s_vi})")
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"omega must lie in (0, 1], got {omega}")
    return omega * (min(s_ir, s_vi) / max(s_ir, s_vi))


def _normalized_radius(pts: GridPointSet, p=None) -> np.ndarray:
    if pts.max_centroid_dist == 0:
        return np.zeros(len(pts) if p is None else 1)
    if p is None:
        return pts.centroid_distances() / pts.max_centroid_dist
    return np.array([np.hypot(*(np.asarray(p, float) - pts.centroid)) / pts.max_centroid_dist])


def _gauss(u: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-(u**2) / (2.0 * sigma**2))


def gaussian_lambda(p_ir, p_vi, set_ir: GridPointSet, set_vi: GridPointSet, sigma: float) -> float:
    """HOL weight of one candidate pair."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    g = _gauss(_normalized_radius(set_ir, p_ir), sigma) + _gauss(_normalized_radius(set_vi, p_vi), sigma)
    return float(g[0] / (sigma * math.sqrt(2.0 * math.pi)))


def lambda_matrix(set_ir: GridPointSet, set_vi: GridPointSet, sigma: float) -> np.ndarray:
    """:func:`gaussian_lambda` for every pair, shape ``(M, N)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    g_ir = _gauss(_normalized_radius(set_ir), sigma)
    g_vi = _gauss(_normalized_radius(set_vi), sigma)
    return (g_ir[:, None] + g_vi[None, :]) / (sigma * math.sqrt(2.0 * math.pi))


def hybrid_scores(s_deep, c_hol, lam, sigma: float, delta: float) -> np.ndarray:
    s_deep = np.asarray(s_deep, dtype=np.float64)
    c_hol = np.asarray(c_hol, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if not s_deep.shape == c_hol.shape == lam.shape:
        raise ValueError(f"shape mismatch: {s_deep.shape}, {c_hol.shape}, {lam.shape}")
    if delta == 0 or c_hol.size == 0:
        return s_deep.copy()
    peak = c_hol.max()
    if peak <= 0:
        return s_deep.copy()
    return s_deep - delta * sigma * lam * (c_hol / peak)


# ---------------------------------------------------------------------------
# matching

def mutual_max_pairs(s: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of mutual maxima scoring at least ``theta``.

    Ties go to the smallest column (for a row) and smallest row (for a column).
    """
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    best_col = np.argmax(s, axis=1)
    best_row = np.argmax(s, axis=0)
    rows = np.arange(s.shape[0])
    ok = (best_row[best_col] == rows) & (s[rows, best_col] >= theta)
    return rows[ok], best_col[ok]


def match_regional(s, pts_ir: GridPointSet, pts_vi: GridPointSet, theta: float) -> MatchSet:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (len(pts_ir), len(pts_vi)):
        raise ValueError(f"score matrix {s.shape} does not match point sets ({len(pts_ir)}, {len(pts_vi)})")
    r, c = mutual_max_pairs(s, theta)
    if not len(r):
        return MatchSet.empty((W_NO_MATCHES,))
    return MatchSet(pts_ir.points[r].copy(), pts_vi.points[c].copy(), s[r, c])


# ---------------------------------------------------------------------------
# RANSAC

def _project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Project ``(N, 2)`` points through stacked ``(B, 3, 3)`` homographies."""
    q = np.einsum("bij,nj->bni", h[:, :, :2], pts) + h[:, None, :, 2]
    w = q[..., 2]
    bad = np.abs(w) <= 1e-12
    w = np.where(bad, 1.0, w)
    out = q[..., :2] / w[..., None]
    out[bad] = np.inf
    return out


def transfer_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Symmetric transfer error (RMS of forward and backward residuals)."""
    h_inv = np.linalg.inv(h)
    fwd = ((_project(h, src) - dst) ** 2).sum(axis=-1)
    bwd = ((_project(h_inv, dst) - src) ** 2).sum(axis=-1)
    err = np.sqrt(0.5 * (fwd + bwd))
    return np.where(np.isfinite(err), err, np.inf)


def ransac_filter(matches: MatchSet, params: HybridParams = HybridParams(), chunk: int = 500) -> MatchSet:
    """Keep the consensus set of the best 4-point homography hypothesis.

    Returns the input unchanged, with a warning attached, when there are
    fewer than 4 matches or the best consensus is below
    ``params.ransac_min_inliers``.
    """
    n = len(matches)
    if n < 4:
        log.info("RANSAC skipped: %d matches", n)
        return matches.with_warning(W_FEW_FOR_RANSAC)
    src = matches.ir.astype(np.float64)
    dst = matches.vi.astype(np.float64)
    rng = np.random.default_rng(params.seed)
    idx = np.argpartition(rng.random((params.ransac_iters, n)), 3, axis=1)[:, :4]

    best_count, best_mask = -1, None
    for start in range(0, params.ransac_iters, chunk):
        sel = idx[start:start + chunk]
        s4, d4 = src[sel], dst[sel]
        valid = ~(has_collinear_triple(s4) | has_collinear_triple(d4))
        if not valid.any():
            continue
        h, _ = solve_dlt(s4[valid], d4[valid])
        hn = h / np.linalg.norm(h, axis=(1, 2), keepdims=True)
        ok = np.abs(np.linalg.det(hn)) > 1e-12
        if not ok.any():
            continue
        inl = transfer_errors(hn[ok], src, dst) < params.ransac_tol
        counts = inl.sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_mask = int(counts[k]), inl[k]

    if best_mask is None or best_count < params.ransac_min_inliers:
        log.info("RANSAC consensus %d below minimum %d", best_count, params.ransac_min_inliers)
        return matches.with_warning(W_LOW_CONSENSUS)
    return matches.subset(np.nonzero(best_mask)[0])


# ---------------------------------------------------------------------------
# end to end

def score_matrix(
    f_ir: FeatureGrid,
    f_vi: FeatureGrid,
    pts_ir: GridPointSet,
    pts_vi: GridPointSet,
    params: HybridParams = HybridParams(),
    hol_params: HOLParams = HOLParams(),
    scoring: str = "hybrid",
) -> np.ndarray:
    """Score matrix used for matching under the chosen ``scoring`` mode.

    ``"deep"`` uses the dense features alone, ``"hol"`` uses ``1 - C`` with
    the max-normalized HOL cost ``C``, and ``"hybrid"`` combines both.
    """
    if scoring not in SCORINGS:
        raise ValueError(f"unknown scoring {scoring!r}; expected one of {SCORINGS}")
    sigma = area_ratio_sigma(pts_ir.area, pts_vi.area, params.omega)
    if scoring == "deep" or (scoring == "hybrid" and params.delta == 0):
        return deep_scores(f_ir, f_vi, pts_ir, pts_vi)
    cost = hol_cost_matrix(build_hol(pts_ir, hol_params), build_hol(pts_vi, hol_params))
    if scoring == "hol":
        peak = cost.max() if cost.size else 0.0
        return 1.0 - (cost / peak if peak > 0 else cost)
    s_deep = deep_scores(f_ir, f_vi, pts_ir, pts_vi)
    return hybrid_scores(s_deep, cost, lambda_matrix(pts_ir, pts_vi, sigma), sigma, params.delta)


def run_hdm(
    f_ir: FeatureGrid,
    f_vi: FeatureGrid,
    mask_ir: np.ndarray,
    mask_vi: np.ndarray,
    params: HybridParams = HybridParams(),
    hol_params: HOLParams = HOLParams(),
    scoring: str = "hybrid",
    ransac: bool = True,
) -> MatchSet:
    """Match the grid points of two region masks and drop RANSAC outliers."""
    pts_ir = grid_points(mask_ir)
    pts_vi = grid_points(mask_vi)
    if not len(pts_ir) or not len(pts_vi):
        raise DegenerateRegionError(f"empty region: {len(pts_ir)} ir points, {len(pts_vi)} vi points")
    s = score_matrix(f_ir, f_vi, pts_ir, pts_vi, params, hol_params, scoring)
    matches = match_regional(s, pts_ir, pts_vi, params.theta)
    if not ransac or W_NO_MATCHES in matches.warnings:
        return matches
    return ransac_filter(matches, params)
