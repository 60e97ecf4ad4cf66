"""Deterministic fusion, reconstruction losses, fusion-quality metrics and
the matching-accuracy protocol.

All metrics take [0, 1] images. Histogram-based metrics quantize to 256
levels and report bits. The optional ``mask`` argument restricts a metric
to in-mask pixels.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .hdm import MatchSet

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
BCE_CLAMP = 1e-7
IFM_W_SSIM = 0.3
IFM_W_L1 = 0.7
LEVELS = 256
MATCH_TOL = 8.0
FUSIONS = ("average", "max", "mask_max")


def _same_shape(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def _select(values: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return values.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {values.shape}")
    return values[mask]


def _mean(values: np.ndarray) -> float:
    return float(values.mean()) if values.size else 0.0


# ---------------------------------------------------------------------------
# fusion

def fuse(ir, vi, strategy: str = "average", mask=None) -> np.ndarray:
    ir, vi = _same_shape(ir, vi)
    if strategy == "average":
        return 0.5 * (ir + vi)
    if strategy == "max":
        return np.maximum(ir, vi)
    if strategy == "mask_max":
        if mask is None:
            raise ValueError("mask_max fusion needs a mask")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != ir.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {ir.shape}")
        return np.where(mask, np.maximum(ir, vi), 0.5 * (ir + vi))
    raise ValueError(f"unknown fusion strategy {strategy!r}")


# ---------------------------------------------------------------------------
# losses

def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = ndimage.correlate1d(x, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM over the valid region of an 11x11 Gaussian window."""
    a, b = _same_shape(a, b)
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape}")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a, b, mask=None) -> float:
    m = ssim_map(a, b)
    if mask is not None:
        half = SSIM_WIN // 2
        mask = np.asarray(mask, dtype=bool)[half:-half, half:-half]
    return _mean(_select(m, mask))


def l1(a, b) -> float:
    a, b = _same_shape(a, b)
    return float(np.abs(a - b).mean())


def ssim_loss(a, b) -> float:
    return 1.0 - ssim(a, b)


def ifm_loss(a, b) -> float:
    return ssim_loss(a, b) * IFM_W_SSIM + l1(a, b) * IFM_W_L1


def weighted_bce(pred, gt, w: float = 0.7) -> float:
    """Class-weighted binary cross entropy; ``w`` weighs the positive class."""
    pred, gt = _same_shape(pred, gt)
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    terms = w * gt * np.log(p) + (1.0 - w) * (1.0 - gt) * np.log(1.0 - p)
    return float(-terms.mean())


# ---------------------------------------------------------------------------
# single-image metrics

def _check_small(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"metric needs an image of at least 3x3, got {img.shape}")
    return img


def ag(img, mask=None) -> float:
    """Average gradient from forward differences."""
    img = _check_small(img)
    gx = img[:-1, 1:] - img[:-1, :-1]
    gy = img[1:, :-1] - img[:-1, :-1]
    g = np.sqrt((gx**2 + gy**2) / 2.0)
    return _mean(_select(g, None if mask is None else np.asarray(mask, bool)[:-1, :-1]))


def ei(img, mask=None) -> float:
    """Mean Sobel gradient magnitude over interior pixels."""
    img = _check_small(img)
    sx = ndimage.sobel(img, axis=1, mode="nearest")[1:-1, 1:-1]
    sy = ndimage.sobel(img, axis=0, mode="nearest")[1:-1, 1:-1]
    g = np.hypot(sx, sy)
    return _mean(_select(g, None if mask is None else np.asarray(mask, bool)[1:-1, 1:-1]))


def ct(img, mask=None) -> float:
    """Tamura contrast ``std / kurtosis ** 0.25``; 0 for constant images."""
    img = _check_small(img)
    v = _select(img, mask)
    if v.size == 0:
        return 0.0
    d = v - v.mean()
    var = float((d**2).mean())
    if var <= 1e-24:
        return 0.0
    kurt = float((d**4).mean()) / var**2
    return float(np.sqrt(var) / kurt**0.25)


# ---------------------------------------------------------------------------
# histogram metrics

def quantize(img) -> np.ndarray:
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * (LEVELS - 1) + 0.5), 0, LEVELS - 1).astype(np.int64)


def histogram(img, mask=None) -> np.ndarray:
    q = _select(quantize(img), mask)
    return np.bincount(q, minlength=LEVELS) / max(q.size, 1)


def joint_histogram(a, b, mask=None) -> np.ndarray:
    a, b = _same_shape(a, b)
    qa, qb = _select(quantize(a), mask), _select(quantize(b), mask)
    j = np.bincount(qa * LEVELS + qb, minlength=LEVELS * LEVELS).reshape(LEVELS, LEVELS)
    return j / max(qa.size, 1)


def entropy(img, mask=None) -> float:
    p = histogram(img, mask)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def ce(a, b, mask=None) -> float:
    """Cross entropy of the histogram of ``a`` against that of ``b``."""
    a, b = _same_shape(a, b)
    p, q = histogram(a, mask), histogram(b, mask)
    nz = p > 0
    return float(-(p[nz] * np.log2(np.maximum(q[nz], 1e-12))).sum())


def mi(a, b, mask=None) -> float:
    j = joint_histogram(a, b, mask)
    p, q = j.sum(axis=1), j.sum(axis=0)
    r, c = np.nonzero(j)
    v = j[r, c]
    return float(max(0.0, (v * np.log2(v / (p[r] * q[c]))).sum()))


# ---------------------------------------------------------------------------
# matching accuracy and reports

def match_accuracy(matches: MatchSet, gt=None, tol: float = MATCH_TOL) -> tuple[int, int, float]:
    """Count pairs whose vi point lies within ``tol`` of ``gt(ir point)``.

    ``gt`` is ``None`` (identity) or an object with ``apply`` mapping ir
    coordinates into vi coordinates.
    """
    n = len(matches)
    if n == 0:
        return 0, 0, 0.0
    src = matches.ir.astype(np.float64)
    target = src if gt is None else gt.apply(src)
    dist = np.sqrt(((matches.vi - target) ** 2).sum(axis=1))
    correct = int((dist <= tol).sum())
    return n, correct, correct / n


@dataclass(frozen=True)
class MetricsReport:
    ag: float = 0.0
    ce: float = 0.0
    ei: float = 0.0
    mi: float = 0.0
    ssim: float = 0.0
    ct: float = 0.0
    matches: int = 0
    correct_matches: int = 0
    accuracy: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_tsv(self) -> str:
        return "".join(f"{k}\t{v}\n" for k, v in asdict(self).items())


def metrics_report(ir_reg, vi, fused, matches: MatchSet | None = None, gt=None, mask=None) -> MetricsReport:
    """Pair metrics (CE, MI, SSIM) on the registered pair; AG, EI, CT on the fused image."""
    n, ok, acc = match_accuracy(matches, gt) if matches is not None else (0, 0, 0.0)
    return MetricsReport(
        ag=ag(fused, mask),
        ce=ce(ir_reg, vi, mask),
        ei=ei(fused, mask),
        mi=mi(ir_reg, vi, mask),
        ssim=ssim(ir_reg, vi, mask),
        ct=ct(fused, mask),
        matches=n,
        correct_matches=ok,
        accuracy=acc,
    )
