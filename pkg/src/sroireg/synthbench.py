"""Synthetic infrared/visible pairs with exact ground truth, and the
omega-sweep ablation harness.

A scene is a procedural visible image plus an elliptical region mask. The
infrared image is the visible one pulled back through a known ir -> vi
deformation and passed through an intensity remap that mimics the modality
gap. Everything is a pure function of :class:`SceneSpec`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .evalfuse import match_accuracy
from .features import EXTRACTORS
from .hdm import HybridParams, MatchSet, run_hdm
from .imagecore import CELL, load_image, save_image, save_mask, write_atomic
from .transform import (
    HomographyModel,
    IdentityMap,
    fit_tps,
    model_from_dict,
    model_to_dict,
    pixel_grid,
    warp_image,
)

DEFORMS = ("none", "homography", "tps")
GAPS = ("none", "invert", "gamma", "contrast_remap")
NO_DECAY = "w/o Gaussian-weighted decay"
TABLE_HEADER = ("Method", "Matches", "Correct Matches", "Matches Accuracy")


@dataclass(frozen=True)
class SceneSpec:
    size: tuple[int, int] = (256, 256)
    n_blobs: int = 160
    seed: int = 0
    deform: str = "none"
    homography: tuple[tuple[float, ...], ...] | None = None
    n_anchors: int = 9
    max_disp: float = 12.0
    modality_gap: str = "none"
    gamma: float = 2.0

    def __post_init__(self):
        w, h = self.size
        if w <= 0 or h <= 0 or w % CELL or h % CELL:
            raise ValueError(f"scene size must be positive multiples of {CELL}, got {self.size}")
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.deform not in DEFORMS:
            raise ValueError(f"deform must be one of {DEFORMS}")
        if self.deform == "homography" and self.homography is None:
            raise ValueError("homography deform needs a 3x3 matrix")
        if self.deform == "tps":
            if self.n_anchors < 3:
                raise ValueError("tps deform needs at least 3 anchors")
            if not 0 <= self.max_disp <= min(w, h) / CELL:
                raise ValueError(f"max_disp must lie in [0, {min(w, h) / CELL}]")
        if self.modality_gap not in GAPS:
            raise ValueError(f"modality_gap must be one of {GAPS}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def translation(cls, tx: float, ty: float, **kw) -> SceneSpec:
        h = ((1.0, 0.0, float(tx)), (0.0, 1.0, float(ty)), (0.0, 0.0, 1.0))
        return cls(deform="homography", homography=h, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        d = dict(d)
        d["size"] = tuple(d["size"])
        if d.get("homography") is not None:
            d["homography"] = tuple(tuple(float(v) for v in row) for row in d["homography"])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    forward: object  # ir -> vi model with ``apply``
    mask_ir: np.ndarray = field(repr=False)
    mask_vi: np.ndarray = field(repr=False)

    def inverse_model(self, step: int = 16, size: tuple[int, int] | None = None):
        """A vi -> ir model; exact for identity/homography, a dense TPS fit otherwise."""
        if isinstance(self.forward, IdentityMap):
            return self.forward
        if isinstance(self.forward, HomographyModel):
            return self.forward.inverse()
        h, w = self.mask_ir.shape if size is None else size[::-1]
        ys, xs = np.mgrid[0:h + 1:step, 0:w + 1:step]
        p = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
        return fit_tps(self.forward.apply(p), p)


@dataclass(frozen=True)
class Case:
    ir: np.ndarray
    vi: np.ndarray
    gt: GroundTruth
    spec: SceneSpec | None = None


# ---------------------------------------------------------------------------
# generation

def _scene(rng: np.random.Generator, size: tuple[int, int], n_blobs: int) -> np.ndarray:
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = rng.uniform(-1, 1) * xs / w + rng.uniform(-1, 1) * ys / h
    cx = rng.uniform(0, w, n_blobs)
    cy = rng.uniform(0, h, n_blobs)
    sig = rng.uniform(2.5, 12.0, n_blobs)
    amp = rng.uniform(-1.0, 1.0, n_blobs)
    for k in range(n_blobs):
        r = int(math.ceil(4 * sig[k]))
        x0, x1 = max(0, int(cx[k]) - r), min(w, int(cx[k]) + r + 1)
        y0, y1 = max(0, int(cy[k]) - r), min(h, int(cy[k]) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        d2 = (xs[y0:y1, x0:x1] - cx[k]) ** 2 + (ys[y0:y1, x0:x1] - cy[k]) ** 2
        img[y0:y1, x0:x1] += amp[k] * np.exp(-d2 / (2 * sig[k] ** 2))
    lo, hi = img.min(), img.max()
    return 0.05 + 0.9 * (img - lo) / (hi - lo)


def _ellipse(rng: np.random.Generator, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    cx = w / 2 + rng.uniform(-w / 10, w / 10)
    cy = h / 2 + rng.uniform(-h / 10, h / 10)
    a = rng.uniform(0.22, 0.32) * w
    b = rng.uniform(0.22, 0.32) * h
    t = rng.uniform(0, np.pi)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (xs - cx) * np.cos(t) + (ys - cy) * np.sin(t)
    v = -(xs - cx) * np.sin(t) + (ys - cy) * np.cos(t)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _anchors(rng: np.random.Generator, n: int, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    k = math.isqrt(n)
    if k * k == n:
        g = (np.arange(k) + 0.5) / k
        gx, gy = np.meshgrid(g * w, g * h)
        return np.column_stack([gx.ravel(), gy.ravel()])
    return np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])


def tps_deformation(rng: np.random.Generator, n_anchors: int, max_disp: float, size: tuple[int, int]):
    """Random ir -> vi TPS whose displacement never exceeds ``max_disp`` on the image."""
    src = _anchors(rng, n_anchors, size)
    disp = rng.uniform(-1.0, 1.0, src.shape) * max_disp
    probe = pixel_grid(size).reshape(-1, 2)
    field_max = np.sqrt(((fit_tps(src, src + disp).apply(probe) - probe) ** 2).sum(axis=1)).max()
    if field_max > max_disp:
        disp *= max_disp / field_max
    return fit_tps(src, src + disp)


def apply_gap(img: np.ndarray, gap: str, gamma: float = 2.0) -> np.ndarray:
    if gap == "none":
        return img
    if gap == "invert":
        return 1.0 - img
    if gap == "gamma":
        return img**gamma
    if gap == "contrast_remap":
        return 4.0 * img * (1.0 - img)
    raise ValueError(f"unknown modality gap {gap!r}")


def pull_back_mask(mask_vi: np.ndarray, forward, size: tuple[int, int]) -> np.ndarray:
    """ir-side mask: a pixel is inside when its image under ``forward`` is."""
    h, w = mask_vi.shape
    q = np.round(forward.apply(pixel_grid(size).reshape(-1, 2))).astype(np.int64)
    inside = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
    out = np.zeros(len(q), dtype=bool)
    out[inside] = mask_vi[q[inside, 1], q[inside, 0]]
    return out.reshape(size[1], size[0])


def generate(spec: SceneSpec) -> Case:
    rng = np.random.default_rng(spec.seed)
    vi = _scene(rng, spec.size, spec.n_blobs)
    mask_vi = _ellipse(rng, spec.size)
    if spec.deform == "none":
        forward = IdentityMap()
    elif spec.deform == "homography":
        forward = HomographyModel(np.array(spec.homography, dtype=np.float64))
    else:
        forward = tps_deformation(rng, spec.n_anchors, spec.max_disp, spec.size)
    ir = vi.copy() if spec.deform == "none" else warp_image(vi, forward, spec.size)
    ir = np.clip(apply_gap(ir, spec.modality_gap, spec.gamma), 0.0, 1.0)
    mask_ir = mask_vi.copy() if spec.deform == "none" else pull_back_mask(mask_vi, forward, spec.size)
    return Case(ir, vi, GroundTruth(forward, mask_ir, mask_vi), spec)


def synthetic_suite(n: int, base_seed: int = 0, **kw) -> list[Case]:
    """``n`` TPS-deformed gamma-gap cases with consecutive seeds."""
    opts = dict(deform="tps", n_anchors=9, max_disp=12.0, modality_gap="gamma", gamma=2.0)
    opts.update(kw)
    return [generate(SceneSpec(seed=base_seed + i, **opts)) for i in range(n)]


# ---------------------------------------------------------------------------
# scene files

def write_scene(case: Case, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(case.ir, out / "ir.pgm")
    save_image(case.vi, out / "vi.pgm")
    save_mask(case.gt.mask_ir, out / "mask_ir.pgm")
    save_mask(case.gt.mask_vi, out / "mask_vi.pgm")
    sidecar = {
        "spec": case.spec.to_dict() if case.spec is not None else None,
        "ground_truth": model_to_dict(case.gt.forward),
    }
    write_atomic(out / "scene.json", (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode())


def read_ground_truth(path):
    return model_from_dict(json.loads(Path(path).read_text())["ground_truth"])


def read_scene(scene_dir) -> Case:
    d = Path(scene_dir)
    meta = json.loads((d / "scene.json").read_text())
    ir, vi = load_image(d / "ir.pgm"), load_image(d / "vi.pgm")
    gt = GroundTruth(
        model_from_dict(meta["ground_truth"]),
        load_image(d / "mask_ir.pgm") > 0.5,
        load_image(d / "mask_vi.pgm") > 0.5,
    )
    spec = SceneSpec.from_dict(meta["spec"]) if meta.get("spec") else None
    return Case(ir, vi, gt, spec)


# ---------------------------------------------------------------------------
# evaluation

def registration_error(inverse_fit, gt: GroundTruth, step: int = 2) -> float:
    """Mean distance between fitted and true vi -> ir maps over the ir mask.

    Evaluated at ir pixels ``p`` inside the mask as ``|fit(gt(p)) - p|``,
    which needs only the exact forward ground truth.
    """
    rows, cols = np.nonzero(gt.mask_ir[::step, ::step])
    p = np.column_stack([cols * step, rows * step]).astype(np.float64)
    if not len(p):
        return float("nan")
    q = gt.forward.apply(p)
    return float(np.sqrt(((inverse_fit.apply(q) - p) ** 2).sum(axis=1)).mean())


def dilate_cells(mask: np.ndarray, cells: int = 1) -> np.ndarray:
    """Grow a mask by ``cells`` grid cells (8 px each) with a square element."""
    r = cells * CELL
    return ndimage.binary_dilation(mask, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool))


def perturbed_masks(case: Case, cells: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Inaccurate-region simulation: the ir mask is dilated, the vi mask kept."""
    return dilate_cells(case.gt.mask_ir, cells), case.gt.mask_vi


@dataclass(frozen=True)
class Row:
    method: str
    matches: float
    correct: float
    accuracy: float


def _features(case: Case, extractor: str):
    fn = EXTRACTORS[extractor]
    return fn(case.ir), fn(case.vi)


def evaluate_matching(
    cases: list[Case],
    params: HybridParams,
    scoring: str = "hybrid",
    extractor: str = "gradhist",
    perturb_cells: int = 1,
    feats: list | None = None,
) -> tuple[float, float, float]:
    """Mean matches, correct matches and accuracy (tolerance 8) over cases."""
    stats = []
    for i, case in enumerate(cases):
        f_ir, f_vi = feats[i] if feats is not None else _features(case, extractor)
        m_ir, m_vi = perturbed_masks(case, perturb_cells) if perturb_cells else (case.gt.mask_ir, case.gt.mask_vi)
        matches: MatchSet = run_hdm(f_ir, f_vi, m_ir, m_vi, params, scoring=scoring)
        stats.append(match_accuracy(matches, case.gt.forward))
    arr = np.array(stats, dtype=np.float64)
    return tuple(float(v) for v in arr.mean(axis=0))


def omega_sweep(
    cases: list[Case],
    omegas=(0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    params: HybridParams = HybridParams(),
    extractor: str = "gradhist",
    perturb_cells: int = 1,
    methods: bool = False,
) -> list[Row]:
    """Decay ablation: a no-decay row (delta = 0) then one row per omega.

    With ``methods=True`` rows for the hybrid scorer at ``params``, dense
    features alone and HOL alone are appended.
    """
    if not cases:
        raise ValueError("omega_sweep needs at least one case")
    feats = [_features(c, extractor) for c in cases]

    def run(p, scoring="hybrid"):
        return evaluate_matching(cases, p, scoring, extractor, perturb_cells, feats)

    rows = [Row(NO_DECAY, *run(HybridParams(**{**asdict(params), "delta": 0.0})))]
    for w in omegas:
        rows.append(Row(f"omega={w:g}", *run(HybridParams(**{**asdict(params), "omega": float(w)}))))
    if methods:
        rows.append(Row("hybrid", *run(params)))
        rows.append(Row("deep only", *run(params, "deep")))
        rows.append(Row("HOL only", *run(params, "hol")))
    return rows


def format_table(rows: list[Row]) -> str:
    lines = ["\t".join(TABLE_HEADER)]
    for r in rows:
        lines.append(f"{r.method}\t{r.matches:.1f}\t{r.correct:.1f}\t{r.accuracy:.3f}")
    return "\n".join(lines) + "\n"
