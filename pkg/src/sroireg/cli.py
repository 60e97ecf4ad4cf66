"""Command-line entry point: ``sroireg {match,register,fuse,metrics,synth,eval}``.

Settings come from built-in defaults, then an optional ``--config`` JSON
document, then command-line flags (flags win). The merged settings are
written to ``<out>/effective-config.json``.

Exit codes: 0 success, 2 configuration or input error, 3 degenerate region,
4 too few matches to fit a transform.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .evalfuse import FUSIONS, fuse, match_accuracy, metrics_report
from .features import (
    EXTRACTORS,
    FeatureFormatError,
    extract_gradhist,
    load_feature_grid,
    propose_mask,
    strip_pool_saliency,
)
from .hdm import DegenerateRegionError, HybridParams, MatchSet, run_hdm
from .imagecore import ImageFormatError, load_image, load_mask, save_image, write_atomic
from .synthbench import (
    Case,
    GroundTruth,
    SceneSpec,
    format_table,
    generate,
    omega_sweep,
    read_ground_truth,
    read_scene,
    registration_error,
    write_scene,
)
from .transform import FitError, fit_model, warp_image

log = logging.getLogger("sroireg")

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_FEW_MATCHES = 0, 2, 3, 4

DEFAULTS = {
    "ir": None,
    "vi": None,
    "out": "out",
    "seed": 0,
    "theta": 0.2,
    "omega": 0.5,
    "delta": 1.0,
    "ransac_iters": 2000,
    "ransac_tol": 10.0,
    "ransac_min_inliers": 8,
    "features": "gradhist",
    "features_ir": None,
    "features_vi": None,
    "unsigned": False,
    "mask": None,
    "mask_ir": None,
    "mask_vi": None,
    "gt": None,
    "transform": "tps",
    "tps_reg": 0.0,
    "fusion": "average",
    "fusion_mask": None,
    "fused": None,
    "matches": None,
    "eval_mask": None,
    # synth
    "width": 256,
    "height": 256,
    "n_blobs": 160,
    "deform": "none",
    "translate": None,
    "n_anchors": 9,
    "max_disp": 12.0,
    "gap": "none",
    "gamma": 2.0,
    "count": 1,
    # eval
    "suite": None,
    "omegas": [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    "perturb_cells": 1,
}


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config

def _shared(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON document of settings; flags override it")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--theta", type=float, default=S, help="match score threshold")
    p.add_argument("--omega", type=float, default=S, help="decay hyperparameter in (0, 1]")
    p.add_argument("--delta", type=float, default=S, help="HOL weight; 0 disables the HOL term")
    p.add_argument("--ransac-iters", type=int, default=S)
    p.add_argument("--ransac-tol", type=float, default=S)
    p.add_argument("--ransac-min-inliers", type=int, default=S)
    p.add_argument("--transform", choices=("tps", "homography"), default=S)
    p.add_argument("--tps-reg", type=float, default=S, help="TPS regularization (normalized units)")
    p.add_argument("--fusion", choices=("average", "max", "mask-max"), default=S)
    p.add_argument("--features", default=S, help="gradhist | meanvar | file:PATH, both sides")
    p.add_argument("--features-ir", default=S)
    p.add_argument("--features-vi", default=S)
    p.add_argument("--unsigned", action="store_true", default=S, help="fold gradient orientations mod pi")
    p.add_argument("--mask", default=S, help="file:PATH | propose:T, both sides")
    p.add_argument("--mask-ir", default=S)
    p.add_argument("--mask-vi", default=S)
    p.add_argument("--ir", default=S, help="infrared image (PGM/PNG)")
    p.add_argument("--vi", default=S, help="visible image (PGM/PNG)")
    p.add_argument("--gt", default=S, help="scene.json sidecar holding the ground-truth ir->vi model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sroireg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("match", help="match grid points inside the two region masks")
    _shared(p)

    p = sub.add_parser("register", help="match, fit the transform and warp the infrared image")
    _shared(p)

    p = sub.add_parser("fuse", help="fuse a registered pair")
    _shared(p)
    p.add_argument("--fusion-mask", default=S, help="mask file for mask-max fusion")

    p = sub.add_parser("metrics", help="fusion-quality and matching metrics")
    _shared(p)
    p.add_argument("--fused", default=S, help="fused image; computed with --fusion when absent")
    p.add_argument("--fusion-mask", default=S)
    p.add_argument("--matches", default=S, help="matches TSV to score against --gt")
    p.add_argument("--eval-mask", default=S, help="restrict image metrics to this mask")

    p = sub.add_parser("synth", help="write synthetic scenes with ground truth")
    p.add_argument("--config", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--height", type=int, default=S)
    p.add_argument("--n-blobs", type=int, default=S)
    p.add_argument("--deform", choices=("none", "homography", "tps"), default=S)
    p.add_argument("--translate", type=float, nargs=2, metavar=("TX", "TY"), default=S)
    p.add_argument("--n-anchors", type=int, default=S)
    p.add_argument("--max-disp", type=float, default=S)
    p.add_argument("--gap", choices=("none", "invert", "gamma", "contrast_remap"), default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--count", type=int, default=S, help="number of scenes, seeds seed..seed+count-1")

    p = sub.add_parser("eval", help="omega sweep and per-method ablation table over a scene suite")
    _shared(p)
    p.add_argument("--suite", default=S, help="directory of scenes written by `synth`")
    p.add_argument("--omegas", type=float, nargs="+", default=S)
    p.add_argument("--perturb-cells", type=int, default=S)
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    path = flags.pop("config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise CLIError(EXIT_CONFIG, f"config {path} must be a JSON object")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise CLIError(EXIT_CONFIG, f"unknown config keys in {path}: {', '.join(unknown)}")
        cfg.update(doc)
    cfg.update(flags)
    cfg["command"] = args.command
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    write_atomic(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _hybrid_params(cfg: dict) -> HybridParams:
    try:
        return HybridParams(
            delta=float(cfg["delta"]),
            omega=float(cfg["omega"]),
            theta=float(cfg["theta"]),
            ransac_iters=int(cfg["ransac_iters"]),
            ransac_tol=float(cfg["ransac_tol"]),
            ransac_min_inliers=int(cfg["ransac_min_inliers"]),
            seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc


def _existing(path, what: str) -> Path:
    if path is None:
        raise CLIError(EXIT_CONFIG, f"missing required {what}")
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_CONFIG, f"{what} not found: {p}")
    return p


def _image(path, what: str) -> np.ndarray:
    try:
        return load_image(_existing(path, what))
    except ImageFormatError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc


def _features(spec: str, img: np.ndarray, unsigned: bool):
    if spec.startswith("file:"):
        path = _existing(spec[5:], "feature grid")
        try:
            return load_feature_grid(path)
        except FeatureFormatError as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from exc
    if spec not in EXTRACTORS:
        raise CLIError(EXIT_CONFIG, f"unknown features {spec!r}; use gradhist, meanvar or file:PATH")
    try:
        return extract_gradhist(img, unsigned=unsigned) if spec == "gradhist" else EXTRACTORS[spec](img)
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc


def _mask(spec, img: np.ndarray, grid, side: str) -> np.ndarray:
    if spec is None:
        raise CLIError(EXIT_CONFIG, f"missing {side} mask; pass --mask or --mask-{side} (file:PATH or propose:T)")
    h, w = img.shape
    if spec.startswith("propose:"):
        try:
            t = float(spec[8:])
            return propose_mask(strip_pool_saliency(grid), t, (w, h))
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, f"bad mask spec {spec!r}: {exc}") from exc
    path = spec[5:] if spec.startswith("file:") else spec
    try:
        return load_mask(_existing(path, f"{side} mask file"), (w, h))
    except (ImageFormatError, ValueError) as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc


def _ground_truth(cfg: dict):
    if cfg["gt"] is None:
        return None
    try:
        return read_ground_truth(_existing(cfg["gt"], "ground-truth sidecar"))
    except (KeyError, ValueError) as exc:
        raise CLIError(EXIT_CONFIG, f"bad ground-truth sidecar {cfg['gt']}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands

def _match(cfg: dict):
    ir = _image(cfg["ir"], "infrared image")
    vi = _image(cfg["vi"], "visible image")
    params = _hybrid_params(cfg)
    unsigned = bool(cfg["unsigned"])
    f_ir = _features(cfg["features_ir"] or cfg["features"], ir, unsigned)
    f_vi = _features(cfg["features_vi"] or cfg["features"], vi, unsigned)
    m_ir = _mask(cfg["mask_ir"] or cfg["mask"], ir, f_ir, "ir")
    m_vi = _mask(cfg["mask_vi"] or cfg["mask"], vi, f_vi, "vi")
    try:
        matches = run_hdm(f_ir, f_vi, m_ir, m_vi, params)
    except DegenerateRegionError as exc:
        raise CLIError(EXIT_DEGENERATE, str(exc)) from exc
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc
    if not -1.0 <= params.theta <= 1.0:
        print(f"sroireg {cfg['command']}: warning: theta {params.theta:g} lies outside the cosine range [-1, 1]",
              file=sys.stderr)
        matches = matches.with_warning("theta_outside_cosine_range")

    out = _out_dir(cfg)
    _write_json(out / "effective-config.json", cfg)
    write_atomic(out / "matches.tsv", matches.to_tsv().encode())
    log.info("%d matches survive", len(matches))
    summary = {"matches": len(matches), "warnings": list(matches.warnings)}
    gt = _ground_truth(cfg)
    if gt is not None:
        n, ok, acc = match_accuracy(matches, gt)
        summary.update(correct_matches=ok, accuracy=acc, tolerance=8.0)
    return ir, vi, m_ir, matches, gt, summary, out


def cmd_match(cfg: dict) -> int:
    *_, summary, out = _match(cfg)
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_register(cfg: dict) -> int:
    ir, vi, mask_ir, matches, gt, summary, out = _match(cfg)
    kind = cfg["transform"]
    need = 3 if kind == "tps" else 4
    if len(matches) < need:
        _write_json(out / "summary.json", summary)
        raise CLIError(EXIT_FEW_MATCHES, f"{len(matches)} matches; {kind} needs at least {need}")
    try:
        model = fit_model(matches.vi, matches.ir, kind, float(cfg["tps_reg"]))
    except FitError as exc:
        _write_json(out / "summary.json", summary)
        raise CLIError(EXIT_FEW_MATCHES, f"cannot fit {kind} to {len(matches)} matches: {exc}") from exc
    h, w = vi.shape
    warped = warp_image(ir, model, (w, h))
    save_image(warped, out / "warped.pgm")
    write_atomic(out / "model.txt", model.to_text().encode())
    if gt is not None:
        summary["registration_error"] = registration_error(model, GroundTruth(gt, mask_ir, None))
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_fuse(cfg: dict) -> int:
    ir = _image(cfg["ir"], "registered infrared image")
    vi = _image(cfg["vi"], "visible image")
    fused = _fused(cfg, ir, vi)
    out = _out_dir(cfg)
    _write_json(out / "effective-config.json", cfg)
    save_image(fused, out / "fused.pgm")
    return EXIT_OK


def _fused(cfg: dict, ir: np.ndarray, vi: np.ndarray) -> np.ndarray:
    strategy = cfg["fusion"].replace("-", "_")
    if strategy not in FUSIONS:
        raise CLIError(EXIT_CONFIG, f"unknown fusion {cfg['fusion']!r}")
    mask = None
    if strategy == "mask_max":
        spec = cfg["fusion_mask"]
        if spec is None:
            raise CLIError(EXIT_CONFIG, "mask-max fusion needs --fusion-mask PATH")
        h, w = vi.shape
        path = spec[5:] if spec.startswith("file:") else spec
        try:
            mask = load_mask(_existing(path, "fusion mask"), (w, h))
        except (ImageFormatError, ValueError) as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from exc
    try:
        return fuse(ir, vi, strategy, mask)
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc


def cmd_metrics(cfg: dict) -> int:
    ir = _image(cfg["ir"], "registered infrared image")
    vi = _image(cfg["vi"], "visible image")
    if ir.shape != vi.shape:
        raise CLIError(EXIT_CONFIG, f"dimension mismatch: ir {ir.shape[::-1]} vs vi {vi.shape[::-1]}")
    fused = _image(cfg["fused"], "fused image") if cfg["fused"] else _fused(cfg, ir, vi)
    if fused.shape != vi.shape:
        raise CLIError(EXIT_CONFIG, "fused image dimensions differ from the pair")
    matches = None
    if cfg["matches"]:
        try:
            matches = MatchSet.from_tsv(_existing(cfg["matches"], "matches TSV").read_text())
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from exc
    eval_mask = None
    if cfg["eval_mask"]:
        h, w = vi.shape
        eval_mask = load_mask(_existing(cfg["eval_mask"], "evaluation mask"), (w, h))
    report = metrics_report(ir, vi, fused, matches, _ground_truth(cfg), eval_mask)
    out = _out_dir(cfg)
    _write_json(out / "effective-config.json", cfg)
    write_atomic(out / "report.json", report.to_json().encode())
    write_atomic(out / "report.tsv", report.to_tsv().encode())
    return EXIT_OK


def _scene_spec(cfg: dict, seed: int) -> SceneSpec:
    kw = dict(
        size=(int(cfg["width"]), int(cfg["height"])),
        n_blobs=int(cfg["n_blobs"]),
        seed=seed,
        n_anchors=int(cfg["n_anchors"]),
        max_disp=float(cfg["max_disp"]),
        modality_gap=cfg["gap"],
        gamma=float(cfg["gamma"]),
    )
    if cfg["translate"] is not None:
        tx, ty = cfg["translate"]
        return SceneSpec.translation(tx, ty, **kw)
    return SceneSpec(deform=cfg["deform"], **kw)


def cmd_synth(cfg: dict) -> int:
    count = int(cfg["count"])
    if count < 1:
        raise CLIError(EXIT_CONFIG, "--count must be at least 1")
    try:
        specs = [_scene_spec(cfg, int(cfg["seed"]) + i) for i in range(count)]
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from exc
    out = _out_dir(cfg)
    _write_json(out / "effective-config.json", cfg)
    if count == 1:
        write_scene(generate(specs[0]), out)
    else:
        for i, spec in enumerate(specs):
            write_scene(generate(spec), out / f"case_{i:03d}")
    return EXIT_OK


def _suite(path) -> list[Case]:
    if path is None:
        raise CLIError(EXIT_CONFIG, "missing --suite")
    root = Path(path)
    if not root.is_dir():
        raise CLIError(EXIT_CONFIG, f"suite directory not found: {root}")
    dirs = [root] if (root / "scene.json").is_file() else sorted(
        d for d in root.iterdir() if (d / "scene.json").is_file())
    if not dirs:
        raise CLIError(EXIT_CONFIG, f"suite {root} holds no scenes")
    return [read_scene(d) for d in dirs]


def cmd_eval(cfg: dict) -> int:
    cases = _suite(cfg["suite"])
    params = _hybrid_params(cfg)
    feats = cfg["features"]
    if feats not in EXTRACTORS:
        raise CLIError(EXIT_CONFIG, "eval supports the built-in extractors only (gradhist, meanvar)")
    try:
        rows = omega_sweep(cases, cfg["omegas"], params, feats, int(cfg["perturb_cells"]), methods=True)
    except DegenerateRegionError as exc:
        raise CLIError(EXIT_DEGENERATE, str(exc)) from exc
    out = _out_dir(cfg)
    _write_json(out / "effective-config.json", cfg)
    write_atomic(out / "table.tsv", format_table(rows).encode())
    return EXIT_OK


COMMANDS = {
    "match": cmd_match,
    "register": cmd_register,
    "fuse": cmd_fuse,
    "metrics": cmd_metrics,
    "synth": cmd_synth,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except CLIError as exc:
        print(f"sroireg {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
