"""Region-constrained infrared/visible image registration.

Dense grid points inside a region mask are matched with a hybrid of dense
descriptor similarity and hierarchical orientation-line (HOL) shape
descriptors, filtered by RANSAC, and used to fit a thin-plate spline or a
homography that warps the infrared image onto the visible one.
"""
from .evalfuse import MetricsReport, fuse, match_accuracy, metrics_report
from .features import FeatureGrid, extract_gradhist, extract_meanvar, load_feature_grid, save_feature_grid
from .hdm import DegenerateRegionError, HybridParams, MatchSet, run_hdm
from .hol import HOLParams, build_hol, chi2_cost, hol_cost_matrix
from .imagecore import GridPointSet, grid_points, load_image, load_mask, save_image
from .transform import FitError, HomographyModel, TPSModel, fit_homography, fit_tps, warp_image

__version__ = "0.1.0"

__all__ = [
    "DegenerateRegionError",
    "FeatureGrid",
    "FitError",
    "GridPointSet",
    "HOLParams",
    "HomographyModel",
    "HybridParams",
    "MatchSet",
    "MetricsReport",
    "TPSModel",
    "build_hol",
    "chi2_cost",
    "extract_gradhist",
    "extract_meanvar",
    "fit_homography",
    "fit_tps",
    "fuse",
    "grid_points",
    "hol_cost_matrix",
    "load_feature_grid",
    "load_image",
    "load_mask",
    "match_accuracy",
    "metrics_report",
    "run_hdm",
    "save_feature_grid",
    "save_image",
    "warp_image",
]
