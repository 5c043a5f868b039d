"""Depth-error pose scoring, top-k selection strategies, and ICP refinement.

The depth error of an estimate compares the observed depth image against a
render of the object at the estimated pose, over the intersection of

  A1: the detection's segmentation mask,
  A2: pixels where both depths are valid and differ by less than a margin,
  A3: the rendered object's mask,

summing the absolute depth differences over A1 n A2 n A3. The literal sum
favours small visible objects, so the default ranking key is the per-pixel
mean with a minimum-coverage gate; the plain sum stays selectable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, Rotation, TriangleMesh, sample_surface_points
from .render import RenderConfig, render_single

__all__ = [
    "SelectionConfig",
    "SelectionScore",
    "IcpConfig",
    "IcpResult",
    "SORT_METHODS",
    "depth_error",
    "score_depth_error",
    "select_top_k",
    "icp_refine",
    "detection_cloud",
]

SORT_DETECTOR = "detector_score"
SORT_COSINE = "cosine"
SORT_DEPTH = "depth_error"
SORT_METHODS = (SORT_DETECTOR, SORT_COSINE, SORT_DEPTH)


@dataclass(frozen=True)
class SelectionConfig:
    margin_mm: float = 5.0
    min_coverage: float = 0.3
    variant: str = "mean"

    def __post_init__(self):
        if self.margin_mm <= 0:
            raise ValueError("margin must be positive")
        if not (0.0 <= self.min_coverage <= 1.0):
            raise ValueError("min coverage must be in [0, 1]")
        if self.variant not in ("mean", "sum"):
            raise ValueError("variant must be 'mean' or 'sum'")


@dataclass(frozen=True)
class SelectionScore:
    e_sum: float  # literal inlier depth-error sum, mm
    n_intersection: int
    n_rendered: int
    mean_error: float
    coverage: float
    disqualified: bool


def score_depth_error(
    obs: np.ndarray, rendered: np.ndarray, det_mask: np.ndarray, cfg: SelectionConfig
) -> SelectionScore:
    """Depth-error score from an already-rendered estimate depth image."""
    if obs.shape != rendered.shape or obs.shape != det_mask.shape:
        raise ValueError("image dimensions must match")
    obs_f = obs.astype(np.float64)
    ren_f = rendered.astype(np.float64)
    diff = np.abs(obs_f - ren_f)
    a2 = (obs > 0) & (rendered > 0) & (diff < cfg.margin_mm)
    a3 = rendered > 0
    inter = det_mask & a2 & a3
    n_inter = int(inter.sum())
    n_rendered = int(a3.sum())
    e_sum = float(diff[inter].sum())
    mean_error = e_sum / n_inter if n_inter > 0 else 0.0
    coverage = n_inter / n_rendered if n_rendered > 0 else 0.0
    disqualified = n_rendered == 0 or coverage < cfg.min_coverage
    return SelectionScore(e_sum, n_inter, n_rendered, mean_error, coverage, disqualified)


def depth_error(
    obs: np.ndarray,
    est_pose: Pose,
    mesh: TriangleMesh,
    det_mask: np.ndarray,
    render_cfg: RenderConfig,
    cfg: SelectionConfig,
) -> SelectionScore:
    """Render the object at the estimated pose and score it against obs."""
    rendered, _ = render_single(mesh, est_pose, render_cfg)
    return score_depth_error(obs, rendered, det_mask, cfg)


def select_top_k(scored_estimates, method: str, k: int, cfg: SelectionConfig | None = None):
    """Order (PoseEstimate, SelectionScore | None) pairs and truncate to k.

    detector_score and cosine sort descending on their keys; depth_error
    sorts qualified estimates ascending on the configured variant key and
    ranks disqualified ones last, by coverage descending. All ties resolve
    by detection index ascending.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if method not in SORT_METHODS:
        raise ValueError(f"unknown sort method '{method}'")
    if cfg is None:
        cfg = SelectionConfig()

    def key(pair):
        est, score = pair
        if method == SORT_DETECTOR:
            return (-est.detector_score, est.detection_index)
        if method == SORT_COSINE:
            return (-est.cosine, est.detection_index)
        if score is None:
            raise ValueError("depth_error sorting requires selection scores")
        value = score.mean_error if cfg.variant == "mean" else score.e_sum
        if score.disqualified:
            return (1, -score.coverage, est.detection_index)
        return (0, value, est.detection_index)

    return sorted(scored_estimates, key=key)[:k]


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    tolerance_mm: float = 1e-4
    max_corr_mm: float = 10.0
    model_points: int = 1000
    seed: int = 0

    def __post_init__(self):
        if min(self.max_iterations, self.model_points) < 1 or min(self.tolerance_mm, self.max_corr_mm) <= 0:
            raise ValueError("ICP parameters must be positive")


@dataclass(frozen=True)
class IcpResult:
    pose: Pose
    rms_mm: float
    iterations: int
    converged: bool
    message: str
    residuals: tuple  # per-iteration RMS, non-increasing


def icp_refine(obs_points: np.ndarray, mesh: TriangleMesh, init: Pose, cfg: IcpConfig) -> IcpResult:
    """Point-to-point ICP of an observed cloud against the model surface.

    Correspondences pair each observed point with its nearest model-surface
    sample within max_corr_mm; each update is the closed-form least-squares
    rigid alignment. Iteration stops when the pose change or the RMS
    improvement drops below the tolerance, on the iteration cap, or as soon
    as the RMS residual would increase (the previous pose is kept, so
    reported residuals never increase). If no iteration finds at least 3
    correspondences the initial pose is returned unchanged, flagged
    "no correspondences".
    """
    obs = np.asarray(obs_points, dtype=np.float64).reshape(-1, 3)
    if obs.shape[0] == 0:
        raise ValueError("empty observation cloud")
    model = sample_surface_points(mesh, cfg.model_points, seed=cfg.seed)
    tree = cKDTree(model)

    # raw (R, t) in the loop; einsum keeps the transforms off BLAS so the
    # result is bit-identical at any thread count
    r_mat = init.rotation.as_matrix()
    t_vec = init.translation.copy()
    prev = None  # (r, t, rms)
    residuals = []
    iterations = 0
    for _ in range(cfg.max_iterations):
        local = np.einsum("ni,ij->nj", obs - t_vec, r_mat, optimize=False)
        dist, idx = tree.query(local, distance_upper_bound=cfg.max_corr_mm)
        valid = np.isfinite(dist)
        if int(valid.sum()) < 3:
            break
        rms = float(np.sqrt(np.mean(dist[valid] ** 2)))
        if prev is not None and rms > prev[2] + 1e-12:
            r_mat, t_vec = prev[0], prev[1]
            break
        residuals.append(rms)
        iterations += 1
        if prev is not None and prev[2] - rms < cfg.tolerance_mm:
            break  # residual improvement below tolerance

        src = np.einsum("ni,ji->nj", model[idx[valid]], r_mat, optimize=False) + t_vec
        dr, dt = _rigid_align(src, obs[valid])
        prev = (r_mat, t_vec, rms)
        r_mat = dr @ r_mat
        t_vec = dr @ t_vec + dt

        angle = math.acos(min(1.0, max(-1.0, (np.trace(dr) - 1.0) / 2.0)))
        step = float(np.linalg.norm(dt)) + angle * mesh.bounding_radius
        if step < cfg.tolerance_mm:
            break

    if not residuals:
        return IcpResult(init, float("inf"), 0, False, "no correspondences", ())
    pose = Pose(Rotation.from_matrix(r_mat), t_vec)
    return IcpResult(pose, residuals[-1], iterations, True, "ok", tuple(residuals))


def detection_cloud(depth: np.ndarray, mask: np.ndarray, k, max_points: int | None = None) -> np.ndarray:
    """Back-projected mask-interior depth pixels (camera frame, mm).

    Points are back-projected at pixel centers. With max_points set, the
    cloud is thinned by an even deterministic stride.
    """
    from .geometry import back_project

    valid = mask & (depth > 0)
    rows, cols = np.nonzero(valid)
    if rows.size == 0:
        return np.zeros((0, 3))
    z = depth[rows, cols].astype(np.float64)
    pts = back_project(k, cols + 0.5, rows + 0.5, z)
    if max_points is not None and pts.shape[0] > max_points:
        idx = np.round(np.linspace(0, pts.shape[0] - 1, max_points)).astype(int)
        pts = pts[idx]
    return pts


def _rigid_align(src: np.ndarray, dst: np.ndarray):
    """Closed-form rigid (R, t) minimizing |R src + t - dst|^2 (Kabsch)."""
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = np.einsum("ni,nj->ij", src - sc, dst - dc, optimize=False)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, dc - r @ sc
