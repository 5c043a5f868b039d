"""Pose-error metrics (VSD, MSSD, MSPD), Average Recall, and detection AP/AR.

Threshold grids follow the BOP2020 convention: VSD misalignment tolerances
and correctness thresholds step from 0.05 to 0.5, MSSD thresholds are
fractions of the object diameter, MSPD thresholds scale with image width
relative to a 640 px reference. An estimate is correct w.r.t. a pose-error
function e when e < theta_e; the Average Recall of a metric is the fraction
of (estimate, threshold) combinations judged correct, and the overall AR
averages the three metrics.

Estimates are matched to ground truth greedily in selection order, each to
the unmatched visible instance with the smallest symmetry-aware surface
distance; unmatched estimates count as failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, SymmetrySet, TriangleMesh, compose, project
from .render import RenderConfig, render_single, visibility_mask

__all__ = [
    "EvalConfig",
    "PoseError",
    "EvalReport",
    "DetectionMetrics",
    "mssd",
    "mspd",
    "vsd",
    "vsd_from_depths",
    "pose_errors",
    "average_recall",
    "match_estimates",
    "detection_metrics",
]


def _grid(step: float, count: int) -> tuple:
    return tuple(step * i for i in range(1, count + 1))


@dataclass(frozen=True)
class EvalConfig:
    vsd_taus_frac: tuple = field(default_factory=lambda: _grid(0.05, 10))
    vsd_thresholds: tuple = field(default_factory=lambda: _grid(0.05, 10))
    mssd_thresholds_frac: tuple = field(default_factory=lambda: _grid(0.05, 10))
    mspd_thresholds_base: tuple = field(default_factory=lambda: _grid(5.0, 10))
    visib_threshold: float = 0.10
    visib_tol_mm: float = 5.0

    def __post_init__(self):
        for name in ("vsd_taus_frac", "vsd_thresholds", "mssd_thresholds_frac", "mspd_thresholds_base"):
            grid = getattr(self, name)
            if len(grid) == 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be nonempty and strictly increasing")


@dataclass(frozen=True)
class PoseError:
    """Errors of one (estimate, ground truth) pair; vsd is per-tau."""

    vsd: tuple
    mssd_mm: float
    mspd_px: float


@dataclass(frozen=True)
class EvalReport:
    n_estimates: int
    ar_vsd: float | None
    ar_mssd: float | None
    ar_mspd: float | None
    ar: float | None
    empty: bool = False


@dataclass(frozen=True)
class DetectionMetrics:
    ap50: float
    ap50_95: float
    ar_max100: float


def mssd(est: Pose, gt: Pose, sym: SymmetrySet, vertices: np.ndarray) -> float:
    """Maximum Symmetry-aware Surface Distance in mm.

    :param est: estimated model-to-camera pose.
    :param gt: ground-truth model-to-camera pose.
    :param sym: discrete symmetry set of the object.
    :param vertices: (n, 3) model points in mm.
    :return: min over symmetries of the max vertex displacement.
    """
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty vertex set")
    pts_est = est.transform(pts)
    best = np.inf
    for s in sym.rotations:
        pts_gt = compose(gt, Pose(s, np.zeros(3))).transform(pts)
        d = np.sqrt(((pts_est - pts_gt) ** 2).sum(axis=1)).max()
        best = min(best, float(d))
    return best


def mspd(est: Pose, gt: Pose, sym: SymmetrySet, vertices: np.ndarray, k: CameraIntrinsics) -> float:
    """Maximum Symmetry-aware Projection Distance in pixels.

    Raises if any transformed vertex falls behind the camera.
    """
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty vertex set")
    proj_est = project(k, est.transform(pts))
    best = np.inf
    for s in sym.rotations:
        proj_gt = project(k, compose(gt, Pose(s, np.zeros(3))).transform(pts))
        d = np.sqrt(((proj_est - proj_gt) ** 2).sum(axis=1)).max()
        best = min(best, float(d))
    return best


def vsd_from_depths(
    d_est: np.ndarray, d_gt: np.ndarray, scene_depth: np.ndarray, tau_mm: float, vis_tol_mm: float
) -> float:
    """Visible Surface Discrepancy from pre-rendered distance maps.

    Cost over the union of the two visibility masks: 1 where the pixel is
    not visible in both or the depths differ by more than tau, else 0; the
    error is the mean cost (1 for an empty union).
    """
    vis_est = visibility_mask(d_est, scene_depth, vis_tol_mm)
    vis_gt = visibility_mask(d_gt, scene_depth, vis_tol_mm)
    union = vis_est | vis_gt
    n_union = int(union.sum())
    if n_union == 0:
        return 1.0
    inter = vis_est & vis_gt
    diff = np.abs(d_est.astype(np.float64) - d_gt.astype(np.float64))
    n_match = int((inter & (diff <= tau_mm)).sum())
    return float((n_union - n_match) / n_union)


def vsd(
    est: Pose,
    gt: Pose,
    mesh: TriangleMesh,
    scene_depth: np.ndarray,
    render_cfg: RenderConfig,
    tau_mm: float,
    vis_tol_mm: float,
) -> float:
    """Visible Surface Discrepancy for a single misalignment tolerance."""
    d_est, _ = render_single(mesh, est, render_cfg)
    d_gt, _ = render_single(mesh, gt, render_cfg)
    return vsd_from_depths(d_est, d_gt, scene_depth, tau_mm, vis_tol_mm)


def pose_errors(
    est: Pose,
    gt: Pose,
    mesh: TriangleMesh,
    sym: SymmetrySet,
    scene_depth: np.ndarray,
    render_cfg: RenderConfig,
    cfg: EvalConfig,
) -> PoseError:
    """All three pose errors for one matched estimate."""
    d_est, _ = render_single(mesh, est, render_cfg)
    d_gt, _ = render_single(mesh, gt, render_cfg)
    taus = [f * mesh.diameter for f in cfg.vsd_taus_frac]
    vsd_errors = tuple(vsd_from_depths(d_est, d_gt, scene_depth, tau, cfg.visib_tol_mm) for tau in taus)
    return PoseError(
        vsd=vsd_errors,
        mssd_mm=mssd(est, gt, sym, mesh.vertices),
        mspd_px=mspd(est, gt, sym, mesh.vertices, render_cfg.intrinsics),
    )


FAILURE = PoseError(vsd=(), mssd_mm=np.inf, mspd_px=np.inf)
# failure vsd: treated as 1.0 at every tau


def average_recall(errors, cfg: EvalConfig, diameter_mm: float, image_width_px: int) -> EvalReport:
    """Average Recall over the threshold grids; AR averages the three metrics.

    An empty error list yields a report flagged empty with undefined AR
    rather than zero.
    """
    errors = list(errors)
    if not errors:
        return EvalReport(0, None, None, None, None, empty=True)

    n_tau = len(cfg.vsd_taus_frac)
    vsd_hits = 0
    for e in errors:
        per_tau = e.vsd if len(e.vsd) == n_tau else (1.0,) * n_tau
        for ev in per_tau:
            vsd_hits += sum(1 for th in cfg.vsd_thresholds if ev < th)
    ar_vsd = vsd_hits / (len(errors) * n_tau * len(cfg.vsd_thresholds))

    mssd_th = [f * diameter_mm for f in cfg.mssd_thresholds_frac]
    ar_mssd = float(
        np.mean([[e.mssd_mm < th for th in mssd_th] for e in errors])
    )
    r = image_width_px / 640.0
    mspd_th = [b * r for b in cfg.mspd_thresholds_base]
    ar_mspd = float(
        np.mean([[e.mspd_px < th for th in mspd_th] for e in errors])
    )
    ar = (ar_vsd + ar_mssd + ar_mspd) / 3.0
    return EvalReport(len(errors), ar_vsd, ar_mssd, ar_mspd, ar)


def match_estimates(selected, gt_instances, sym: SymmetrySet, vertices: np.ndarray, vis_threshold: float = 0.10):
    """Greedy one-to-one matching of ordered estimates to GT instances.

    In selection order, each estimate takes the unmatched instance with
    visible fraction >= vis_threshold that minimizes the symmetry-aware
    surface distance. Returns (estimate, instance-or-None) pairs; None
    marks a failure (no instance left).
    """
    candidates = [g for g in gt_instances if g.visible_fraction >= vis_threshold]
    taken = set()
    pairs = []
    for est in selected:
        best = None
        best_d = np.inf
        for j, inst in enumerate(candidates):
            if j in taken:
                continue
            d = mssd(est.pose, inst.pose_cam, sym, vertices)
            if d < best_d:
                best, best_d = j, d
        if best is None:
            pairs.append((est, None))
        else:
            taken.add(best)
            pairs.append((est, candidates[best]))
    return pairs


def _box_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def detection_metrics(dets, gt_dets, max_per_image: int = 100, interpolation: str = "auc") -> DetectionMetrics:
    """Box-IoU detection metrics: AP at IoU 0.5, AP 0.5:0.95, AR at 100.

    :param dets: DetectionSet of predictions.
    :param gt_dets: DetectionSet of ground truth boxes.
    :param max_per_image: per-image detection cap (score-ranked).
    :param interpolation: "auc" integrates the interpolated precision
        envelope exactly; "coco101" averages it at 101 recall points.
    :return: DetectionMetrics with values in [0, 1].
    """
    if interpolation not in ("auc", "coco101"):
        raise ValueError("interpolation must be 'auc' or 'coco101'")
    image_ids = sorted(set(dets.by_image) | set(gt_dets.by_image))
    gt_boxes = {i: [d.bbox for d in gt_dets.by_image.get(i, [])] for i in image_ids}
    n_gt = sum(len(v) for v in gt_boxes.values())

    ranked = []  # (score, image_id, in-image rank, bbox)
    for i in image_ids:
        img_dets = sorted(
            enumerate(dets.by_image.get(i, [])), key=lambda p: (-p[1].score, p[0])
        )[:max_per_image]
        for rank, (orig_idx, d) in enumerate(img_dets):
            ranked.append((d.score, i, rank, orig_idx, d.bbox))
    ranked.sort(key=lambda r: (-r[0], r[1], r[2]))

    thresholds = [0.5 + 0.05 * i for i in range(10)]
    aps = []
    recalls = []
    for th in thresholds:
        matched = {i: [False] * len(gt_boxes[i]) for i in image_ids}
        tp = np.zeros(len(ranked))
        for n, (_, img, _, _, box) in enumerate(ranked):
            best_iou, best_j = th, -1
            for j, gbox in enumerate(gt_boxes[img]):
                if matched[img][j]:
                    continue
                iou = _box_iou(box, gbox)
                if iou >= best_iou:
                    best_iou, best_j = iou, j
            if best_j >= 0:
                matched[img][best_j] = True
                tp[n] = 1.0
        if n_gt == 0:
            aps.append(0.0)
            recalls.append(0.0)
            continue
        cum_tp = np.cumsum(tp)
        cum_fp = np.cumsum(1.0 - tp)
        recall = cum_tp / n_gt
        precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
        aps.append(_average_precision(recall, precision, interpolation))
        recalls.append(float(recall[-1]) if len(recall) else 0.0)

    return DetectionMetrics(ap50=aps[0], ap50_95=float(np.mean(aps)), ar_max100=float(np.mean(recalls)))


def _average_precision(recall: np.ndarray, precision: np.ndarray, interpolation: str) -> float:
    if len(recall) == 0:
        return 0.0
    # precision envelope: max precision at recall >= r
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    if interpolation == "coco101":
        grid = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(r[1:-1], grid, side="left")
        values = np.where(idx < len(recall), p[1:-1][np.minimum(idx, len(recall) - 1)], 0.0)
        return float(values.mean())
    steps = np.flatnonzero(r[1:] != r[:-1])
    return float(np.sum((r[steps + 1] - r[steps]) * p[steps + 1]))
