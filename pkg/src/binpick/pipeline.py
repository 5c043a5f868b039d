"""Per-detection pose estimation: crop, rotation via codebook, translation.

Rotation comes from the top-1 codebook entry for the detection's crop
embedding and is not re-estimated afterwards. Translation is decoupled:
either from the depth at the object center (plus a surface-to-center
offset) or, RGB-only, from the apparent-size ratio against the matched
codebook view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, EmbedderSpec, embed, knn_lookup
from .geometry import CameraIntrinsics, Pose, TriangleMesh, back_project
from .render import area_resize, crop_square
from .scenegen import Detection

__all__ = [
    "CropSpec",
    "TranslationMode",
    "PoseEstimate",
    "extract_crop",
    "estimate_translation",
    "estimate_poses",
    "default_surface_offset",
]

log = logging.getLogger(__name__)

MODE_DEPTH_CENTER = "depth_center"
MODE_RGB_SCALE = "rgb_scale"


@dataclass(frozen=True)
class CropSpec:
    pad_factor: float = 1.2
    out_px: int = 128
    mask_only: bool = False

    def __post_init__(self):
        if self.pad_factor < 1.0:
            raise ValueError("padding factor must be >= 1")
        if self.out_px < 1:
            raise ValueError("output size must be positive")


@dataclass(frozen=True)
class TranslationMode:
    """Depth recovery strategy.

    surface_offset_mm shifts the measured front-surface depth toward the
    object center; the default for a given mesh is half its smallest
    bounding-box extent (see default_surface_offset), 0 reproduces the raw
    center-depth reading.
    """

    mode: str = MODE_DEPTH_CENTER
    center_window_px: int = 5
    surface_offset_mm: float = 0.0

    def __post_init__(self):
        if self.mode not in (MODE_DEPTH_CENTER, MODE_RGB_SCALE):
            raise ValueError(f"unknown translation mode '{self.mode}'")
        if self.center_window_px < 1 or self.center_window_px % 2 == 0:
            raise ValueError("center window must be odd and >= 1")


def default_surface_offset(mesh: TriangleMesh) -> float:
    """Half the smallest model bounding-box extent, in mm."""
    return float(mesh.extents().min() / 2.0)


@dataclass(frozen=True)
class PoseEstimate:
    image_id: int
    detection_index: int
    pose: Pose
    cosine: float
    detector_score: float
    mode: str
    refined: bool = False


def extract_crop(gray: np.ndarray, det: Detection, spec: CropSpec) -> np.ndarray:
    """Square detection crop: padded window around the bbox, area-resampled.

    The window side is pad_factor x max(bbox w, h), centered on the bbox
    center, zero-padded beyond image borders. With mask_only, pixels outside
    the detection mask are zeroed before resampling.
    """
    x, y, w, h = det.bbox
    if w <= 0 or h <= 0:
        raise ValueError("zero-area bbox")
    src = gray
    if spec.mask_only:
        src = np.where(det.mask, gray, 0.0)
    side = max(1, int(round(spec.pad_factor * max(w, h))))
    window = crop_square(src, x + w / 2.0, y + h / 2.0, side)
    return area_resize(window, spec.out_px, spec.out_px)


def estimate_translation(
    det: Detection,
    depth: np.ndarray | None,
    k: CameraIntrinsics,
    mode: TranslationMode,
    cb: Codebook,
    entry_index: int | None = None,
) -> np.ndarray:
    """Object-center translation (mm) for one detection.

    depth_center: median of valid mask-interior depths inside the center
    window, plus the surface offset. rgb_scale: depth from the ratio of the
    matched codebook view's bbox diagonal (entry_index) to the detected
    bbox diagonal, scaled by the codebook distance and the focal-length
    ratio between the two cameras. Both modes place (x, y) by
    back-projecting the bbox center at the recovered depth.
    """
    x, y, w, h = det.bbox
    ucf = x + w / 2.0
    vcf = y + h / 2.0
    if mode.mode == MODE_DEPTH_CENTER:
        if depth is None:
            raise ValueError("depth_center mode requires a depth image")
        half = mode.center_window_px // 2
        uc = int(round(ucf - 0.5))
        vc = int(round(vcf - 0.5))
        r0, r1 = max(0, vc - half), min(depth.shape[0], vc + half + 1)
        c0, c1 = max(0, uc - half), min(depth.shape[1], uc + half + 1)
        window = depth[r0:r1, c0:c1]
        valid = (window > 0) & det.mask[r0:r1, c0:c1]
        if not valid.any():
            raise ValueError("no valid depth in center window")
        z = float(np.median(window[valid].astype(np.float64))) + mode.surface_offset_mm
    else:
        diag_det = float(np.hypot(w, h))
        if diag_det <= 0:
            raise ValueError("zero detected diagonal")
        if entry_index is None:
            raise ValueError("rgb_scale mode requires the matched codebook entry index")
        diag_cb = float(cb.view_diagonals_px[entry_index])
        if diag_cb <= 0:
            raise ValueError("no view diagonal stored for codebook entry")
        if cb.fx_ref_px <= 0:
            raise ValueError("codebook lacks a reference focal length for rgb_scale")
        # apparent size scales with fx / z; correct for differing cameras
        z = cb.z_ref_mm * (diag_cb / diag_det) * (k.fx / cb.fx_ref_px)
    return back_project(k, ucf, vcf, z)


def estimate_poses(
    gray: np.ndarray,
    depth: np.ndarray | None,
    detections,
    cb: Codebook,
    k: CameraIntrinsics,
    crop_spec: CropSpec,
    mode: TranslationMode,
    embedder: EmbedderSpec | None = None,
) -> list:
    """Estimate one pose per detection; degenerate detections are skipped.

    Skipped detections are reported through the module logger; output order
    follows detection order.
    """
    if embedder is None:
        embedder = EmbedderSpec(crop_px=crop_spec.out_px)
    estimates = []
    for idx, det in enumerate(detections):
        if det.object_id != cb.object_id:
            raise ValueError(f"detection object id {det.object_id} does not match codebook {cb.object_id}")
        try:
            crop = extract_crop(gray, det, crop_spec)
            z_test = embed(crop, embedder)
            top = knn_lookup(cb, z_test, 1)[0]
            t = estimate_translation(det, depth, k, mode, cb, entry_index=top.index)
        except ValueError as err:
            log.warning("skipping detection %d of image %d: %s", idx, det.image_id, err)
            continue
        estimates.append(
            PoseEstimate(
                image_id=det.image_id,
                detection_index=idx,
                pose=Pose(top.rotation, t),
                cosine=top.similarity,
                detector_score=det.score,
                mode=mode.mode,
            )
        )
    return estimates
