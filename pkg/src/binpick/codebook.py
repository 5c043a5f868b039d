"""Discretized rotation codebook and cosine k-NN rotation lookup.

The codebook pairs a quasi-uniform covering of the rotation group with one
embedding per rotation. Lookups score a test embedding against every entry
with the cosine similarity

    cos_i = (z_i . z_test) / (|z_i| |z_test|)

and return the top-k rotations, ties broken by lower codebook index.

The built-in embedder is a pixel template: area-downsample the crop to a
small grid, subtract the mean, divide by the norm. External encoders can
participate by writing codebook files in the documented format instead.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, Rotation, TriangleMesh
from .render import RenderConfig, area_resize, crop_square, render_scene

__all__ = [
    "EmbedderSpec",
    "Codebook",
    "ScoredRotation",
    "sample_rotations",
    "embed",
    "build_codebook",
    "knn_lookup",
    "mean_nn_spacing",
    "DEFAULT_CROP_PAD",
]

# Padding factor shared by codebook views and detection crops so both sides
# of the cosine comparison are scale-normalized the same way.
DEFAULT_CROP_PAD = 1.2

# Super-Fibonacci spiral constants: phi = sqrt(2), psi the real root of
# x^4 = x + 4; together they give a low-discrepancy covering of the
# unit-quaternion 3-sphere with antipodal pairs collapsing onto rotations.
_SF_PHI = math.sqrt(2.0)
_SF_PSI = 1.533751168755204288118041


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "pixel-template"
    crop_px: int = 128
    grid_px: int = 32
    normalization: str = "zero-mean-unit-norm"

    def __post_init__(self):
        if self.crop_px < 1 or self.grid_px < 1:
            raise ValueError("embedder sizes must be positive")
        if self.kind != "pixel-template":
            raise ValueError(f"unknown embedder kind '{self.kind}'")
        if self.normalization != "zero-mean-unit-norm":
            raise ValueError("unsupported normalization")

    @property
    def dimension(self) -> int:
        return self.grid_px * self.grid_px

    def fingerprint(self) -> str:
        text = f"{self.kind}|crop={self.crop_px}|grid={self.grid_px}|norm={self.normalization}|pad={DEFAULT_CROP_PAD}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ScoredRotation:
    rotation: Rotation
    similarity: float
    index: int


@dataclass(frozen=True)
class Codebook:
    """Immutable rotation-to-embedding table for one object.

    z_ref_mm, fx_ref_px, and the per-entry view bbox diagonals let the
    RGB-only translation mode turn an apparent-size ratio into a depth.
    """

    object_id: int
    embedder_id: str
    embedder_fingerprint: str
    render_fingerprint: str
    z_ref_mm: float
    fx_ref_px: float
    rotations: tuple
    embeddings: np.ndarray  # (n, d) float64
    view_diagonals_px: np.ndarray  # (n,) bbox diagonal of each rendered view

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        d = np.asarray(self.view_diagonals_px, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] == 0:
            raise ValueError("codebook needs at least one entry")
        if e.shape[0] != len(self.rotations) or d.shape[0] != e.shape[0]:
            raise ValueError("entry count mismatch")
        e.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "embeddings", e)
        object.__setattr__(self, "view_diagonals_px", d)

    @property
    def dimension(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def sample_rotations(n: int, seed: int) -> list:
    """Deterministic quasi-uniform covering of the rotation group.

    The first element is always the identity; the remaining n-1 rotations
    are a Super-Fibonacci spiral on the quaternion 3-sphere (antipodal
    pairs collapsed by quaternion canonicalization), composed with a seeded
    random offset rotation so different seeds give different coverings.
    """
    if n < 1:
        raise ValueError("rotation count must be >= 1")
    rots = [Rotation.identity()]
    m = n - 1
    if m == 0:
        return rots
    s = np.arange(m, dtype=np.float64) + 0.5
    t = s / m
    r = np.sqrt(t)
    big_r = np.sqrt(1.0 - t)
    alpha = 2.0 * math.pi * s / _SF_PHI
    beta = 2.0 * math.pi * s / _SF_PSI
    quats = np.stack(
        [r * np.sin(alpha), r * np.cos(alpha), big_r * np.sin(beta), big_r * np.cos(beta)], axis=1
    )
    rng = np.random.default_rng(np.random.SeedSequence((int(seed),)))
    offset = Rotation.random(rng)
    for q in quats:
        rots.append(offset * Rotation(q))
    return rots


def mean_nn_spacing(rotations) -> float:
    """Mean geodesic distance to the nearest neighbor within a rotation set."""
    q = np.stack([r.q for r in rotations])
    if len(q) < 2:
        raise ValueError("need at least two rotations")
    dots = np.abs(q @ q.T)
    np.fill_diagonal(dots, -1.0)
    nearest = dots.max(axis=1)
    return float(np.mean(2.0 * np.arccos(np.clip(nearest, -1.0, 1.0))))


def embed(crop: np.ndarray, spec: EmbedderSpec) -> np.ndarray:
    """Pixel-template embedding of a square gray crop.

    Invariant to brightness offsets (zero-mean) and positive contrast
    scaling (unit norm). Raises on constant crops ("degenerate crop").
    """
    crop = np.asarray(crop, dtype=np.float64)
    if crop.shape != (spec.crop_px, spec.crop_px):
        raise ValueError(f"crop must be {spec.crop_px}x{spec.crop_px}")
    small = area_resize(crop, spec.grid_px, spec.grid_px)
    flat = small.reshape(-1)
    flat = flat - flat.mean()
    norm = float(np.sqrt((flat * flat).sum()))
    if norm < 1e-12:
        raise ValueError("degenerate crop")
    return flat / norm


def render_view(mesh: TriangleMesh, rotation: Rotation, cfg: RenderConfig, z_ref_mm: float):
    """Render the object centered at (0, 0, z_ref); returns (depth, ids, gray)."""
    t = np.array([0.0, 0.0, z_ref_mm]) - rotation.rotate(mesh.centroid)
    return render_scene([(mesh, Pose(rotation, t), 1)], cfg)


def view_crop(gray: np.ndarray, mask: np.ndarray, center_uv, spec: EmbedderSpec):
    """Canonical codebook crop: padded square around the mask, resized.

    Returns (crop, bbox diagonal in px) or (None, 0.0) when the mask is
    empty. The window side is DEFAULT_CROP_PAD x the mask bbox max side,
    centered on center_uv, area-resampled to the embedder input size.
    """
    if not mask.any():
        return None, 0.0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    bw = int(cols[-1] - cols[0] + 1)
    bh = int(rows[-1] - rows[0] + 1)
    side = max(1, int(round(DEFAULT_CROP_PAD * max(bw, bh))))
    window = crop_square(gray, float(center_uv[0]), float(center_uv[1]), side)
    crop = area_resize(window, spec.crop_px, spec.crop_px)
    return crop, float(math.hypot(bw, bh))


def build_codebook(
    mesh: TriangleMesh,
    rotations,
    spec: EmbedderSpec,
    render_cfg: RenderConfig,
    z_ref_mm: float,
    object_id: int = 1,
) -> Codebook:
    """Render each rotation at the canonical distance and embed the crop.

    Entries whose crop is degenerate (object out of frame or featureless)
    are excluded with a warning; building fails if nothing remains.
    """
    if len(rotations) == 0:
        raise ValueError("rotation list must be nonempty")
    if z_ref_mm <= 0:
        raise ValueError("z_ref must be positive")
    k = render_cfg.intrinsics
    center = np.array([k.cx + k.fx * 0.0, k.cy + k.fy * 0.0])  # projection of (0,0,z_ref)
    kept_rots = []
    kept_embeddings = []
    kept_diagonals = []
    for i, rot in enumerate(rotations):
        depth, _, gray = render_view(mesh, rot, render_cfg, z_ref_mm)
        crop, diag = view_crop(gray, depth > 0, center, spec)
        if crop is None:
            warnings.warn(f"codebook entry {i}: empty render, excluded")
            continue
        try:
            z = embed(crop, spec)
        except ValueError:
            warnings.warn(f"codebook entry {i}: degenerate crop, excluded")
            continue
        kept_rots.append(rot)
        kept_embeddings.append(z)
        kept_diagonals.append(diag)
    if not kept_rots:
        raise ValueError("no valid codebook entries")
    return Codebook(
        object_id=object_id,
        embedder_id=spec.kind,
        embedder_fingerprint=spec.fingerprint(),
        render_fingerprint=render_fingerprint(render_cfg, z_ref_mm),
        z_ref_mm=float(z_ref_mm),
        fx_ref_px=float(k.fx),
        rotations=tuple(kept_rots),
        embeddings=np.stack(kept_embeddings),
        view_diagonals_px=np.array(kept_diagonals),
    )


def render_fingerprint(cfg: RenderConfig, z_ref_mm: float) -> str:
    k = cfg.intrinsics
    text = "|".join(
        repr(x)
        for x in (
            k.fx, k.fy, k.cx, k.cy, k.width, k.height,
            cfg.light_dir[0], cfg.light_dir[1], cfg.light_dir[2],
            cfg.near_mm, cfg.far_mm, float(z_ref_mm),
        )
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def knn_lookup(cb: Codebook, z_test: np.ndarray, k: int) -> list:
    """Exact top-k rotations by cosine similarity, ties to lower index."""
    z = np.asarray(z_test, dtype=np.float64).reshape(-1)
    if z.shape[0] != cb.dimension:
        raise ValueError(f"embedding dimension {z.shape[0]} != codebook dimension {cb.dimension}")
    if not (1 <= k <= len(cb)):
        raise ValueError("k out of range")
    zn = float(np.sqrt((z * z).sum()))
    if zn < 1e-12:
        raise ValueError("zero-norm test embedding")
    # elementwise product + sum stays off BLAS: bit-identical at any thread count
    dots = (cb.embeddings * z).sum(axis=1)
    norms = np.sqrt((cb.embeddings * cb.embeddings).sum(axis=1))
    cos = np.clip(dots / (norms * zn), -1.0, 1.0)
    order = np.lexsort((np.arange(len(cos)), -cos))[:k]
    return [ScoredRotation(cb.rotations[i], float(cos[i]), int(i)) for i in order]
