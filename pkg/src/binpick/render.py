"""Software z-buffer rasterizer producing depth, instance-id, and shaded images.

Depth images are uint16 arrays in mm (0 = no surface), instance maps are
uint16 arrays (0 = background), gray images are float64 arrays in [0, 1].

Rasterization rules:
  * a pixel is covered when its center (col + 0.5, row + 0.5) lies inside
    the projected triangle; shared edges follow the top-left fill convention,
  * per-pixel depth is the perspective-correct interpolated z at the pixel
    center, rounded to integer mm,
  * nearest quantized depth wins; on a tie the lower instance id wins,
  * back-face culling is disabled (CAD meshes may have mixed winding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, TriangleMesh

__all__ = [
    "RenderConfig",
    "render_scene",
    "render_single",
    "visibility_mask",
    "crop_square",
    "area_resize",
]

# Slightly off-axis default light; breaks silhouette ambiguities that a
# camera-aligned light would leave in shaded codebook views.
DEFAULT_LIGHT = np.array([-0.3, 0.25, -0.9]) / np.linalg.norm([-0.3, 0.25, -0.9])


@dataclass(frozen=True)
class RenderConfig:
    intrinsics: CameraIntrinsics
    light_dir: np.ndarray = field(default_factory=lambda: DEFAULT_LIGHT.copy())
    near_mm: float = 10.0
    far_mm: float = 5000.0

    def __post_init__(self):
        if not (0 < self.near_mm < self.far_mm):
            raise ValueError("require 0 < near < far")
        if self.far_mm > 65534:
            raise ValueError("far clip must fit 16-bit mm depth (<= 65534)")
        light = np.asarray(self.light_dir, dtype=np.float64).reshape(3)
        n = np.linalg.norm(light)
        if n < 1e-12:
            raise ValueError("light direction must be nonzero")
        light = light / n
        light.setflags(write=False)
        object.__setattr__(self, "light_dir", light)


def render_scene(instances, cfg: RenderConfig):
    """Render a list of (mesh, pose, instance_id) into (depth, ids, gray).

    Poses are model-to-camera. Instance ids must be unique and in 1..65535.
    An empty instance list yields all-background images.
    """
    k = cfg.intrinsics
    h, w = k.height, k.width
    qbuf = np.full((h, w), 65535, dtype=np.uint16)
    idbuf = np.zeros((h, w), dtype=np.uint16)
    graybuf = np.zeros((h, w), dtype=np.float64)

    seen = set()
    for _, _, iid in instances:
        iid = int(iid)
        if not (1 <= iid <= 65535):
            raise ValueError("instance ids must be in 1..65535")
        if iid in seen:
            raise ValueError(f"duplicate instance id {iid}")
        seen.add(iid)

    for mesh, pose, iid in instances:
        _raster_instance(qbuf, idbuf, graybuf, mesh, pose, int(iid), cfg)

    depth = np.where(idbuf > 0, qbuf, 0).astype(np.uint16)
    return depth, idbuf, graybuf


def render_single(mesh: TriangleMesh, pose: Pose, cfg: RenderConfig, instance_id: int = 1):
    """Render one object; returns (depth, mask) with mask pixels where depth > 0."""
    depth, ids, _ = render_scene([(mesh, pose, instance_id)], cfg)
    return depth, ids


def visibility_mask(solo: np.ndarray, scene: np.ndarray, tol_mm: float) -> np.ndarray:
    """Pixels where the solo-rendered surface is the visible front surface.

    A solo pixel is visible when its depth is within tol_mm of (or in front
    of) the scene depth at that pixel. Pixels where the scene has no surface
    are not visible.
    """
    if solo.shape != scene.shape:
        raise ValueError("depth image dimensions must match")
    return (solo > 0) & (solo.astype(np.float64) <= scene.astype(np.float64) + tol_mm)


def _raster_instance(qbuf, idbuf, graybuf, mesh, pose, iid, cfg):
    k = cfg.intrinsics
    verts = pose.transform(mesh.vertices)
    tris = mesh.triangles
    light = cfg.light_dir

    e1 = verts[tris[:, 1]] - verts[tris[:, 0]]
    e2 = verts[tris[:, 2]] - verts[tris[:, 0]]
    normals = np.cross(e1, e2)
    centers = verts[tris].mean(axis=1)
    # flip normals to face the camera (centers point away from the origin)
    flip = (normals * centers).sum(axis=1) > 0
    normals[flip] = -normals[flip]
    norms = np.sqrt((normals**2).sum(axis=1))
    ok = norms > 1e-12
    shades = np.zeros(len(tris))
    shades[ok] = np.clip((normals[ok] / norms[ok, None] * light).sum(axis=1), 0.0, 1.0)

    near, far = cfg.near_mm, cfg.far_mm
    zs = verts[:, 2]
    tri_z = zs[tris]
    skip = tri_z.max(axis=1) < near  # fully in front of the near plane

    for t in range(len(tris)):
        if skip[t]:
            continue
        tri = verts[tris[t]]
        for clipped in _clip_near(tri, near):
            _raster_triangle(qbuf, idbuf, graybuf, clipped, k, iid, shades[t], far)


def _clip_near(tri: np.ndarray, near: float):
    """Clip a camera-space triangle against z >= near; yields 0-2 triangles."""
    inside = tri[:, 2] >= near
    n_in = int(inside.sum())
    if n_in == 3:
        yield tri
        return
    if n_in == 0:
        return
    poly = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        if inside[i]:
            poly.append(a)
        if inside[i] != inside[(i + 1) % 3]:
            s = (near - a[2]) / (b[2] - a[2])
            poly.append(a + s * (b - a))
    for j in range(1, len(poly) - 1):
        yield np.array([poly[0], poly[j], poly[j + 1]])


def _raster_triangle(qbuf, idbuf, graybuf, tri, k, iid, shade, far):
    h, w = qbuf.shape
    z = tri[:, 2]
    u = k.cx + k.fx * tri[:, 0] / z
    v = k.cy + k.fy * tri[:, 1] / z
    p = np.stack([u, v], axis=1)

    area2 = _edge(p[0], p[1], p[2])
    if area2 == 0.0:
        return
    if area2 < 0.0:
        p = p[[0, 2, 1]]
        z = z[[0, 2, 1]]
        area2 = -area2

    c0 = max(0, math.ceil(p[:, 0].min() - 0.5))
    c1 = min(w - 1, math.floor(p[:, 0].max() - 0.5))
    r0 = max(0, math.ceil(p[:, 1].min() - 0.5))
    r1 = min(h - 1, math.floor(p[:, 1].max() - 0.5))
    if c0 > c1 or r0 > r1:
        return

    xs = np.arange(c0, c1 + 1) + 0.5
    ys = np.arange(r0, r1 + 1) + 0.5
    px, py = np.meshgrid(xs, ys)

    cover = None
    bary = []
    # edge i runs opposite vertex i; E_i(vertex_i) == area2
    for a, b in ((1, 2), (2, 0), (0, 1)):
        e = (p[b, 0] - p[a, 0]) * (py - p[a, 1]) - (p[b, 1] - p[a, 1]) * (px - p[a, 0])
        dy = p[b, 1] - p[a, 1]
        dx = p[b, 0] - p[a, 0]
        top_left = (dy == 0.0 and dx > 0.0) or dy < 0.0
        accept = (e > 0.0) | ((e == 0.0) & top_left)
        cover = accept if cover is None else (cover & accept)
        bary.append(e / area2)

    if not cover.any():
        return

    inv_z = bary[0] / z[0] + bary[1] / z[1] + bary[2] / z[2]
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        depth = 1.0 / inv_z
    cover &= np.isfinite(depth) & (depth <= far)
    if not cover.any():
        return

    q = np.rint(depth).clip(1, 65534).astype(np.uint16)
    window_q = qbuf[r0 : r1 + 1, c0 : c1 + 1]
    window_id = idbuf[r0 : r1 + 1, c0 : c1 + 1]
    win = cover & ((q < window_q) | ((q == window_q) & (iid < window_id)))
    if not win.any():
        return
    window_q[win] = q[win]
    window_id[win] = iid
    graybuf[r0 : r1 + 1, c0 : c1 + 1][win] = shade


def _edge(a, b, c) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def crop_square(img: np.ndarray, cx: float, cy: float, side: int) -> np.ndarray:
    """Square window of the image centered at (cx, cy), zero-padded at borders."""
    if side < 1:
        raise ValueError("window side must be >= 1")
    h, w = img.shape
    c0 = int(round(cx - side / 2.0))
    r0 = int(round(cy - side / 2.0))
    out = np.zeros((side, side), dtype=np.float64)
    sc0, sc1 = max(c0, 0), min(c0 + side, w)
    sr0, sr1 = max(r0, 0), min(r0 + side, h)
    if sc0 < sc1 and sr0 < sr1:
        out[sr0 - r0 : sr1 - r0, sc0 - c0 : sc1 - c0] = img[sr0:sr1, sc0:sc1]
    return out


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter (area-average) resampling to (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h == out_h and w == out_w:
        return img.copy()
    if h % out_h == 0 and w % out_w == 0:
        bh, bw = h // out_h, w // out_w
        return img.reshape(out_h, bh, out_w, bw).mean(axis=(1, 3))
    wr = _box_weights(h, out_h)
    wc = _box_weights(w, out_w)
    # einsum keeps this off BLAS so results do not depend on thread count
    tmp = np.einsum("oi,ij->oj", wr, img, optimize=False)
    return np.einsum("oj,pj->op", tmp, wc, optimize=False)


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    scale = n_in / n_out
    weights = np.zeros((n_out, n_in))
    edges = np.arange(n_in + 1, dtype=np.float64)
    for o in range(n_out):
        lo, hi = o * scale, (o + 1) * scale
        overlap = np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo)
        weights[o] = np.clip(overlap, 0.0, None) / scale
    return weights
