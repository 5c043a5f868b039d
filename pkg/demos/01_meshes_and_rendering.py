"""
Meshes, poses, and the software depth renderer
===============================================

Builds the two demo parts, places them in front of the camera, and renders
depth / instance-id / shaded images with the z-buffer rasterizer. Outputs
land in ./demo_out/01/.
"""

from pathlib import Path

import numpy as np

from binpick import CameraIntrinsics, Pose, Rotation, project, render_scene
from binpick.fileio import write_mesh, write_pgm8, write_pgm16
from binpick.render import RenderConfig
from binpick.shapes import make_box, make_lbracket

out = Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

# The demo parts are a flat box and a stepped L-bracket, both a few cm
# across (millimeter units everywhere).
box = make_box()
bracket = make_lbracket()
print(f"box: {len(box.vertices)} vertices, diameter {box.diameter:.1f} mm")
print(f"bracket: {len(bracket.vertices)} vertices, diameter {bracket.diameter:.1f} mm")
write_mesh(out / "box.txt", box)
write_mesh(out / "bracket.txt", bracket)

# A pinhole camera: 640x480, focal length 600 px. The camera frame is
# x right, y down, z forward.
cam = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)
cfg = RenderConfig(cam)

# project() maps camera-frame mm to pixels; the optical axis hits the
# principal point.
print("optical axis ->", project(cam, np.array([0.0, 0.0, 300.0])))
print("30 mm right  ->", project(cam, np.array([30.0, 0.0, 300.0])))

# Render a two-object scene. Poses map model points into the camera frame;
# instance ids key the per-pixel id image.
instances = [
    (box, Pose(Rotation.from_axis_angle([1, 0, 0], 0.4), [-30.0, 0.0, 300.0]), 1),
    (bracket, Pose(Rotation.from_axis_angle([0, 1, 0], 0.8), [25.0, 5.0, 280.0]), 2),
]
depth, ids, gray = render_scene(instances, cfg)
print(f"covered pixels: {(depth > 0).sum()}, depth range "
      f"[{depth[depth > 0].min()}, {depth.max()}] mm, ids {sorted(set(ids[ids > 0].tolist()))}")

# Depth and id images persist as 16-bit PGM (values = mm / instance id),
# the shaded image as 8-bit PGM.
write_pgm16(out / "depth.pgm", depth)
write_pgm16(out / "instances.pgm", ids)
write_pgm8(out / "gray.pgm", gray)
print("wrote", sorted(p.name for p in out.iterdir()))
