"""Command-line pipeline: scene generation through evaluation reports.

Stages (run in order; each reads its declared inputs and writes its
declared outputs under the run directory):

    genscenes   synthetic scenes: images + ground-truth poses
    codebook    rotation codebook for the object mesh
    detect-gt   ground-truth-derived detections (optional noise)
    estimate    per-detection pose estimates
    refine      ICP-refined copies of the estimates
    select      depth-error scores and top-k picks per sort method
    eval        VSD/MSSD/MSPD average recall per sort method
    report      tables, CSV, and SVG plots from eval outputs

Every stage appends to manifest.json (config echo + content hashes of
inputs and outputs) and to timings.txt. All randomness derives from the
master seed, so a full run is byte-reproducible except timings.txt.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bopeval, fileio, pipeline, select_refine
from .codebook import Codebook, EmbedderSpec, build_codebook, sample_rotations
from .geometry import CameraIntrinsics, SymmetrySet, load_mesh, load_symmetries
from .render import DEFAULT_LIGHT, RenderConfig
from .scenegen import DetectionPerturb, DetectionSet, SceneConfig, generate_scene, gt_detections

ENV_OUT = "BINPICK_OUT"

SORT_FLAG_TO_METHOD = {
    "score": select_refine.SORT_DETECTOR,
    "cosine": select_refine.SORT_COSINE,
    "depth": select_refine.SORT_DEPTH,
}
MODE_FLAG_TO_MODE = {"rgb": pipeline.MODE_RGB_SCALE, "depth": pipeline.MODE_DEPTH_CENTER}

DEFAULT_CONFIG = {
    "object_id": 1,
    "mesh": None,
    "symmetries": None,
    "master_seed": 0,
    "k": 5,
    "scenes": 10,
    "scene": {
        "instance_count": 30,
        "bin_extents_mm": [300.0, 300.0, 150.0],
        "cam_height_range_mm": [270.0, 330.0],
        "cam_cone_half_angle_deg": 20.0,
        "clearance_mm": 1.0,
        "overlap_factor": 1.0,
        "max_attempts": 100,
    },
    "camera": {"fx": 600.0, "fy": 600.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480},
    "render": {"near_mm": 10.0, "far_mm": 5000.0, "light_dir": list(DEFAULT_LIGHT)},
    "codebook": {
        "size": 4096,
        "seed": 0,
        "z_ref_mm": 300.0,
        "camera": {"fx": 400.0, "fy": 400.0, "cx": 80.0, "cy": 80.0, "width": 160, "height": 160},
    },
    "embedder": {"crop_px": 128, "grid_px": 32},
    "crop": {"pad_factor": 1.2, "out_px": 128, "mask_only": False},
    "translation": {"mode": "depth_center", "center_window_px": 5, "surface_offset_mm": None},
    "detect": {"min_visible_fraction": 0.10, "jitter_px": 0, "dropout_prob": 0.0},
    "selection": {"margin_mm": 5.0, "min_coverage": 0.3, "variant": "mean"},
    "icp": {"max_iterations": 30, "tolerance_mm": 1e-4, "max_corr_mm": 10.0, "model_points": 1000,
            "max_obs_points": 2000, "seed": 0},
    "eval": {"visib_threshold": 0.10, "visib_tol_mm": 5.0},
}


def _deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


class RunConfig:
    """Resolved configuration for one run; see DEFAULT_CONFIG for the schema."""

    def __init__(self, data: dict, out_dir: Path):
        self.data = data
        self.out_dir = Path(out_dir)

    @staticmethod
    def load(args) -> "RunConfig":
        data = DEFAULT_CONFIG
        if args.config:
            data = _deep_update(data, json.loads(Path(args.config).read_text()))
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if getattr(args, "scenes", None) is not None:
            overrides["scenes"] = args.scenes
        if getattr(args, "instances", None) is not None:
            overrides["scene"] = {"instance_count": args.instances}
        if getattr(args, "codebook_size", None) is not None:
            overrides["codebook"] = {"size": args.codebook_size}
        if args.k is not None:
            overrides["k"] = args.k
        if getattr(args, "mode", None):
            overrides["translation"] = {"mode": MODE_FLAG_TO_MODE[args.mode]}
        if getattr(args, "mask_only", False):
            overrides["crop"] = {"mask_only": True}
        if getattr(args, "mesh", None):
            overrides["mesh"] = args.mesh
        if getattr(args, "symmetries", None):
            overrides["symmetries"] = args.symmetries
        data = _deep_update(data, overrides)
        out = args.out or os.environ.get(ENV_OUT) or "binpick_out"
        return RunConfig(data, Path(out))

    # -- typed accessors -----------------------------------------------------
    @property
    def dataset_dir(self) -> Path:
        return self.out_dir / "dataset"

    @property
    def codebook_path(self) -> Path:
        return self.out_dir / "codebook.txt"

    def intrinsics(self) -> CameraIntrinsics:
        c = self.data["camera"]
        return CameraIntrinsics(c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"])

    def render_cfg(self, k: CameraIntrinsics | None = None) -> RenderConfig:
        r = self.data["render"]
        return RenderConfig(
            k or self.intrinsics(),
            light_dir=np.array(r["light_dir"], dtype=np.float64),
            near_mm=r["near_mm"],
            far_mm=r["far_mm"],
        )

    def scene_cfg(self) -> SceneConfig:
        s = self.data["scene"]
        return SceneConfig(
            object_id=self.data["object_id"],
            instance_count=s["instance_count"],
            bin_extents_mm=tuple(s["bin_extents_mm"]),
            cam_height_range_mm=tuple(s["cam_height_range_mm"]),
            cam_cone_half_angle_deg=s["cam_cone_half_angle_deg"],
            master_seed=self.data["master_seed"],
            clearance_mm=s["clearance_mm"],
            overlap_factor=s["overlap_factor"],
            max_attempts=s["max_attempts"],
        )

    def embedder_spec(self) -> EmbedderSpec:
        e = self.data["embedder"]
        return EmbedderSpec(crop_px=e["crop_px"], grid_px=e["grid_px"])

    def crop_spec(self) -> pipeline.CropSpec:
        c = self.data["crop"]
        return pipeline.CropSpec(c["pad_factor"], c["out_px"], c["mask_only"])

    def translation_mode(self, mesh) -> pipeline.TranslationMode:
        t = self.data["translation"]
        offset = t["surface_offset_mm"]
        if offset is None:
            offset = pipeline.default_surface_offset(mesh)
        return pipeline.TranslationMode(t["mode"], t["center_window_px"], offset)

    def selection_cfg(self) -> select_refine.SelectionConfig:
        s = self.data["selection"]
        return select_refine.SelectionConfig(s["margin_mm"], s["min_coverage"], s["variant"])

    def icp_cfg(self) -> select_refine.IcpConfig:
        i = self.data["icp"]
        return select_refine.IcpConfig(
            i["max_iterations"], i["tolerance_mm"], i["max_corr_mm"], i["model_points"], i["seed"]
        )

    def eval_cfg(self) -> bopeval.EvalConfig:
        e = self.data["eval"]
        return bopeval.EvalConfig(visib_threshold=e["visib_threshold"], visib_tol_mm=e["visib_tol_mm"])

    def mesh(self):
        path = self.data["mesh"]
        if not path:
            raise ValueError("config needs a mesh path (--mesh or \"mesh\" in the config file)")
        return load_mesh(path)

    def symmetries(self) -> SymmetrySet:
        path = self.data["symmetries"]
        return load_symmetries(path) if path else SymmetrySet.trivial()


class _Stage:
    """Collects written outputs so failures can clean up partial files."""

    def __init__(self, cfg: RunConfig, name: str):
        self.cfg = cfg
        self.name = name
        self.inputs = []
        self.outputs = []

    def run(self, fn) -> None:
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        try:
            fn(self)
        except BaseException:
            for p in self.outputs:
                Path(p).unlink(missing_ok=True)
            raise
        elapsed = time.perf_counter() - start
        manifest = fileio.Manifest(self.cfg.out_dir / "manifest.json")
        manifest.record(self.name, self.cfg.data, self.inputs, self.outputs, self.cfg.out_dir)
        with open(self.cfg.out_dir / "timings.txt", "a") as f:
            f.write(f"{self.name} {elapsed:.3f}\n")


def _estimates_name(icp: bool) -> str:
    return "estimates_refined.txt" if icp else "estimates.txt"


def _selection_name(icp: bool) -> str:
    return "selection_icp.txt" if icp else "selection.txt"


def _eval_name(icp: bool) -> str:
    return "eval_icp.json" if icp else "eval.json"


# ---------------------------------------------------------------------------
# stage implementations

def stage_genscenes(cfg: RunConfig, stage: _Stage) -> None:
    mesh = cfg.mesh()
    stage.inputs.append(cfg.data["mesh"])
    scfg = cfg.scene_cfg()
    rcfg = cfg.render_cfg()
    for sid in range(int(cfg.data["scenes"])):
        gt, depth, ids, gray = generate_scene(mesh, scfg, rcfg, scene_index=sid)
        stage.outputs.extend(fileio.write_scene(cfg.dataset_dir, sid, gt, depth, ids, gray))


def stage_codebook(cfg: RunConfig, stage: _Stage) -> None:
    mesh = cfg.mesh()
    stage.inputs.append(cfg.data["mesh"])
    cb_cfg = cfg.data["codebook"]
    cam = cb_cfg["camera"]
    k = CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"], cam["cy"], cam["width"], cam["height"])
    rotations = sample_rotations(int(cb_cfg["size"]), int(cb_cfg["seed"]))
    cb = build_codebook(
        mesh, rotations, cfg.embedder_spec(), cfg.render_cfg(k), cb_cfg["z_ref_mm"],
        object_id=cfg.data["object_id"],
    )
    fileio.write_codebook(cfg.codebook_path, cb)
    stage.outputs.append(cfg.codebook_path)


def stage_detect_gt(cfg: RunConfig, stage: _Stage) -> None:
    d = cfg.data["detect"]
    perturb = None
    if d["jitter_px"] > 0 or d["dropout_prob"] > 0:
        perturb = DetectionPerturb(cfg.data["master_seed"], d["jitter_px"], d["dropout_prob"])
    for sid in _scene_ids(cfg, stage):
        gt = fileio.load_gt_poses(cfg.dataset_dir, sid)
        _, ids, _ = fileio.load_scene_images(cfg.dataset_dir, sid)
        dets = gt_detections(ids, gt, image_id=sid, min_visible_fraction=d["min_visible_fraction"], perturb=perturb)
        stage.outputs.append(fileio.write_detections(cfg.dataset_dir, sid, dets))


def stage_estimate(cfg: RunConfig, stage: _Stage) -> None:
    mesh = cfg.mesh()
    cb = fileio.load_codebook(cfg.codebook_path)
    stage.inputs.extend([cfg.data["mesh"], cfg.codebook_path])
    mode = cfg.translation_mode(mesh)
    crop_spec = cfg.crop_spec()
    spec = cfg.embedder_spec()
    for sid in _scene_ids(cfg, stage):
        k, _ = fileio.load_camera(cfg.dataset_dir, sid)
        depth, _, gray = fileio.load_scene_images(cfg.dataset_dir, sid)
        dets = fileio.load_detections(cfg.dataset_dir, sid, depth.shape)
        stage.inputs.append(fileio.scene_dir(cfg.dataset_dir, sid) / "detections.txt")
        ests = pipeline.estimate_poses(gray, depth, dets, cb, k, crop_spec, mode, embedder=spec)
        out = fileio.scene_dir(cfg.dataset_dir, sid) / "estimates.txt"
        fileio.write_estimates(out, ests)
        stage.outputs.append(out)


def stage_refine(cfg: RunConfig, stage: _Stage) -> None:
    mesh = cfg.mesh()
    stage.inputs.append(cfg.data["mesh"])
    icp_cfg = cfg.icp_cfg()
    max_obs = cfg.data["icp"]["max_obs_points"]
    for sid in _scene_ids(cfg, stage):
        k, _ = fileio.load_camera(cfg.dataset_dir, sid)
        depth, _, _ = fileio.load_scene_images(cfg.dataset_dir, sid)
        dets = fileio.load_detections(cfg.dataset_dir, sid, depth.shape)
        est_path = fileio.scene_dir(cfg.dataset_dir, sid) / "estimates.txt"
        stage.inputs.append(est_path)
        refined = []
        for est in fileio.load_estimates(est_path, sid):
            det = dets[est.detection_index]
            cloud = select_refine.detection_cloud(depth, det.mask, k, max_points=max_obs)
            if cloud.shape[0] == 0:
                refined.append(est)
                continue
            result = select_refine.icp_refine(cloud, mesh, est.pose, icp_cfg)
            refined.append(
                pipeline.PoseEstimate(
                    est.image_id, est.detection_index, result.pose, est.cosine,
                    est.detector_score, est.mode, refined=True,
                )
            )
        out = fileio.scene_dir(cfg.dataset_dir, sid) / "estimates_refined.txt"
        fileio.write_estimates(out, refined)
        stage.outputs.append(out)


def stage_select(cfg: RunConfig, stage: _Stage, icp: bool) -> None:
    mesh = cfg.mesh()
    stage.inputs.append(cfg.data["mesh"])
    sel_cfg = cfg.selection_cfg()
    k_top = int(cfg.data["k"])
    for sid in _scene_ids(cfg, stage):
        k, _ = fileio.load_camera(cfg.dataset_dir, sid)
        depth, _, _ = fileio.load_scene_images(cfg.dataset_dir, sid)
        dets = fileio.load_detections(cfg.dataset_dir, sid, depth.shape)
        est_path = fileio.scene_dir(cfg.dataset_dir, sid) / _estimates_name(icp)
        stage.inputs.append(est_path)
        rcfg = cfg.render_cfg(k)
        scored = []
        for est in fileio.load_estimates(est_path, sid):
            mask = dets[est.detection_index].mask
            score = select_refine.depth_error(depth, est.pose, mesh, mask, rcfg, sel_cfg)
            scored.append((est, score))
        topk = {}
        for method in select_refine.SORT_METHODS:
            picked = select_refine.select_top_k(scored, method, k_top, sel_cfg)
            topk[method] = [est.detection_index for est, _ in picked]
        out = fileio.scene_dir(cfg.dataset_dir, sid) / _selection_name(icp)
        fileio.write_selection(out, scored, topk)
        stage.outputs.append(out)


def stage_eval(cfg: RunConfig, stage: _Stage, icp: bool, sort: str | None) -> None:
    mesh = cfg.mesh()
    sym = cfg.symmetries()
    stage.inputs.append(cfg.data["mesh"])
    if cfg.data["symmetries"]:
        stage.inputs.append(cfg.data["symmetries"])
    eval_cfg = cfg.eval_cfg()
    methods = [sort] if sort else list(select_refine.SORT_METHODS)

    manifest = fileio.Manifest(cfg.out_dir / "manifest.json")
    errors_by_method = {m: [] for m in methods}
    width = None
    for sid in _scene_ids(cfg, stage):
        k, _ = fileio.load_camera(cfg.dataset_dir, sid)
        width = k.width
        depth, _, _ = fileio.load_scene_images(cfg.dataset_dir, sid)
        gt = fileio.load_gt_poses(cfg.dataset_dir, sid)
        sdir = fileio.scene_dir(cfg.dataset_dir, sid)
        est_path = sdir / _estimates_name(icp)
        sel_path = sdir / _selection_name(icp)
        manifest.verify_inputs(
            [est_path, sel_path, sdir / "depth.pgm", sdir / "gt_poses.txt"], cfg.out_dir
        )
        stage.inputs.extend([est_path, sel_path])
        estimates = {e.detection_index: e for e in fileio.load_estimates(est_path, sid)}
        _, topk = fileio.load_selection(sel_path)
        rcfg = cfg.render_cfg(k)
        for method in methods:
            selected = [estimates[i] for i in topk[method]]
            pairs = bopeval.match_estimates(
                selected, gt.instances, sym, mesh.vertices, eval_cfg.visib_threshold
            )
            for est, inst in pairs:
                if inst is None:
                    errors_by_method[method].append(bopeval.FAILURE)
                else:
                    errors_by_method[method].append(
                        bopeval.pose_errors(est.pose, inst.pose_cam, mesh, sym, depth, rcfg, eval_cfg)
                    )

    per_method = {
        m: bopeval.average_recall(errs, eval_cfg, mesh.diameter, width or 640)
        for m, errs in errors_by_method.items()
    }
    protocol = {
        "matching": "greedy in selection order, min symmetry-aware MSSD, one-to-one",
        "k": int(cfg.data["k"]),
        "icp": icp,
        "translation_mode": cfg.data["translation"]["mode"],
        "translation_note": "rgb_scale depth is a bbox-diagonal scale-ratio heuristic",
    }
    out = cfg.out_dir / _eval_name(icp)
    fileio.write_eval_json(out, per_method, protocol)
    stage.outputs.append(out)


def stage_report(cfg: RunConfig, stage: _Stage, eval_paths, labels) -> None:
    if not eval_paths:
        eval_paths = [cfg.out_dir / "eval.json"]
    labeled = []
    for i, p in enumerate(eval_paths):
        per_method, protocol = fileio.load_eval_json(p)
        stage.inputs.append(p)
        label = labels[i] if labels and i < len(labels) else Path(p).stem
        labeled.append((label, per_method))
    _, protocol = fileio.load_eval_json(eval_paths[0])
    stage.outputs.extend(fileio.emit_report(cfg.out_dir, labeled, protocol))


def _scene_ids(cfg: RunConfig, stage: _Stage) -> list:
    ids = fileio.list_scene_ids(cfg.dataset_dir)
    if not ids:
        raise FileNotFoundError(f"missing dataset: no scenes under {cfg.dataset_dir}")
    for sid in ids:
        d = fileio.scene_dir(cfg.dataset_dir, sid)
        stage.inputs.extend([d / "camera.txt", d / "gt_poses.txt"])
    return ids


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binpick", description="synthetic bin-picking pose estimation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (see DEFAULT_CONFIG)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help=f"run directory (default ${ENV_OUT} or ./binpick_out)")
        p.add_argument("--k", type=int, help="top-k for selection and eval")
        p.add_argument("--mesh", help="object mesh file (ASCII v/f, mm)")

    p = sub.add_parser("genscenes", help="generate synthetic scenes")
    common(p)
    p.add_argument("--scenes", type=int, help="number of scenes")
    p.add_argument("--instances", type=int, help="instances per scene")

    p = sub.add_parser("codebook", help="build the rotation codebook")
    common(p)
    p.add_argument("--codebook-size", type=int, help="number of rotations")

    p = sub.add_parser("detect-gt", help="derive ground-truth detections")
    common(p)

    p = sub.add_parser("estimate", help="estimate poses from detections")
    common(p)
    p.add_argument("--mode", choices=sorted(MODE_FLAG_TO_MODE), help="translation mode")
    p.add_argument("--mask-only", action="store_true", help="zero crop pixels outside the mask")

    p = sub.add_parser("refine", help="ICP-refine the estimates")
    common(p)

    p = sub.add_parser("select", help="score estimates and pick top-k per method")
    common(p)
    p.add_argument("--icp", action="store_true", help="use the refined estimates")

    p = sub.add_parser("eval", help="compute average recall per sort method")
    common(p)
    p.add_argument("--icp", action="store_true", help="use the refined estimates")
    p.add_argument("--sort", choices=sorted(SORT_FLAG_TO_METHOD), help="restrict to one method")
    p.add_argument("--symmetries", help="object symmetry file")

    p = sub.add_parser("report", help="emit tables, CSV, and plots")
    common(p)
    p.add_argument("--eval", dest="eval_paths", action="append", help="eval json (repeatable)")
    p.add_argument("--label", dest="labels", action="append", help="label per --eval input")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args)
        stage = _Stage(cfg, args.command)
        if args.command == "genscenes":
            stage.run(lambda s: stage_genscenes(cfg, s))
        elif args.command == "codebook":
            stage.run(lambda s: stage_codebook(cfg, s))
        elif args.command == "detect-gt":
            stage.run(lambda s: stage_detect_gt(cfg, s))
        elif args.command == "estimate":
            stage.run(lambda s: stage_estimate(cfg, s))
        elif args.command == "refine":
            stage.run(lambda s: stage_refine(cfg, s))
        elif args.command == "select":
            stage.run(lambda s: stage_select(cfg, s, args.icp))
        elif args.command == "eval":
            method = SORT_FLAG_TO_METHOD[args.sort] if args.sort else None
            stage.run(lambda s: stage_eval(cfg, s, args.icp, method))
        elif args.command == "report":
            stage.run(lambda s: stage_report(cfg, s, args.eval_paths or [], args.labels or []))
    except (ValueError, FileNotFoundError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
