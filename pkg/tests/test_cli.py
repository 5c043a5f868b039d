from __future__ import annotations

import json
import hashlib
from pathlib import Path

import numpy as np
import pytest

from binpick import fileio
from binpick.cli import main
from binpick.shapes import box_symmetries, make_box


@pytest.fixture()
def workdir(tmp_path):
    fileio.write_mesh(tmp_path / "box.txt", make_box())
    fileio.write_symmetries(tmp_path / "sym.txt", box_symmetries())
    config = {
        "mesh": str(tmp_path / "box.txt"),
        "symmetries": str(tmp_path / "sym.txt"),
        "scenes": 2,
        "scene": {"instance_count": 4},
        "camera": {"fx": 200.0, "fy": 200.0, "cx": 80.0, "cy": 60.0, "width": 160, "height": 120},
        "codebook": {
            "size": 32,
            "seed": 0,
            "z_ref_mm": 300.0,
            "camera": {"fx": 300.0, "fy": 300.0, "cx": 64.0, "cy": 64.0, "width": 128, "height": 128},
        },
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    return tmp_path


def run(workdir, command, *extra):
    return main([command, "--config", str(workdir / "config.json"), "--out", str(workdir / "out"), "--seed", "3", *extra])


class TestStages:
    def test_estimate_before_codebook_fails(self, workdir, capsys):
        assert run(workdir, "genscenes") == 0
        assert run(workdir, "detect-gt") == 0
        assert run(workdir, "estimate") == 1
        assert "missing codebook" in capsys.readouterr().err

    def test_genscenes_idempotent_manifest(self, workdir):
        assert run(workdir, "genscenes") == 0
        manifest1 = json.loads((workdir / "out" / "manifest.json").read_text())
        assert run(workdir, "genscenes") == 0
        manifest2 = json.loads((workdir / "out" / "manifest.json").read_text())
        assert manifest1["stages"]["genscenes"]["outputs"] == manifest2["stages"]["genscenes"]["outputs"]

    def test_full_chain(self, workdir):
        for cmd in ("genscenes", "codebook", "detect-gt", "estimate", "refine", "select", "eval", "report"):
            assert run(workdir, cmd) == 0, cmd
        out = workdir / "out"
        report = (out / "report.txt").read_text()
        for method in ("cosine", "depth_error", "detector_score"):
            assert method in report
        payload = json.loads((out / "eval.json").read_text())
        assert set(payload["methods"]) == {"cosine", "depth_error", "detector_score"}
        for rep in payload["methods"].values():
            assert rep["ar"] is not None
            assert abs(rep["ar"] - (rep["ar_vsd"] + rep["ar_mssd"] + rep["ar_mspd"]) / 3.0) < 1e-12
        assert (out / "ar_by_method.svg").exists()
        assert (out / "timings.txt").exists()

    def test_icp_variant_chain(self, workdir):
        for cmd in ("genscenes", "codebook", "detect-gt", "estimate", "refine"):
            assert run(workdir, cmd) == 0
        assert run(workdir, "select", "--icp") == 0
        assert run(workdir, "eval", "--icp") == 0
        assert (workdir / "out" / "eval_icp.json").exists()
        sel = workdir / "out" / "dataset" / "scene_000000" / "selection_icp.txt"
        assert sel.exists()

    def test_eval_single_sort(self, workdir):
        for cmd in ("genscenes", "codebook", "detect-gt", "estimate", "select"):
            assert run(workdir, cmd) == 0
        assert run(workdir, "eval", "--sort", "depth") == 0
        payload = json.loads((workdir / "out" / "eval.json").read_text())
        assert list(payload["methods"]) == ["depth_error"]

    def test_report_multi_eval_labels(self, workdir):
        for cmd in ("genscenes", "codebook", "detect-gt", "estimate", "select", "eval"):
            assert run(workdir, cmd) == 0
        assert run(
            workdir, "report",
            "--eval", str(workdir / "out" / "eval.json"), "--label", "0",
            "--eval", str(workdir / "out" / "eval.json"), "--label", "1",
        ) == 0
        assert (workdir / "out" / "ar_vs_noise.svg").exists()

    def test_missing_dataset_fails(self, workdir, capsys):
        assert run(workdir, "detect-gt") == 1
        assert "missing dataset" in capsys.readouterr().err

    def test_partial_outputs_removed_on_failure(self, workdir, capsys, monkeypatch):
        assert run(workdir, "genscenes") == 0
        assert run(workdir, "detect-gt") == 0
        # corrupt one scene's detections so estimate fails midway
        assert run(workdir, "codebook") == 0
        bad = workdir / "out" / "dataset" / "scene_000001" / "detections.txt"
        bad.write_text("det nonsense\n")
        assert run(workdir, "estimate") == 1
        assert not (workdir / "out" / "dataset" / "scene_000000" / "estimates.txt").exists()


class TestDeterminism:
    def test_two_runs_byte_identical(self, workdir):
        digests = {}
        for sub in ("outA", "outB"):
            for cmd in ("genscenes", "codebook", "detect-gt", "estimate", "select", "eval", "report"):
                assert main([cmd, "--config", str(workdir / "config.json"),
                             "--out", str(workdir / sub), "--seed", "5"]) == 0, cmd
            tree = {}
            root = workdir / sub
            for p in sorted(root.rglob("*")):
                if p.is_file() and p.name != "timings.txt":
                    tree[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
            digests[sub] = tree
        assert digests["outA"] == digests["outB"]
