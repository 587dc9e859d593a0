import json
import shutil
from datetime import datetime, timezone

import numpy as np
import pytest
from helpers import tree_bytes

from conftest import TEST_CRF
from delight import synth
from delight.cli import main as cli_main
from delight.config import config_from_dict
from delight.pipeline import (
    EXIT_RATIO_REJECTED,
    PipelineError,
    run_pipeline,
)
from delight.scene_io import CaptureMeta, read_pfm
from delight.solar import sun_direction


@pytest.fixture(scope="module")
def mini_project(tmp_path_factory):
    """Small hard-shadow project for CLI-level tests."""
    root = tmp_path_factory.mktemp("mini") / "proj"
    meta = CaptureMeta(35.0, -106.0, datetime(2022, 6, 15, 17, 30, 0, tzinfo=timezone.utc))
    sun = sun_direction(meta)
    scene = synth.make_box_scene(np.random.default_rng(5))
    cams = synth.ring_cameras(2, 6.0, 25.0, 160, 160, 22.0)
    synth.render_synthetic_project(root, scene, sun, [4.0, 4.0, 4.0], [1.0, 1.0, 1.0],
                                   cams, 160, 160, meta)
    return root


def test_plane_project_rejected_with_exit_4(suite_dir, tmp_path, capsys):
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(
        f'[run]\nproject = "{suite_dir / "plane"}"\noutput = "{tmp_path / "out"}"\n'
        f'[crf]\nsigma_xy = 4.0\nsigma_s = 1.5\n')
    code = cli_main(["run", "--config", str(cfg_path)])
    assert code == EXIT_RATIO_REJECTED
    light = json.loads((tmp_path / "out" / "outputs" / "light.json").read_text())
    assert light["accepted"] is False
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["accepted"] is False
    assert "no illumination ratio is fabricated" in capsys.readouterr().err


def test_sun_below_horizon_aborts_at_sunpos(mini_project, tmp_path):
    proj = tmp_path / "night"
    shutil.copytree(mini_project, proj)
    meta = json.loads((proj / "meta.json").read_text())
    meta["timestamp_utc"] = "2022-06-15T07:00:00Z"  # local midnight at lon -106
    (proj / "meta.json").write_text(json.dumps(meta))
    cfg = config_from_dict({"run": {"project": str(proj), "output": str(tmp_path / "out")}})
    with pytest.raises(PipelineError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "sunpos"
    assert "below the horizon" in str(err.value)
    assert err.value.exit_code == 3


def test_config_error_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "bad.toml"
    cfg_path.write_text('[run]\nproject = "p"\noutput = "o"\n[crf]\nsigma_zz = 1.0\n')
    assert cli_main(["run", "--config", str(cfg_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_project_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(f'[run]\nproject = "{tmp_path / "absent"}"\noutput = "{tmp_path / "o"}"\n')
    assert cli_main(["run", "--config", str(cfg_path)]) == 3


def test_rerun_hits_cache_and_outputs_unchanged(box_run):
    before = tree_bytes(box_run.out)
    manifest = run_pipeline(box_run.cfg)
    assert all(s["cache_hit"] for s in manifest["stages"] if s["name"] != "eval")
    assert tree_bytes(box_run.out) == before


def test_config_change_invalidates_downstream(box_run, suite_dir, tmp_path):
    out = tmp_path / "out"
    shutil.copytree(box_run.out_root, out)
    doc = {"run": {"project": str(suite_dir / "box"), "output": str(out), "workers": 2},
           "crf": dict(TEST_CRF), "profiles": {"stride": 3}}
    manifest = run_pipeline(config_from_dict(doc))
    hits = {s["name"]: s["cache_hit"] for s in manifest["stages"]}
    assert hits["gbuffer"] and hits["refine"] and hits["estimate-light"]
    assert not hits["soften"] and not hits["decompose"]


def test_manifest_replay_reproduces_outputs(box_run, tmp_path):
    manifest = json.loads((box_run.out_root / "manifest.json").read_text())
    doc = manifest["config"]
    doc["run"] = {"project": doc["run"]["project"], "output": str(tmp_path / "replay"),
                  "workers": 1, "stages": doc["run"]["stages"]}
    cfg = config_from_dict(doc)
    run_pipeline(cfg)
    ours = tree_bytes(tmp_path / "replay" / "outputs")
    theirs = tree_bytes(box_run.out)
    assert ours == theirs


def test_manifest_records_ratio_and_counts(box_run):
    m = box_run.manifest
    assert m["accepted"] is True
    assert len(m["ratio"]) == 3
    assert m["n_pairs_total"] > 0
    assert set(m["pair_counts"]) == {f"view_{i:03d}" for i in range(3)}
    assert m["config_hash"] == box_run.cfg.config_hash()


def test_stagewise_cli_chain(suite_dir, tmp_path, capsys):
    project = suite_dir / "box"
    g, m, s, d = (tmp_path / n for n in ("gbuf", "masks", "soft", "dec"))
    light = tmp_path / "light.json"
    assert cli_main(["gbuffer", "--project", str(project), "--out", str(g)]) == 0
    assert (g / "view_000_depth.pfm").is_file()
    assert (g / "view_002_alpha.pfm").is_file()

    assert cli_main(["refine", "--project", str(project), "--gbuffer", str(g),
                     "--out", str(m), "--crf-sigma-xy", "4.0", "--crf-sigma-s", "1.5"]) == 0
    assert (m / "view_000.pfm").is_file()

    assert cli_main(["estimate-light", "--project", str(project), "--masks", str(m),
                     "--gbuffer", str(g), "--out", str(light)]) == 0
    doc = json.loads(light.read_text())
    assert doc["accepted"] is True
    assert np.allclose(doc["ratio"], 4.0, rtol=0.05)

    assert cli_main(["soften", "--project", str(project), "--masks", str(m),
                     "--gbuffer", str(g), "--light", str(light), "--out", str(s)]) == 0
    soft = read_pfm(s / "view_000.pfm")
    assert soft.min() >= 0.0 and soft.max() <= 1.0

    assert cli_main(["decompose", "--project", str(project), "--gbuffer", str(g),
                     "--masks", str(s), "--light", str(light), "--out", str(d)]) == 0
    albedo = read_pfm(d / "albedo" / "view_000.pfm")
    assert np.isfinite(albedo).all()
    assert (d / "flags" / "view_000.png").is_file()

    report = tmp_path / "report.json"
    assert cli_main(["eval", "--pred", str(d / "albedo"),
                     "--truth", str(project / "gt"),
                     "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert len(rep["images"]) == 3
    capsys.readouterr()


def test_sunpos_cli(capsys):
    assert cli_main(["sunpos", "--lat", "40.0", "--lon", "-83.0",
                     "--time", "2021-06-21T17:00:00Z"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["azimuth_deg"] - 154.1166) < 0.1
    assert abs(doc["elevation_deg"] - 71.9573) < 0.1
    assert abs(np.linalg.norm(doc["vector"]) - 1.0) < 1e-9


def test_synth_cli_plane(tmp_path, capsys):
    assert cli_main(["synth", "--scene", "plane", "--seed", "4", "--size", "64",
                     "--out", str(tmp_path / "p")]) == 0
    from delight.scene_io import load_project

    views, mesh, meta = load_project(tmp_path / "p")
    assert len(views) == 2 and views[0][0].width == 64
    capsys.readouterr()


def test_suite_regeneration_is_byte_identical(suite_dir, tmp_path):
    from delight.pipeline import generate_test_suite

    from conftest import SUITE_SEED

    generate_test_suite(SUITE_SEED, tmp_path / "again")
    assert tree_bytes(tmp_path / "again") == tree_bytes(suite_dir)


def test_acyclic_stage_order(box_run):
    order = [s["name"] for s in box_run.manifest["stages"]]
    expected = ["sunpos", "gbuffer", "refine", "estimate-light", "soften",
                "decompose", "eval"]
    assert order == expected
