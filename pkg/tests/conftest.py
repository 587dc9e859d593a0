"""Session fixtures: synthetic projects and cached pipeline runs."""

from __future__ import annotations

from types import SimpleNamespace

import pytest

from delight.config import config_from_dict
from delight.pipeline import generate_test_suite, run_pipeline

SUITE_SEED = 11

# Desk-scale kernel widths for the 512px synthetic scenes; the library
# defaults target full-resolution aerial imagery.
TEST_CRF = {"sigma_xy": 4.0, "sigma_s": 1.5, "iterations": 5}
# The boxtown sun disk spans ~2.5 px of penumbra, so pairs step 6 px out.
BOXTOWN_PAIRS = {"offset_px": 6}


def boxtown_config(project, output, workers=2):
    return {
        "run": {"project": str(project), "output": str(output), "workers": workers},
        "crf": dict(TEST_CRF),
        "pairs": dict(BOXTOWN_PAIRS),
    }


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    generate_test_suite(SUITE_SEED, root)
    return root


@pytest.fixture(scope="session")
def boxtown_run(suite_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("out_boxtown")
    cfg = config_from_dict(boxtown_config(suite_dir / "boxtown", out))
    manifest = run_pipeline(cfg)
    return SimpleNamespace(cfg=cfg, manifest=manifest, project=suite_dir / "boxtown",
                           out=out / "outputs", out_root=out)


@pytest.fixture(scope="session")
def box_run(suite_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("out_box")
    cfg = config_from_dict({
        "run": {"project": str(suite_dir / "box"), "output": str(out), "workers": 2},
        "crf": dict(TEST_CRF),
    })
    manifest = run_pipeline(cfg)
    return SimpleNamespace(cfg=cfg, manifest=manifest, project=suite_dir / "box",
                           out=out / "outputs", out_root=out)
