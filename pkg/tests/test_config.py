import pytest

from delight.config import ConfigError, config_from_dict, load_config


def minimal(**extra):
    doc = {"run": {"project": "/p", "output": "/o"}}
    doc.update(extra)
    return doc


def test_defaults_fill_in():
    cfg = config_from_dict(minimal())
    assert cfg.workers == 1
    assert cfg.crf.sigma_xy == 40.0
    assert cfg.pairs.offset_px == 3
    assert cfg.gmm.accept_weight == 0.95
    assert cfg.profiles.half_len == 12
    assert len(cfg.stages) == 7


def test_toml_file_load(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(
        '[run]\nproject = "proj"\noutput = "out"\nworkers = 2\n'
        '[crf]\nsigma_xy = 8.0\niterations = 3\n'
        '[pairs]\noffset_px = 6\n')
    cfg = load_config(path)
    assert cfg.workers == 2
    assert cfg.crf.sigma_xy == 8.0
    assert cfg.crf.iterations == 3
    assert cfg.pairs.offset_px == 6
    # relative paths resolve against the config file directory
    assert cfg.project_dir == str(tmp_path / "proj")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="sections"):
        config_from_dict(minimal(bogus={"x": 1}))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict(minimal(crf={"sigma_zz": 1.0}))


def test_unknown_run_key_rejected():
    doc = minimal()
    doc["run"]["projectdir"] = "x"
    with pytest.raises(ConfigError, match=r"\[run\]"):
        config_from_dict(doc)


def test_range_violations_rejected():
    with pytest.raises(ConfigError, match="keep_prob"):
        config_from_dict(minimal(crf={"keep_prob": 0.4}))
    with pytest.raises(ConfigError, match="workers"):
        doc = minimal()
        doc["run"]["workers"] = 0
        config_from_dict(doc)
    with pytest.raises(ConfigError, match="offset_px"):
        config_from_dict(minimal(pairs={"offset_px": 0}))


def test_type_violations_rejected():
    with pytest.raises(ConfigError, match="integer"):
        config_from_dict(minimal(crf={"iterations": 2.5}))


def test_cross_field_constraints():
    with pytest.raises(ConfigError, match="exposure_lo"):
        config_from_dict(minimal(pairs={"exposure_lo": 0.9, "exposure_hi": 0.5}))


def test_unknown_stage_rejected():
    doc = minimal()
    doc["run"]["stages"] = ["sunpos", "mystery"]
    with pytest.raises(ConfigError, match="mystery"):
        config_from_dict(doc)


def test_missing_project_rejected():
    with pytest.raises(ConfigError, match="project"):
        config_from_dict({"run": {"output": "/o"}})


def test_config_hash_independent_of_output_dir():
    a = config_from_dict({"run": {"project": "/p", "output": "/o1"}})
    b = config_from_dict({"run": {"project": "/p", "output": "/o2"}})
    assert a.config_hash() == b.config_hash()
    c = config_from_dict({"run": {"project": "/p", "output": "/o1"},
                          "crf": {"sigma_xy": 5.0}})
    assert c.config_hash() != a.config_hash()
