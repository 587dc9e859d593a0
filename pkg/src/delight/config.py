"""Pipeline configuration: TOML document with strict schema validation.

Unknown sections or keys are errors (silent typos in threshold names are
worse than a failed run), and every numeric knob is range-checked against
its documented domain.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from delight.crf import CrfParams
from delight.light import GmmParams, PairParams
from delight.penumbra import ProfileParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "PipelineConfig", "STAGES", "load_config"]

STAGES = ("sunpos", "gbuffer", "refine", "estimate-light", "soften", "decompose", "eval")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DecomposeParams:
    shading_floor: float = 1e-4
    overexposure_percentile: float = 99.9


@dataclass
class PipelineConfig:
    project_dir: str
    output_dir: str
    workers: int = 1
    stages: tuple[str, ...] = STAGES
    crf: CrfParams = field(default_factory=CrfParams)
    pairs: PairParams = field(default_factory=PairParams)
    gmm: GmmParams = field(default_factory=GmmParams)
    profiles: ProfileParams = field(default_factory=ProfileParams)
    decompose: DecomposeParams = field(default_factory=DecomposeParams)

    def to_dict(self) -> dict:
        return {
            "run": {"project": self.project_dir, "output": self.output_dir,
                    "workers": self.workers, "stages": list(self.stages)},
            "crf": dataclasses.asdict(self.crf),
            "pairs": dataclasses.asdict(self.pairs),
            "gmm": dataclasses.asdict(self.gmm),
            "profiles": dataclasses.asdict(self.profiles),
            "decompose": dataclasses.asdict(self.decompose),
        }

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc["run"].pop("output", None)  # where outputs go does not change them
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def section_hash(self, *sections: str) -> str:
        doc = self.to_dict()
        picked = {s: doc[s] for s in sections}
        return hashlib.sha256(json.dumps(picked, sort_keys=True).encode()).hexdigest()


# (lo, hi, lo_inclusive, hi_inclusive) per knob
_RANGES = {
    ("run", "workers"): (1, 256, True, True),
    ("crf", "sigma_xy"): (0.5, 1000.0, True, True),
    ("crf", "sigma_rgb"): (0.1, 10000.0, True, True),
    ("crf", "sigma_s"): (0.5, 1000.0, True, True),
    ("crf", "weight_appearance"): (0.0, 1000.0, True, True),
    ("crf", "weight_smoothness"): (0.0, 1000.0, True, True),
    ("crf", "iterations"): (0, 100, True, True),
    ("crf", "keep_prob"): (0.5, 1.0, False, False),
    ("crf", "truncate"): (0.5, 5.0, True, True),
    ("crf", "white_percentile"): (50.0, 100.0, False, True),
    ("pairs", "offset_px"): (1, 64, True, True),
    ("pairs", "stride"): (1, 64, True, True),
    ("pairs", "normal_max_deg"): (0.0, 90.0, False, True),
    ("pairs", "depth_tau"): (0.0, 1e6, False, True),
    ("pairs", "exposure_lo"): (0.0, 1.0, True, False),
    ("pairs", "exposure_hi"): (0.0, 1.0, False, True),
    ("pairs", "white_percentile"): (50.0, 100.0, False, True),
    ("pairs", "k_ratio_lo"): (0.0, 1e6, False, False),
    ("pairs", "k_ratio_hi"): (0.0, 1e6, False, False),
    ("gmm", "accept_weight"): (0.5, 1.0, True, True),
    ("gmm", "accept_var_factor"): (0.0, 1.0, False, True),
    ("gmm", "max_iter"): (1, 100000, True, True),
    ("gmm", "tol"): (0.0, 1.0, False, True),
    ("gmm", "min_samples"): (2, 100000, True, True),
    ("profiles", "half_len"): (2, 256, True, True),
    ("profiles", "stride"): (1, 64, True, True),
    ("profiles", "lam"): (0.0, 1e9, True, True),
    ("profiles", "end_weight"): (0.0, 1e12, False, True),
    ("profiles", "edge_weight"): (0.0, 1e6, False, True),
    ("profiles", "edge_halfwidth"): (0.0, 256.0, False, True),
    ("profiles", "splat_sigma"): (0.0, 64.0, False, True),
    ("profiles", "exposure_lo"): (0.0, 1.0, True, False),
    ("profiles", "white_percentile"): (50.0, 100.0, False, True),
    ("decompose", "shading_floor"): (0.0, 1.0, False, True),
    ("decompose", "overexposure_percentile"): (50.0, 100.0, False, True),
}

_SECTION_TYPES = {
    "crf": CrfParams,
    "pairs": PairParams,
    "gmm": GmmParams,
    "profiles": ProfileParams,
    "decompose": DecomposeParams,
}


def _check_range(section: str, key: str, value) -> None:
    rng = _RANGES.get((section, key))
    if rng is None:
        return
    lo, hi, lo_inc, hi_inc = rng
    ok_lo = value >= lo if lo_inc else value > lo
    ok_hi = value <= hi if hi_inc else value < hi
    if not (ok_lo and ok_hi):
        lo_b = "[" if lo_inc else "("
        hi_b = "]" if hi_inc else ")"
        raise ConfigError(f"[{section}] {key} = {value} outside {lo_b}{lo}, {hi}{hi_b}")


def _build_section(section: str, doc: dict):
    cls = _SECTION_TYPES[section]
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        default = getattr(cls(), key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key} must be a boolean")
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"[{section}] {key} must be an integer")
        if isinstance(default, float) and not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key} must be a number")
        _check_range(section, key, value)
        kwargs[key] = type(default)(value) if not isinstance(default, bool) else value
    return cls(**kwargs)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> PipelineConfig:
    unknown = set(doc) - ({"run"} | set(_SECTION_TYPES))
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    run = dict(doc.get("run", {}))
    unknown = set(run) - {"project", "output", "workers", "stages"}
    if unknown:
        raise ConfigError(f"unknown keys in [run]: {sorted(unknown)}")
    if "project" not in run or "output" not in run:
        raise ConfigError("[run] must set 'project' and 'output'")
    workers = run.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int):
        raise ConfigError("[run] workers must be an integer")
    _check_range("run", "workers", workers)
    stages = tuple(run.get("stages", STAGES))
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; valid: {list(STAGES)}")

    def resolve(p: str) -> str:
        path = Path(p)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return str(path)

    kwargs = {sec: _build_section(sec, doc[sec]) for sec in _SECTION_TYPES if sec in doc}
    cfg = PipelineConfig(project_dir=resolve(str(run["project"])),
                         output_dir=resolve(str(run["output"])),
                         workers=workers, stages=stages, **kwargs)
    if cfg.pairs.exposure_lo >= cfg.pairs.exposure_hi:
        raise ConfigError("[pairs] exposure_lo must be below exposure_hi")
    if cfg.pairs.k_ratio_lo >= cfg.pairs.k_ratio_hi:
        raise ConfigError("[pairs] k_ratio_lo must be below k_ratio_hi")
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(doc, base_dir=path.parent)
