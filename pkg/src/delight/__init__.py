"""Recover per-image diffuse albedo and shading from outdoor aerial image
collections with known geometry.

The pipeline models each linear-radiance image as albedo times a sun+sky
shading term, estimates the sun/sky irradiance ratio from lit-shadow pixel
pairs pooled over the whole collection, refines ray-traced sun visibility
with a dense CRF, softens shadow boundaries with a 1-D regularized solve,
and divides the shading out of the image.
"""

from delight.scene_io import (
    CameraPose,
    CaptureMeta,
    LinearImage,
    TriangleMesh,
    load_linear_image,
    load_project,
    write_linear_image,
)
from delight.solar import SunDirection, sun_below_horizon, sun_direction
from delight.bvh import Bvh, build_bvh
from delight.gbuffer import GBuffer, rasterize_gbuffer, trace_sun_visibility
from delight.masks import SoftVisibility, VisibilityMask
from delight.crf import CrfParams, meanfield_step, refine_visibility
from delight.light import (
    IlluminationRatio,
    LitShadowPair,
    estimate_ratio,
    extract_boundary_pairs,
    filter_pairs,
    fit_gmm2,
)
from delight.penumbra import (
    ShadowProfile,
    composite_soft_mask,
    extract_profiles,
    solve_profile,
)
from delight.decompose import (
    AlbedoResult,
    assemble_shading,
    decompose_albedo,
    evaluate,
)
from delight.synth import render_synthetic_project
from delight.pipeline import generate_test_suite, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AlbedoResult",
    "Bvh",
    "CameraPose",
    "CaptureMeta",
    "CrfParams",
    "GBuffer",
    "IlluminationRatio",
    "LinearImage",
    "LitShadowPair",
    "ShadowProfile",
    "SoftVisibility",
    "SunDirection",
    "TriangleMesh",
    "VisibilityMask",
    "assemble_shading",
    "build_bvh",
    "composite_soft_mask",
    "decompose_albedo",
    "estimate_ratio",
    "evaluate",
    "extract_boundary_pairs",
    "extract_profiles",
    "filter_pairs",
    "fit_gmm2",
    "generate_test_suite",
    "load_linear_image",
    "load_project",
    "meanfield_step",
    "rasterize_gbuffer",
    "refine_visibility",
    "render_synthetic_project",
    "run_pipeline",
    "solve_profile",
    "sun_below_horizon",
    "sun_direction",
    "trace_sun_visibility",
    "write_linear_image",
]
