"""Synthetic rigid-scene generator with exact dense ground truth."""

from .geometry import (
    MOTION_TOL,
    CameraModel,
    RigidTransform,
    ego_flow,
    project_flow,
)
from .generate import (
    body_bound_radius,
    generate_from_mix,
    generate_scene,
    render_scene,
    sample_mix,
)
from .io import (
    read_flo,
    read_manifest,
    read_planes_raw,
    read_sample,
    sample_dirs,
    write_dataset,
    write_flo,
    write_planes_raw,
    write_sample,
)
from .texture import TextureParams, texture_rgb
from .types import (
    DEGENERACY_TAGS,
    BackgroundPlane,
    DatasetMix,
    Disc,
    GeneratorConfig,
    Part,
    Rect,
    RigidBody,
    SceneSample,
    Shape,
    Triangle,
)

__all__ = [
    "MOTION_TOL",
    "DEGENERACY_TAGS",
    "BackgroundPlane",
    "CameraModel",
    "DatasetMix",
    "Disc",
    "GeneratorConfig",
    "Part",
    "Rect",
    "RigidBody",
    "RigidTransform",
    "SceneSample",
    "Shape",
    "Triangle",
    "TextureParams",
    "body_bound_radius",
    "ego_flow",
    "generate_from_mix",
    "generate_scene",
    "project_flow",
    "read_flo",
    "read_manifest",
    "read_planes_raw",
    "read_sample",
    "render_scene",
    "sample_dirs",
    "sample_mix",
    "texture_rgb",
    "write_dataset",
    "write_flo",
    "write_planes_raw",
    "write_sample",
]
