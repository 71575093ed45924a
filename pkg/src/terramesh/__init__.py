"""Recursive probabilistic terrain mapping.

Fuses depth images and per-pixel terrain-class scores into a robot-centric
triangular mesh whose vertices carry height distributions and whose faces
carry terrain-class evidence and friction-coefficient mixtures.
"""

from .elevation import SensorNoiseModel, height_variance, kalman_update, update_elevation
from .errors import TerrameshError
from .geometry import (
    CameraIntrinsics,
    Pose,
    SemanticPoint,
    barycentric,
    in_simplex,
    project_frame,
    transform_to_map,
)
from .mesh import Face, Mesh, MeshConfig, Vertex, face_lookup, init_mesh, recenter
from .pipeline import (
    EstimatorKind,
    FrameBundle,
    Mapper,
    PipelineConfig,
    estimate_properties,
    process_frame,
)
from .properties import (
    ForceLog,
    PropertyMixture,
    PropertyModel,
    fit_and_select,
    friction_from_force,
    load_default_models,
    load_models,
    mixture_stats,
    property_mixture,
    save_models,
)
from .semantics import ClassCatalog, class_predictive, dirichlet_pdf, dirichlet_update
from .sim import WorldSpec, render_frames, scenario_library

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ClassCatalog",
    "EstimatorKind",
    "Face",
    "ForceLog",
    "FrameBundle",
    "Mapper",
    "Mesh",
    "MeshConfig",
    "PipelineConfig",
    "Pose",
    "PropertyMixture",
    "PropertyModel",
    "SemanticPoint",
    "SensorNoiseModel",
    "TerrameshError",
    "Vertex",
    "WorldSpec",
    "barycentric",
    "class_predictive",
    "dirichlet_pdf",
    "dirichlet_update",
    "estimate_properties",
    "face_lookup",
    "fit_and_select",
    "friction_from_force",
    "height_variance",
    "in_simplex",
    "init_mesh",
    "kalman_update",
    "load_default_models",
    "load_models",
    "mixture_stats",
    "process_frame",
    "project_frame",
    "property_mixture",
    "recenter",
    "render_frames",
    "save_models",
    "scenario_library",
    "transform_to_map",
    "update_elevation",
]
