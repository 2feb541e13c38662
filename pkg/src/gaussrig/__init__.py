"""Gaussian-bone rigs for mesh sequences.

A rig is a small set of anisotropic Gaussian bones attached to mesh
vertices. Skinning weights are read off the Gaussians, gated by geodesic
distance, and the rigged mesh deforms by hierarchical linear blend
skinning. Everything is differentiable, so rigs and motions are fit to
raw vertex trajectories by gradient descent.
"""

from __future__ import annotations

from .estimator import GaussianBoneRig
from .exceptions import (
    FileFormatError,
    FingerprintMismatchError,
    FitDivergedError,
    GaussRigError,
    InvalidInputError,
    InvalidParameterError,
    TopologyMismatchError,
)
from .fitting import (
    FitConfig,
    FitReport,
    MotionParams,
    RigParams,
    deform_frames,
    fit_motion_only,
    fit_rig_and_motion,
    forward,
    recon_loss,
    rig_weights,
    rig_weights_for_mesh,
    transfer_weights,
)
from .geodesic import (
    CoherenceMask,
    GeodesicField,
    coherence_mask,
    default_tau,
    geodesic_distances,
)
from .geometry import MeshSequence, RigidTransform, TriMesh, edge_graph
from .metrics import EvalReport, chamfer_l1, chamfer_l2, frame_metrics, run_protocol, vertex_mse
from .sampling import AnchorSet, ResampleMap, farthest_point_sample, normalize_resolution
from .skinning import (
    BoneTransforms,
    GaussianBone,
    SkinningWeights,
    lbs_deform,
    raw_weights,
    refine_weights,
    sparsify_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "BoneTransforms",
    "CoherenceMask",
    "EvalReport",
    "FileFormatError",
    "FingerprintMismatchError",
    "FitConfig",
    "FitDivergedError",
    "FitReport",
    "GaussRigError",
    "GaussianBone",
    "GaussianBoneRig",
    "GeodesicField",
    "InvalidInputError",
    "InvalidParameterError",
    "MeshSequence",
    "MotionParams",
    "ResampleMap",
    "RigParams",
    "RigidTransform",
    "SkinningWeights",
    "TopologyMismatchError",
    "TriMesh",
    "chamfer_l1",
    "chamfer_l2",
    "coherence_mask",
    "default_tau",
    "deform_frames",
    "edge_graph",
    "farthest_point_sample",
    "fit_motion_only",
    "fit_rig_and_motion",
    "forward",
    "frame_metrics",
    "geodesic_distances",
    "lbs_deform",
    "normalize_resolution",
    "raw_weights",
    "recon_loss",
    "refine_weights",
    "rig_weights",
    "rig_weights_for_mesh",
    "run_protocol",
    "sparsify_weights",
    "transfer_weights",
    "vertex_mse",
    "__version__",
]
