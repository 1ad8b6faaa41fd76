"""Rotary camera encoding: camera-conditioned phase shifts for rotary attention.

Numerics are pure numpy on a small reverse-mode autodiff core. The package
covers camera geometry (poses, Pluecker ray maps, canonical trajectories,
pose-error metrics), 3D rotary position fields, phase-shifted attention on
the query/key and value/output paths, rectified-flow training utilities, and
a toy clip-to-clip generation model exercising all of it end to end.
"""
from .attention import (
    PhaseNetwork,
    build_camera_tokens,
    build_phase,
    camera_feature_dim,
    featurize_camera_tokens,
    phase_attention_map,
    roce_attention,
)
from .autodiff import Adam, Tensor, numeric_gradient
from .flow import cfm_loss, cfm_target, interpolate, sample, sample_times
from .geometry import (
    CameraPose,
    Intrinsics,
    PlueckerMap,
    TRAJECTORY_KINDS,
    Trajectory,
    compose,
    identity_pose,
    inverse,
    make_trajectory,
    pluecker_map,
    read_trajectory_jsonl,
    relative_pose,
    rot_err,
    time_reverse,
    trans_err,
    write_trajectory_jsonl,
)
from .rope import (
    RotationField,
    apply_rotation,
    frequency_schedule,
    rope_1d,
    rope_3d,
    shared_rope_for_pair,
)
from .scene import ToyItem, make_dataset, random_scene, render_video, toy_intrinsics
from .tensorio import load_checkpoint, read_tensor, save_checkpoint, write_tensor
from .toymodel import ToyConfig, ToyModel, evaluate_pose_proxy, sample_target, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CameraPose",
    "Intrinsics",
    "PhaseNetwork",
    "PlueckerMap",
    "RotationField",
    "TRAJECTORY_KINDS",
    "Tensor",
    "ToyConfig",
    "ToyItem",
    "ToyModel",
    "Trajectory",
    "apply_rotation",
    "build_camera_tokens",
    "build_phase",
    "camera_feature_dim",
    "cfm_loss",
    "cfm_target",
    "compose",
    "evaluate_pose_proxy",
    "featurize_camera_tokens",
    "frequency_schedule",
    "identity_pose",
    "interpolate",
    "inverse",
    "load_checkpoint",
    "make_dataset",
    "make_trajectory",
    "numeric_gradient",
    "phase_attention_map",
    "pluecker_map",
    "random_scene",
    "read_tensor",
    "read_trajectory_jsonl",
    "relative_pose",
    "render_video",
    "roce_attention",
    "rope_1d",
    "rope_3d",
    "rot_err",
    "sample",
    "sample_target",
    "sample_times",
    "save_checkpoint",
    "shared_rope_for_pair",
    "time_reverse",
    "toy_intrinsics",
    "train",
    "trans_err",
    "write_tensor",
    "write_trajectory_jsonl",
]
