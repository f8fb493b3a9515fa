"""Block trifocal tensors: construction, structural checks and camera synchronization."""
from __future__ import annotations

from .block_tensor import BlockTensor, build_block_tensor, check_block_properties, core_tensor, tucker_factors
from .camera_geometry import Camera, compose_camera
from .evaluation import align_projective, evaluate_cameras, location_errors, rotation_errors, round_to_calibrated
from .scenegen import CorruptionConfig, SceneConfig, corrupt_blocks, generate_line_experiment, generate_scene
from .synchronization import SyncConfig, extract_cameras, synchronize
from .tensor_core import SvdConfig, flatten, hooi, hosvd, hosvd_ht

__version__ = "0.1.0"

__all__ = [
    "BlockTensor", "Camera", "CorruptionConfig", "SceneConfig", "SvdConfig", "SyncConfig",
    "align_projective", "build_block_tensor", "check_block_properties", "compose_camera",
    "core_tensor", "corrupt_blocks", "evaluate_cameras", "extract_cameras", "flatten",
    "generate_line_experiment", "generate_scene", "hooi", "hosvd", "hosvd_ht",
    "location_errors", "rotation_errors", "round_to_calibrated", "synchronize", "tucker_factors",
]
