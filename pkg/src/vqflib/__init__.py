"""Quaternion-based inertial orientation estimation.

Real-time filtering with gyroscope bias estimation and magnetic disturbance
rejection, an acausal offline variant, a synthetic data generator and error
metrics.
"""

from .core import BasicVQF
from .metrics import ErrorReport, error_report, heading_inclination_split, quat_error_angle
from .offline import OfflineResult, offline_vqf
from .synth import TrajectorySpec, generate, static_pose_oracle
from .vqf import VQF, EstimateRecord, VqfParams

__all__ = [
    "BasicVQF",
    "VQF",
    "VqfParams",
    "EstimateRecord",
    "offline_vqf",
    "OfflineResult",
    "TrajectorySpec",
    "generate",
    "static_pose_oracle",
    "quat_error_angle",
    "heading_inclination_split",
    "error_report",
    "ErrorReport",
]

__version__ = "0.1.0"
