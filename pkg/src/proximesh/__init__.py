"""Simulation framework for active close-range body mesh estimation.

Provides a skinned capsule humanoid, a pinhole camera with z-buffer
visibility, a sample-based pose belief with a simulated probabilistic
estimator, simulated touch and 2D LiDAR sensors with robot kinematics,
an active measurement planner, measurement-driven pose refinement, and
a synthetic-scenario benchmark harness.
"""

__version__ = "0.1.0"

from .body import (
    BodyTemplate,
    GlobalPose,
    PoseParams,
    ShapeParams,
    Skeleton,
    default_body,
    regress_joints,
    skin_mesh,
    world_mesh,
)

__all__ = [
    "BodyTemplate",
    "GlobalPose",
    "PoseParams",
    "ShapeParams",
    "Skeleton",
    "default_body",
    "regress_joints",
    "skin_mesh",
    "world_mesh",
]
