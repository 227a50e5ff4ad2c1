"""Seeded synthetic scenarios for the benchmark.

A scenario is one ground-truth body drawn from a parameterized pose
prior, together with the ring index of the first camera placement.
Two pose families are supported: "standing" perturbs the upright rest
pose, "sitting" adds roughly ninety degrees of hip and knee flexion so
the thighs point forward and the shins drop back down. Every draw is a
pure function of (seed, index, config).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import (
    GlobalPose,
    JOINT_NAMES,
    NUM_JOINTS,
    NUM_SHAPE_DIRS,
    PoseParams,
    ShapeParams,
)
from .geometry import clamp_axis_angle, rodrigues

STANDING_PELVIS_HEIGHT = 0.95
SITTING_PELVIS_HEIGHT = 0.45

# Axis-angle norms stay this far below the hard limit after jitter.
_NORM_MARGIN = 1e-3

_HIPS = (JOINT_NAMES.index("l_hip"), JOINT_NAMES.index("r_hip"))
_KNEES = (JOINT_NAMES.index("l_knee"), JOINT_NAMES.index("r_knee"))


@dataclass(frozen=True)
class ScenarioConfig:
    """Sampling parameters of the ground-truth prior.

    Attributes:
        standing_fraction: probability of the standing family.
        pose_jitter: per-axis std of the joint perturbations, rad.
        sitting_flexion: mean hip and knee flexion of the sitting
            family, rad.
        sitting_jitter: std of the per-leg flexion draw, rad.
        shape_sigma: std of the shape coefficients.
        yaw_range: global yaw drawn uniformly in [-yaw_range, yaw_range].
        center_jitter: half-range of the uniform x/y pelvis placement, m.
        height_jitter: std of the pelvis-height perturbation, m.
    """

    standing_fraction: float = 0.5
    pose_jitter: float = 0.08
    sitting_flexion: float = np.pi / 2
    sitting_jitter: float = 0.15
    shape_sigma: float = 0.5
    yaw_range: float = np.pi
    center_jitter: float = 0.10
    height_jitter: float = 0.03


@dataclass(frozen=True)
class Scenario:
    """One ground-truth body plus the scenario-assigned first viewpoint.

    Attributes:
        index: scenario number within the run.
        family: "standing" or "sitting".
        theta: (J, 3) ground-truth joint rotations.
        beta: (B,) ground-truth shape coefficients.
        pose: ground-truth global pose.
        initial_viewpoint: ring index of the first camera.
    """

    index: int
    family: str
    theta: np.ndarray
    beta: np.ndarray
    pose: GlobalPose
    initial_viewpoint: int


def make_scenario(seed: int, index: int,
                  config: ScenarioConfig | None = None) -> Scenario:
    """Draws scenario ``index`` of a run keyed by ``seed``.

    The draw order is fixed (family, pose, shape, global, viewpoint),
    so adding configuration knobs never reshuffles existing scenarios.
    """
    config = config or ScenarioConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))

    standing = bool(rng.random() < config.standing_fraction)
    theta = rng.normal(0.0, config.pose_jitter, (NUM_JOINTS, 3))
    if not standing:
        for hip, knee in zip(_HIPS, _KNEES):
            flexion = config.sitting_flexion \
                + rng.normal(0.0, config.sitting_jitter)
            # Thigh swings toward +x (the facing direction), shin back
            # down: opposite rotations about the lateral y axis.
            theta[hip, 1] -= flexion
            theta[knee, 1] += flexion
    limit = np.pi - _NORM_MARGIN
    theta = np.stack([clamp_axis_angle(row, limit) for row in theta])

    beta = np.clip(rng.normal(0.0, config.shape_sigma, NUM_SHAPE_DIRS),
                   -5.0, 5.0)

    yaw = rng.uniform(-config.yaw_range, config.yaw_range)
    height = STANDING_PELVIS_HEIGHT if standing else SITTING_PELVIS_HEIGHT
    translation = np.array([
        rng.uniform(-config.center_jitter, config.center_jitter),
        rng.uniform(-config.center_jitter, config.center_jitter),
        height + rng.normal(0.0, config.height_jitter),
    ])
    pose = GlobalPose(rodrigues(np.array([0.0, 0.0, yaw])), translation)

    viewpoint = int(rng.integers(24))

    # Constructors re-check the sampled parameters against the model
    # limits; a config that can exceed them fails loudly here.
    PoseParams(theta)
    ShapeParams(beta)
    return Scenario(index, "standing" if standing else "sitting", theta,
                    beta, pose, viewpoint)
