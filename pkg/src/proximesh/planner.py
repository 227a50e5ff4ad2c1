"""Active placement of the camera and the measurement sensors.

The camera phase estimates the body from an initial viewpoint, scores a
ring of candidate viewpoints by the visible share of belief uncertainty
and re-estimates from the best one. The measurement phase then probes
the surface: each step picks a touch target (the reachable vertex with
the highest positional uncertainty, or a random vertex for the passive
baseline), collects the measurement and folds the growing measurement
set back into the belief, either by full fusion or by re-flagging the
closest sample. A single range-sensor sweep seeds the measurement set
with leg returns when its cart can be placed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import (
    EstimatorConfig,
    PoseBelief,
    ml_joints,
    ml_mesh,
    simulate_camera_estimate,
    vertex_variance,
)
from .body import (
    BodyTemplate,
    GlobalPose,
    PoseParams,
    ShapeParams,
    Skeleton,
    skin_mesh,
    world_mesh,
)
from .fusion import closest_sample, global_offset, optimize_pose, shift_belief
from .geometry import look_at_rotation
from .kinematics import IkResult, KinematicChain, ik_reach
from .sensors import filter_leg_returns, sample_touch, scan_lidar_slice
from .visibility import Camera, zbuffer_visibility

DEFAULT_HEIGHTS = (0.4, 0.9, 1.4)
DEFAULT_VIEW_RADIUS = 0.7
DEFAULT_AZIMUTHS = 8

# Cap on how many top-uncertainty vertices the target scan may try to
# reach before declaring the step infeasible.
_MAX_TARGET_SCAN = 64

_LIDAR_STAND_RADIUS = 1.2
_TOUCH_SIGMA = 0.02

# A cached reach failure is retried once the believed target position
# has drifted this far (m); smaller shifts rarely flip the solver.
_RETRY_SHIFT = 0.02


def viewpoint_candidates(center: np.ndarray, *,
                         radius: float = DEFAULT_VIEW_RADIUS,
                         azimuths: int = DEFAULT_AZIMUTHS,
                         heights: tuple = DEFAULT_HEIGHTS) -> list[Camera]:
    """Ring of cameras aimed at a body center, azimuth-major order.

    Candidate ``a * len(heights) + h`` stands at azimuth
    ``2 pi a / azimuths`` on a circle of ``radius`` around the center
    axis, at world height ``heights[h]``.
    """
    center = np.asarray(center, dtype=float)
    cams = []
    for a in range(azimuths):
        phi = 2.0 * np.pi * a / azimuths
        for h in heights:
            eye = np.array([center[0] + radius * np.cos(phi),
                            center[1] + radius * np.sin(phi), h])
            cams.append(Camera(look_at_rotation(eye, center), eye))
    return cams


def score_viewpoint(camera: Camera, belief: PoseBelief, skeleton: Skeleton,
                    template: BodyTemplate,
                    sigma: np.ndarray | None = None) -> float:
    """Sum of per-vertex uncertainty visible from a camera.

    Evaluated on the maximum-likelihood surface: vertices the camera
    would see contribute their positional variance.

    Args:
        sigma: optional precomputed (Nv,) variance field.
    """
    if sigma is None:
        sigma = vertex_variance(belief, skeleton, template)
    verts = ml_mesh(belief, skeleton, template)
    mask = zbuffer_visibility(verts, template.faces, camera)
    return float(sigma[mask.visible].sum())


def select_viewpoint(belief: PoseBelief, skeleton: Skeleton,
                     template: BodyTemplate, *,
                     radius: float = DEFAULT_VIEW_RADIUS,
                     azimuths: int = DEFAULT_AZIMUTHS,
                     heights: tuple = DEFAULT_HEIGHTS):
    """Best candidate viewpoint around the estimated pelvis.

    Returns:
        (index, camera, scores (K,), blind) with ties resolved to the
        lowest index; blind flags an all-zero score row, in which case
        candidate 0 is returned.
    """
    center = ml_joints(belief, skeleton, template)[0]
    cams = viewpoint_candidates(center, radius=radius, azimuths=azimuths,
                                heights=heights)
    sigma = vertex_variance(belief, skeleton, template)
    scores = np.array([score_viewpoint(c, belief, skeleton, template, sigma)
                       for c in cams])
    blind = bool(np.all(scores == 0.0))
    index = 0 if blind else int(np.argmax(scores))
    return index, cams[index], scores, blind


@dataclass
class SensorTarget:
    """Outcome of one touch-target selection.

    Attributes:
        vertex: chosen template vertex, -1 when infeasible.
        position: (3,) estimated world position of that vertex.
        ik: reach solution for the feasible target, else None.
        feasible: whether any scanned target could be reached.
        scanned: how many candidates were tried.
    """

    vertex: int
    position: np.ndarray
    ik: IkResult | None
    feasible: bool
    scanned: int


def select_sensor_target(belief: PoseBelief, skeleton: Skeleton,
                         template: BodyTemplate, chain: KinematicChain,
                         committed: np.ndarray | list = (), *,
                         sigma: np.ndarray | None = None,
                         max_scan: int = _MAX_TARGET_SCAN,
                         ik_restarts: int = 4,
                         ik_iters: int = 100,
                         infeasible: dict | None = None) -> SensorTarget:
    """Reachable vertex with the highest positional uncertainty.

    Maximizes sigma_i over vertices the chain can actually reach on the
    estimated surface. Candidates are scanned in decreasing-sigma order
    (ties by lowest index), so the first reachable one is the argmax;
    vertices with zero uncertainty are never probed. The reach solver
    runs on a reduced budget here: most scanned candidates are
    unreachable and fail fast, and a miss only advances the scan.

    ``infeasible`` is an optional vertex -> believed-position cache of
    earlier failures, carried across the steps of one acquisition; a
    cached vertex is skipped while its estimate has moved less than
    _RETRY_SHIFT, since reach failures repeat until the target moves
    and placements only accumulate.
    """
    if sigma is None:
        sigma = vertex_variance(belief, skeleton, template)
    verts = ml_mesh(belief, skeleton, template)
    order = np.argsort(-sigma, kind="stable")
    scanned = 0
    for v in order:
        if sigma[v] <= 0.0 or scanned >= max_scan:
            break
        scanned += 1
        if infeasible is not None:
            prev = infeasible.get(int(v))
            if prev is not None \
                    and float(np.linalg.norm(prev - verts[v])) < _RETRY_SHIFT:
                continue
        result = ik_reach(chain, verts[v], committed,
                          restarts=ik_restarts, max_iters=ik_iters)
        if result.success:
            return SensorTarget(int(v), verts[v], result, True, scanned)
        if infeasible is not None:
            infeasible[int(v)] = verts[v].copy()
    return SensorTarget(-1, np.zeros(3), None, False, scanned)


@dataclass
class CameraPhase:
    """Belief after the two camera placements.

    Attributes:
        belief: estimate from the selected viewpoint.
        initial_camera: scenario-assigned first camera.
        selected_camera: viewpoint chosen by the uncertainty score.
        viewpoint_index: index into the candidate ring.
        blind: whether the score row was all zero.
        committed: (2, 3) camera positions later sensors must clear.
    """

    belief: PoseBelief
    initial_camera: Camera
    selected_camera: Camera
    viewpoint_index: int
    blind: bool
    committed: np.ndarray


def run_camera_phase(skeleton: Skeleton, template: BodyTemplate,
                     theta: np.ndarray, beta: np.ndarray, pose: GlobalPose,
                     *, initial_index: int, seed,
                     config: EstimatorConfig | None = None) -> CameraPhase:
    """Initial estimate, viewpoint selection, and re-estimate.

    The initial camera is candidate ``initial_index`` on the ring
    around the true pelvis, standing in for a coarse operator placement;
    both estimates draw from streams derived from ``seed``.
    """
    config = config or EstimatorConfig()
    seeds = np.random.SeedSequence(seed).spawn(2)
    pelvis = pose.rotation @ (template.joint_regressor @ template.vertices)[0] \
        + pose.translation
    ring = viewpoint_candidates(pelvis)
    cam0 = ring[initial_index % len(ring)]
    belief0 = simulate_camera_estimate(skeleton, template, theta, beta, pose,
                                       cam0, config, seed=seeds[0])
    index, cam1, _, blind = select_viewpoint(belief0, skeleton, template)
    belief1 = simulate_camera_estimate(skeleton, template, theta, beta, pose,
                                       cam1, config, seed=seeds[1])
    committed = np.stack([cam0.translation, cam1.translation])
    return CameraPhase(belief1, cam0, cam1, index, blind, committed)


@dataclass
class StepRecord:
    """One measurement step of the acquisition loop.

    Attributes:
        target_vertex: probed template vertex, -1 for a skipped step.
        feasible: whether the step produced a measurement.
        target_position: (3,) believed aim point, None for random probes.
        measurement: (3,) noisy contact on the true surface, or None.
        tool_position: (3,) where the probe parked, None for random probes.
    """

    target_vertex: int
    feasible: bool
    target_position: np.ndarray | None
    measurement: np.ndarray | None
    tool_position: np.ndarray | None


@dataclass
class AcquisitionResult:
    """Final belief and the trace that produced it.

    Attributes:
        belief: belief after all measurement steps.
        steps: per-step records.
        measurements: (M, 3) accumulated surface measurements.
        committed: (P, 3) all committed placements.
        lidar_points: (L, 3) accepted range returns, possibly empty.
        blind: camera-phase blind flag, carried through.
    """

    belief: PoseBelief
    steps: list[StepRecord]
    measurements: np.ndarray
    committed: np.ndarray
    lidar_points: np.ndarray
    blind: bool = False


def _place_lidar(belief: PoseBelief, skeleton: Skeleton,
                 template: BodyTemplate, chain: KinematicChain,
                 committed: np.ndarray):
    """First ring standpoint around the estimated pelvis the cart reaches."""
    pelvis = ml_joints(belief, skeleton, template)[0]
    height = float(chain.tool_offset[2])
    for a in range(DEFAULT_AZIMUTHS):
        phi = 2.0 * np.pi * a / DEFAULT_AZIMUTHS
        stand = np.array([pelvis[0] + _LIDAR_STAND_RADIUS * np.cos(phi),
                          pelvis[1] + _LIDAR_STAND_RADIUS * np.sin(phi),
                          height])
        result = ik_reach(chain, stand, committed)
        if result.success:
            yaw = float(np.arctan2(pelvis[1] - stand[1], pelvis[0] - stand[0]))
            return result, yaw
    return None, 0.0


def _update_belief(belief: PoseBelief, skeleton: Skeleton,
                   template: BodyTemplate, measurements: np.ndarray,
                   fuse: bool, fusion_options: dict) -> PoseBelief:
    if measurements.shape[0] == 0:
        return belief
    if fuse:
        shifted = shift_belief(
            belief, global_offset(belief, skeleton, template, measurements))
        return optimize_pose(shifted, skeleton, template, measurements,
                             **fusion_options).belief
    return closest_sample(belief, skeleton, template, measurements)


def run_acquisition(phase: CameraPhase, skeleton: Skeleton,
                    template: BodyTemplate, theta: np.ndarray,
                    beta: np.ndarray, pose: GlobalPose, *, n_steps: int,
                    active: bool, fuse: bool, seed,
                    touch_chain: KinematicChain,
                    lidar_chain: KinematicChain | None = None,
                    touch_sigma: float = _TOUCH_SIGMA,
                    lidar_sigma: float = 0.01,
                    fusion_options: dict | None = None) -> AcquisitionResult:
    """Runs n measurement steps from a completed camera phase.

    Args:
        active: pick targets by uncertainty with reach checks; False
            probes uniformly random vertices without placement.
        fuse: update by offset correction plus pose refinement; False
            re-flags the closest sample.
        seed: measurement noise stream.
        touch_sigma: per-axis touch noise std, m.
        lidar_sigma: radial range noise std, m.
        fusion_options: keyword overrides for the pose refinement,
            e.g. an iteration budget for time-boxed runs.

    Returns:
        AcquisitionResult; infeasible steps are recorded and skipped.
    """
    rng = np.random.default_rng(seed)
    fusion_options = fusion_options or {}
    belief = phase.belief
    committed = phase.committed.copy()
    true_world = world_mesh(
        skin_mesh(skeleton, template, PoseParams(theta), ShapeParams(beta)), pose)

    lidar_points = np.zeros((0, 3))
    if lidar_chain is not None:
        placement, yaw = _place_lidar(belief, skeleton, template, lidar_chain,
                                      committed)
        if placement is not None:
            committed = np.vstack([committed, placement.position])
            scan = scan_lidar_slice(true_world, template.faces,
                                    placement.position, yaw,
                                    sigma_range=lidar_sigma, rng=rng)
            clusters = filter_leg_returns(scan)
            if clusters:
                lidar_points = np.vstack(clusters)

    measurements = lidar_points.copy()
    belief = _update_belief(belief, skeleton, template, measurements,
                            fuse, fusion_options)

    steps: list[StepRecord] = []
    infeasible: dict = {}
    for _ in range(n_steps):
        if active:
            sigma = vertex_variance(belief, skeleton, template)
            target = select_sensor_target(belief, skeleton, template,
                                          touch_chain, committed, sigma=sigma,
                                          infeasible=infeasible)
            if not target.feasible:
                steps.append(StepRecord(-1, False, None, None, None))
                continue
            vertex = target.vertex
            aim = target.position
            tool = target.ik.position
            committed = np.vstack([committed, tool])
        else:
            vertex = int(rng.integers(template.vertices.shape[0]))
            aim = None
            tool = None
        measurement = sample_touch(true_world, vertex, rng, touch_sigma)
        measurements = np.vstack([measurements, measurement])
        belief = _update_belief(belief, skeleton, template, measurements,
                                fuse, fusion_options)
        steps.append(StepRecord(vertex, True, aim, measurement, tool))

    return AcquisitionResult(belief, steps, measurements, committed,
                             lidar_points, phase.blind)
