"""Fusing surface measurements into the pose belief.

Contact points and range returns are world-space samples of the true
body surface. Each belief sample is refined by descending

    L(theta) = -log p(theta, beta) + (alpha / M) sum_k |w_k - m_k|^2 / l0^2

where w_k is the sample's own vertex currently nearest to measurement
m_k and l0 is a millimetre distance scale, so even a handful of
measurements outweighs the image-based density. Correspondences are
refreshed between descent rounds, alternation style. Refinement alone
cannot tell samples apart, so fusing also rescores the expectation
weights: each sample's weight picks up the Gaussian likelihood of the
measurements given the surface it proposed, which strips weight from
samples that cannot explain the touched points and collapses the
uncertainty field there. Shape, global rotation and global translation
stay fixed; the global translation is corrected separately from the
shared offset the measurements reveal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .body import BodyTemplate, Skeleton
from .belief import PoseBelief
from .geometry import rodrigues_batch, so3_right_jacobian_batch

DEFAULT_ALPHA = 0.01

# Residuals are counted in millimetres: with this scale a single
# centimetre-level mismatch contributes ~alpha * 100 to the loss, which
# dominates typical log-density variation across samples.
DEFAULT_DISTANCE_SCALE = 1e-3

_ARMIJO_C1 = 1e-4

# Mild step regrowth after a first-try acceptance; aggressive doubling
# makes the next round start too long and halve it straight back.
_STEP_GROWTH = 1.5

# Bandwidth of the measurement likelihood used for expectation
# weights. Wider than the sensor noise on purpose: scoring at the raw
# noise scale hands all weight to a single sample after one touch,
# which flattens the uncertainty field instead of focusing it.
DEFAULT_WEIGHT_SIGMA = 0.04


def nearest_vertices(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Index of the closest vertex for each query point.

    Ties resolve to the lowest index.

    Args:
        points: (M, 3) query points.
        vertices: (Nv, 3) candidate vertices.

    Returns:
        (M,) int indices.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    diff = points[:, None, :] - vertices[None]
    return np.argmin(np.einsum("mvc,mvc->mv", diff, diff), axis=1)


def _top_two_influences(template: BodyTemplate) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex strongest two skin weights, ((Nv, 2) ids, (Nv, 2) w)."""
    order = np.argsort(-template.skin_weights, axis=1)[:, :2]
    weights = np.take_along_axis(template.skin_weights, order, axis=1)
    return order, weights


def _ancestor_mask(skeleton: Skeleton) -> np.ndarray:
    """(J, J) bools: mask[j, m] means joint m moves joint j's bone."""
    n = skeleton.num_joints
    mask = np.zeros((n, n), dtype=bool)
    for j in range(n):
        m = j
        while m >= 0:
            mask[j, m] = True
            m = skeleton.parents[m]
    return mask


@lru_cache(maxsize=8)
def _chain_levels(parents: tuple) -> tuple:
    """Joints grouped by tree depth, ((children, parents) per level)."""
    depth = [0] * len(parents)
    for j, p in enumerate(parents):
        if p >= 0:
            depth[j] = depth[p] + 1
    levels = []
    for d in range(1, max(depth) + 1):
        children = tuple(j for j in range(len(parents)) if depth[j] == d)
        levels.append((np.array(children),
                       np.array([parents[j] for j in children])))
    return tuple(levels)


def _shape_pass(template: BodyTemplate, betas: np.ndarray):
    """Shaped vertices and rest joints per sample; pose-independent."""
    shaped = template.vertices[None] + np.tensordot(
        betas, template.shape_dirs, axes=([1], [2]))
    rest_joints = template.joint_regressor[None] @ shaped
    return shaped, rest_joints


def _pose_pass(skeleton: Skeleton, rest_joints: np.ndarray,
               thetas: np.ndarray):
    """World joint transforms per sample, chained level by level."""
    n_samples, n_joints = thetas.shape[0], skeleton.num_joints
    rots = rodrigues_batch(thetas)
    world_r = np.empty((n_samples, n_joints, 3, 3))
    world_t = np.empty((n_samples, n_joints, 3))
    world_r[:, 0] = rots[:, 0]
    world_t[:, 0] = 0.0
    for children, parents in _chain_levels(tuple(int(p) for p in skeleton.parents)):
        offset = rest_joints[:, children] - rest_joints[:, parents]
        parent_r = world_r[:, parents]
        world_r[:, children] = parent_r @ rots[:, children]
        world_t[:, children] = (parent_r @ offset[..., None])[..., 0] \
            + world_t[:, parents]
    return world_r, world_t


def _batch_pose(skeleton: Skeleton, template: BodyTemplate,
                thetas: np.ndarray, betas: np.ndarray):
    """Shaped vertices, rest joints and world joint transforms per sample."""
    shaped, rest_joints = _shape_pass(template, betas)
    world_r, world_t = _pose_pass(skeleton, rest_joints, thetas)
    return shaped, rest_joints, world_r, world_t


def _blend(template: BodyTemplate, shaped, rest_joints, world_r, world_t):
    """Linear blend skinning from precomputed transforms, (S, Nv, 3)."""
    out = np.zeros_like(shaped)
    for j in range(rest_joints.shape[1]):
        col = template.skin_weights[:, j]
        active = np.where(col > 0)[0]
        if active.size == 0:
            continue
        local = shaped[:, active] - rest_joints[:, j, None, :]
        moved = local @ world_r[:, j].transpose(0, 2, 1) + world_t[:, j, None, :]
        out[:, active] += col[active, None] * moved
    return out


def _loss_core(thetas: np.ndarray, betas: np.ndarray, rotations: np.ndarray,
               translations: np.ndarray, generator, skeleton: Skeleton,
               template: BodyTemplate, measurements: np.ndarray,
               matches: np.ndarray, alpha: float, distance_scale: float,
               with_grad: bool, shape_cache=None):
    """Loss and gradient on explicit sample arrays.

    ``matches`` holds one vertex index per measurement and sample. Only
    those vertices are skinned: with at most two influences per vertex
    the gather reproduces full blend skinning exactly, and the cost
    scales with the measurement count instead of the mesh.
    ``shape_cache`` lets descent loops reuse the pose-independent
    (shaped, rest_joints) pair while beta stays fixed.
    """
    n_samples, n_joints = thetas.shape[0], skeleton.num_joints
    n_meas = measurements.shape[0]
    if shape_cache is None:
        shape_cache = _shape_pass(template, betas)
    shaped, rest_joints = shape_cache
    world_r, world_t = _pose_pass(skeleton, rest_joints, thetas)

    idx2, w2 = _top_two_influences(template)
    s_idx = np.arange(n_samples)[:, None]
    b_idx = s_idx[:, :, None]
    bones = idx2[matches]                       # (S, M, 2)
    weights = w2[matches]                       # (S, M, 2)
    rot_b = world_r[b_idx, bones]               # (S, M, 2, 3, 3)
    trn_b = world_t[b_idx, bones]               # (S, M, 2, 3)
    local = shaped[s_idx, matches][:, :, None, :] - rest_joints[b_idx, bones]
    rigid = (rot_b @ local[..., None])[..., 0] + trn_b
    matched = (weights[..., None] * rigid).sum(axis=2)

    flat = np.concatenate([thetas.reshape(n_samples, -1), betas], axis=1)
    prior = -generator.log_density(flat)

    world = matched @ rotations.transpose(0, 2, 1) + translations[:, None, :]
    resid = world - measurements[None]
    scale = alpha / (n_meas * distance_scale ** 2)
    data = scale * np.square(resid).sum(axis=(1, 2))
    loss = prior + data
    if not with_grad:
        return loss, None

    grad = generator.grad_neg_log_density(flat)[:, :n_joints * 3]
    grad = grad.reshape(n_samples, n_joints, 3).copy()

    anc = _ancestor_mask(skeleton)
    # Rotate residuals into the pelvis-local frame once; every joint's
    # contribution is -[p - t_m]x R_m Jr(theta_m) applied to that bone
    # point, summed over the vertex's influences and all ancestors.
    resid_local = resid @ rotations
    lever = rigid[:, :, :, None, :] - world_t[:, None, None, :, :]
    cross = np.cross(lever, resid_local[:, :, None, None, :])
    wa = weights[..., None] * anc[bones]        # (S, M, 2, J)
    rot_jr = world_r @ so3_right_jacobian_batch(thetas)
    pulled = (wa[..., None] * cross).sum(axis=(1, 2))          # (S, J, 3)
    grad += 2.0 * scale * (pulled[:, :, None, :] @ rot_jr)[:, :, 0, :]
    return loss, grad


def loss_and_grad(thetas: np.ndarray, belief: PoseBelief, skeleton: Skeleton,
                  template: BodyTemplate, measurements: np.ndarray,
                  matches: np.ndarray, *, alpha: float = DEFAULT_ALPHA,
                  distance_scale: float = DEFAULT_DISTANCE_SCALE,
                  with_grad: bool = True):
    """Per-sample fusion loss and its analytic pose gradient.

    Correspondences are held fixed, which makes the objective smooth;
    callers refresh ``matches`` between descent rounds.

    Args:
        thetas: (S, J, 3) candidate pose stacks.
        measurements: (M, 3) world surface points.
        matches: (S, M) matched vertex index per measurement and
            sample.
        with_grad: skip the gradient for plain evaluations.

    Returns:
        (loss (S,), grad (S, J, 3) or None).
    """
    return _loss_core(thetas, belief.betas, belief.rotations,
                      belief.translations, belief.generator, skeleton,
                      template, measurements, matches, alpha, distance_scale,
                      with_grad)


def _world_meshes(belief: PoseBelief, skeleton: Skeleton,
                  template: BodyTemplate, thetas: np.ndarray) -> np.ndarray:
    shaped, rest_joints, world_r, world_t = _batch_pose(
        skeleton, template, thetas, belief.betas)
    local = _blend(template, shaped, rest_joints, world_r, world_t)
    return local @ belief.rotations.transpose(0, 2, 1) \
        + belief.translations[:, None, :]


def _match_all(meshes: np.ndarray, measurements: np.ndarray) -> np.ndarray:
    """Nearest vertex of each sample mesh per measurement, (S, M).

    Uses |v|^2 - 2 v.m, which orders vertices like the squared distance
    because the dropped |m|^2 is constant per measurement.
    """
    scores = np.square(meshes).sum(axis=2)[:, :, None] \
        - 2.0 * meshes @ measurements.T
    return np.argmin(scores, axis=1)


def _matched_sq(meshes: np.ndarray, measurements: np.ndarray,
                matches: np.ndarray) -> np.ndarray:
    """Squared distance to the matched vertex (m^2), (S, M)."""
    s_idx = np.arange(meshes.shape[0])[:, None]
    diff = meshes[s_idx, matches] - measurements[None]
    return np.einsum("smc,smc->sm", diff, diff)


def _nearest_residuals(meshes: np.ndarray,
                       measurements: np.ndarray) -> np.ndarray:
    """Mean nearest-vertex distance per sample (m), (S,)."""
    sq = _matched_sq(meshes, measurements, _match_all(meshes, measurements))
    return np.sqrt(sq).mean(axis=1)


def _clamp_norms(thetas: np.ndarray) -> np.ndarray:
    """Scales each joint rotation back inside the pi ball."""
    norms = np.linalg.norm(thetas, axis=2, keepdims=True)
    factor = np.where(norms > np.pi, np.pi / np.maximum(norms, 1e-12), 1.0)
    return thetas * factor


@dataclass
class FusionResult:
    """Outcome of a refinement pass.

    Attributes:
        belief: refined belief; ml_index points at the lowest-loss
            sample and the expectation weights carry the measurement
            likelihood.
        loss: (S,) final per-sample loss.
        residual_before: (S,) mean matched distance going in (m).
        residual_after: (S,) mean matched distance going out; never
            worse than residual_before.
        iterations: descent rounds used.
        converged: whether every sample met the tolerance.
        reverted: (S,) samples restored to their input pose because
            descent did not improve their surface fit.
    """

    belief: PoseBelief
    loss: np.ndarray
    residual_before: np.ndarray
    residual_after: np.ndarray
    iterations: int
    converged: bool
    reverted: np.ndarray


def optimize_pose(belief: PoseBelief, skeleton: Skeleton,
                  template: BodyTemplate, measurements: np.ndarray, *,
                  alpha: float = DEFAULT_ALPHA,
                  distance_scale: float = DEFAULT_DISTANCE_SCALE,
                  weight_sigma: float = DEFAULT_WEIGHT_SIGMA,
                  step0: float = 1e-2, max_iters: int = 100, tol: float = 1e-6,
                  refresh_every: int = 5, max_halvings: int = 25) -> FusionResult:
    """Refines every belief sample against the measurement set.

    Projected gradient descent with per-sample backtracking: a step is
    halved until the loss decreases sufficiently, and regrown after a
    clean success. Each sample matches measurements to its own nearest
    vertices, refreshed every ``refresh_every`` rounds. A sample whose
    final surface fit is worse than its input fit is reverted, so the
    reported residuals never increase. The refined maximum-likelihood
    sample is the one with the lowest final loss.

    The refined belief's expectation weights are rescored as well:
    each sample's stored log density becomes its generator density
    plus the log likelihood of the measurements given the surface the
    sample proposed before refinement, with bandwidth ``weight_sigma``.
    Scoring the pre-refinement surfaces keeps the weights
    discriminative; after descent every sample hugs the measurements
    and the fit no longer separates plausible poses from contorted
    ones.

    Args:
        measurements: (M, 3) world surface points; empty means no-op.

    Returns:
        FusionResult with the refined belief.
    """
    measurements = np.asarray(measurements, dtype=float).reshape(-1, 3)
    n_samples = belief.num_samples
    if measurements.shape[0] == 0:
        zero = np.zeros(n_samples)
        loss, _ = loss_and_grad(belief.thetas, belief, skeleton, template,
                                np.zeros((1, 3)),
                                np.zeros((n_samples, 1), dtype=int),
                                alpha=0.0, with_grad=False)
        return FusionResult(replace(belief), loss, zero, zero, 0, True,
                            np.zeros(n_samples, dtype=bool))

    thetas0 = belief.thetas.copy()
    thetas = belief.thetas.copy()
    meshes = _world_meshes(belief, skeleton, template, thetas)
    matches = _match_all(meshes, measurements)
    sq_before = _matched_sq(meshes, measurements, matches)
    residual_before = np.sqrt(sq_before).mean(axis=1)

    # Beta never moves here, so the shaped vertices and rest joints are
    # computed once and sliced per row subset.
    shaped_all, rest_all = _shape_pass(template, belief.betas)

    def evaluate(rows, row_thetas, row_matches, with_grad):
        return _loss_core(row_thetas, belief.betas[rows],
                          belief.rotations[rows], belief.translations[rows],
                          belief.generator, skeleton, template, measurements,
                          row_matches, alpha, distance_scale, with_grad,
                          shape_cache=(shaped_all[rows], rest_all[rows]))

    every = np.arange(n_samples)
    steps = np.full(n_samples, step0)
    loss, grad = evaluate(every, thetas, matches, True)
    # Samples whose round-over-round improvement falls under tol freeze
    # and cost nothing until a correspondence refresh thaws them.
    frozen = np.zeros(n_samples, dtype=bool)
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        if iterations > 1 and iterations % refresh_every == 1:
            current = _world_meshes(belief, skeleton, template, thetas)
            matches = _match_all(current, measurements)
            loss, grad = evaluate(every, thetas, matches, True)
            frozen[:] = False
        idx = np.where(~frozen)[0]
        sub_thetas = thetas[idx]
        sub_grad = grad[idx]
        sub_loss = loss[idx]
        gnorm2 = np.einsum("sjc,sjc->s", sub_grad, sub_grad)
        searching = np.ones(idx.size, dtype=bool)
        new_thetas = sub_thetas.copy()
        new_loss = sub_loss.copy()
        trial = steps[idx].copy()
        sub_steps = trial.copy()
        first_try = True
        for _ in range(max_halvings):
            rows = np.where(searching)[0]
            if rows.size == 0:
                break
            cand = _clamp_norms(
                sub_thetas[rows] - trial[rows, None, None] * sub_grad[rows])
            cand_loss, _ = evaluate(idx[rows], cand, matches[idx[rows]], False)
            ok = cand_loss <= sub_loss[rows] - _ARMIJO_C1 \
                * trial[rows] * gnorm2[rows]
            accepted = rows[ok]
            new_thetas[accepted] = cand[ok]
            new_loss[accepted] = cand_loss[ok]
            if first_try:
                sub_steps[accepted] = np.minimum(
                    trial[accepted] * _STEP_GROWTH, 1.0)
            else:
                sub_steps[accepted] = trial[accepted]
            searching[accepted] = False
            trial[searching] *= 0.5
            first_try = False
        # Samples that never accepted keep their shrunken step so the
        # next round does not replay the same failed trials.
        sub_steps[searching] = np.maximum(trial[searching], 1e-12)
        steps[idx] = sub_steps
        drop = sub_loss - new_loss
        thetas[idx] = new_thetas
        loss[idx] = new_loss
        frozen[idx] = drop < tol
        live = np.where(~frozen)[0]
        if live.size == 0:
            converged = True
            break
        loss[live], grad[live] = evaluate(live, thetas[live], matches[live],
                                          True)

    final_meshes = _world_meshes(belief, skeleton, template, thetas)
    residual_after = _nearest_residuals(final_meshes, measurements)

    reverted = residual_after > residual_before
    if reverted.any():
        thetas[reverted] = thetas0[reverted]
        residual_after[reverted] = residual_before[reverted]
        final_meshes[reverted] = meshes[reverted]
    matches = _match_all(final_meshes, measurements)
    loss, _ = evaluate(every, thetas, matches, False)

    flat = np.concatenate([thetas.reshape(n_samples, -1), belief.betas], axis=1)
    log_lik = -sq_before.sum(axis=1) / (2.0 * weight_sigma ** 2)
    refined = replace(belief, thetas=thetas,
                      log_densities=belief.generator.log_density(flat) + log_lik,
                      ml_index=int(np.argmin(loss)))
    return FusionResult(refined, loss, residual_before, residual_after,
                        iterations, converged, reverted)


def global_offset(belief: PoseBelief, skeleton: Skeleton,
                  template: BodyTemplate, measurements: np.ndarray) -> np.ndarray:
    """Shared translation correction the measurements reveal, (3,).

    The expectation over the belief of the mean measurement-to-surface
    residual, with each measurement matched to its nearest vertex on
    each sample's mesh: adding the result to every sample translation
    moves the belief onto the measured surface. Empty measurements
    give zero.
    """
    measurements = np.asarray(measurements, dtype=float).reshape(-1, 3)
    if measurements.shape[0] == 0:
        return np.zeros(3)
    meshes = _world_meshes(belief, skeleton, template, belief.thetas)
    matches = _match_all(meshes, measurements)
    s_idx = np.arange(meshes.shape[0])[:, None]
    per_sample = (measurements[None] - meshes[s_idx, matches]).mean(axis=1)
    return belief.sample_weights() @ per_sample


def shift_belief(belief: PoseBelief, delta: np.ndarray) -> PoseBelief:
    """Belief with every sample translated by delta, (3,)."""
    return replace(belief, translations=belief.translations + np.asarray(delta, dtype=float))


def closest_sample(belief: PoseBelief, skeleton: Skeleton,
                   template: BodyTemplate, measurements: np.ndarray) -> PoseBelief:
    """Re-flags the sample whose surface best explains the measurements.

    The selection baseline: no sample is modified, only ml_index moves
    to the sample with the smallest mean matched distance (ties to the
    lowest index). Empty measurements return the belief unchanged.
    """
    measurements = np.asarray(measurements, dtype=float).reshape(-1, 3)
    if measurements.shape[0] == 0:
        return replace(belief)
    meshes = _world_meshes(belief, skeleton, template, belief.thetas)
    residuals = _nearest_residuals(meshes, measurements)
    return replace(belief, ml_index=int(np.argmin(residuals)))
