"""Simplified skinned body model.

A 16-joint skeleton carries a capsule-tube surface mesh. Vertices are
deformed by linear blend skinning with at most two joint influences,
joints are recovered from the surface through a sparse linear
regressor, and four shape blend directions control overall height,
bulk, leg length, and arm length. Everything is plain numpy; meshes
live in pelvis-centered local coordinates until a global pose maps
them into the world.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import is_rotation, rodrigues_batch

NUM_JOINTS = 16
NUM_SHAPE_DIRS = 4
MAX_SHAPE_MAGNITUDE = 5.0

JOINT_NAMES = (
    "pelvis",
    "spine",
    "chest",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
)

PARENTS = (-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14)

# Joints reported individually by the benchmark tables.
REPORTED_JOINTS = ("head", "pelvis", "l_wrist", "r_wrist", "l_ankle", "r_ankle")

_TEMPLATE_FORMAT = "proximesh-body/1"

# Rest joint positions, pelvis at the origin, z up, subject facing +x,
# arms extended along +-y (T pose).
_REST_POSITIONS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.15],
        [0.0, 0.0, 0.40],
        [0.0, 0.0, 0.70],
        [0.0, 0.20, 0.45],
        [0.0, 0.48, 0.45],
        [0.0, 0.73, 0.45],
        [0.0, -0.20, 0.45],
        [0.0, -0.48, 0.45],
        [0.0, -0.73, 0.45],
        [0.0, 0.10, -0.05],
        [0.0, 0.10, -0.47],
        [0.0, 0.10, -0.89],
        [0.0, -0.10, -0.05],
        [0.0, -0.10, -0.47],
        [0.0, -0.10, -0.89],
    ]
)

# Capsule tube per bone: (owner joint, child joint, radius, ring count,
# extension past the child joint). The owner is the joint whose rotation
# swings the segment; ring counts sum to 64 so the default template has
# exactly 64 * 8 = 512 vertices.
_BONES = (
    (0, 1, 0.11, 5, 0.0),
    (1, 2, 0.12, 5, 0.0),
    (2, 3, 0.08, 6, 0.20),
    (2, 4, 0.05, 3, 0.0),
    (2, 7, 0.05, 3, 0.0),
    (4, 5, 0.045, 4, 0.0),
    (7, 8, 0.045, 4, 0.0),
    (5, 6, 0.04, 4, 0.08),
    (8, 9, 0.04, 4, 0.08),
    (0, 10, 0.07, 3, 0.0),
    (0, 13, 0.07, 3, 0.0),
    (10, 11, 0.075, 5, 0.0),
    (13, 14, 0.075, 5, 0.0),
    (11, 12, 0.05, 5, 0.05),
    (14, 15, 0.05, 5, 0.05),
)

_RING_SIZE = 8
# Fraction of the bone length blended toward the neighbouring joint at
# each end of a tube.
_BLEND_FRACTION = 0.35


@dataclass
class Skeleton:
    """Joint tree with fixed rest offsets.

    Attributes:
        joint_names: tuple of J joint names.
        parents: (J,) parent index per joint, -1 for the root.
        rest_offsets: (J, 3) offset from the parent joint at rest; the
            root row holds its rest position (the origin).
    """

    joint_names: tuple
    parents: np.ndarray
    rest_offsets: np.ndarray

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.rest_offsets = np.asarray(self.rest_offsets, dtype=float)
        n = len(self.joint_names)
        if self.parents.shape != (n,) or self.rest_offsets.shape != (n, 3):
            raise ValueError("skeleton arrays inconsistent with joint count")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        for j in range(1, n):
            if not 0 <= self.parents[j] < j:
                raise ValueError("parents must precede children")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def rest_positions(self) -> np.ndarray:
        """Accumulates rest offsets down the tree, (J, 3)."""
        pos = np.zeros((self.num_joints, 3))
        pos[0] = self.rest_offsets[0]
        for j in range(1, self.num_joints):
            pos[j] = pos[self.parents[j]] + self.rest_offsets[j]
        return pos

    def ancestors(self, joint: int) -> list:
        """Returns the chain from the root to joint, inclusive."""
        chain = [joint]
        while self.parents[chain[-1]] >= 0:
            chain.append(int(self.parents[chain[-1]]))
        return chain[::-1]


@dataclass
class BodyTemplate:
    """Surface template bound to a skeleton.

    Attributes:
        vertices: (Nv, 3) rest vertex positions, pelvis-local.
        faces: (F, 3) int triangle indices.
        skin_weights: (Nv, J) row-stochastic blend weights, at most two
            nonzero entries per row.
        joint_regressor: (J, Nv) row-stochastic regressor recovering
            joint positions from surface vertices.
        shape_dirs: (Nv, 3, B) linear shape blend directions.
    """

    vertices: np.ndarray
    faces: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    shape_dirs: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_shape_dirs(self) -> int:
        return self.shape_dirs.shape[2]


@dataclass
class PoseParams:
    """Axis-angle rotation per joint, (J, 3), angle norm at most pi."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 2 or self.theta.shape[1] != 3:
            raise ValueError("theta must have shape (J, 3)")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta contains non-finite values")
        norms = np.linalg.norm(self.theta, axis=1)
        if np.any(norms > np.pi + 1e-9):
            raise ValueError("joint rotation angle exceeds pi")

    @classmethod
    def zero(cls, num_joints: int = NUM_JOINTS) -> "PoseParams":
        return cls(np.zeros((num_joints, 3)))


@dataclass
class ShapeParams:
    """Shape blend coefficients, |beta_i| <= 5."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.ndim != 1:
            raise ValueError("beta must be a vector")
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta contains non-finite values")
        if np.any(np.abs(self.beta) > MAX_SHAPE_MAGNITUDE + 1e-9):
            raise ValueError("shape coefficient magnitude exceeds 5")

    @classmethod
    def zero(cls, num_dirs: int = NUM_SHAPE_DIRS) -> "ShapeParams":
        return cls(np.zeros(num_dirs))


@dataclass
class GlobalPose:
    """Rigid transform placing the pelvis-local mesh in the world."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if not is_rotation(self.rotation, tol=1e-6):
            raise ValueError("rotation must be orthonormal with determinant +1")
        if self.translation.shape != (3,) or not np.all(np.isfinite(self.translation)):
            raise ValueError("translation must be a finite 3-vector")


def default_skeleton() -> Skeleton:
    """Returns the 16-joint humanoid skeleton."""
    offsets = _REST_POSITIONS.copy()
    offsets[1:] = _REST_POSITIONS[1:] - _REST_POSITIONS[np.array(PARENTS[1:])]
    return Skeleton(JOINT_NAMES, np.array(PARENTS), offsets)


def _ring_basis(axis: np.ndarray) -> tuple:
    """Two unit vectors spanning the plane orthogonal to axis."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(float(axis @ ref)) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, ref)
    u = u / np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _tube_weights(s: float, length: float, extension: float, owner: int,
                  child: int, owner_parent: int) -> dict:
    """Blend weights for a vertex at arc position s along one tube."""
    blend = _BLEND_FRACTION * length
    if s > length:
        # Extension past the child joint, hand or skull region.
        t = (s - length) / extension if extension > 0 else 1.0
        wc = 0.5 + 0.5 * min(t, 1.0)
        return {child: wc, owner: 1.0 - wc}
    if s < blend and owner_parent >= 0:
        t = s / blend
        wo = 0.5 + 0.5 * t
        return {owner: wo, owner_parent: 1.0 - wo}
    if s > length - blend:
        t = (s - (length - blend)) / blend
        wc = 0.5 * t
        return {owner: 1.0 - wc, child: wc}
    return {owner: 1.0}


def default_body(num_vertices: int = 512) -> tuple:
    """Builds the capsule-tube humanoid template.

    Ring counts are scaled from the 512-vertex default, so other sizes
    are rounded to the nearest achievable count (multiples of 8).

    Args:
        num_vertices: requested vertex count, default 512.

    Returns:
        (Skeleton, BodyTemplate) pair.
    """
    skeleton = default_skeleton()
    positions = skeleton.rest_positions()

    scale = num_vertices / 512.0
    verts = []
    faces = []
    weight_rows = []
    joint_ring = {}

    for owner, child, radius, base_rings, extension in _BONES:
        rings = max(3, int(round(base_rings * scale))) if scale != 1.0 else base_rings
        a = positions[owner]
        b = positions[child]
        length = float(np.linalg.norm(b - a))
        axis = (b - a) / length
        u, v = _ring_basis(axis)
        if extension > 0:
            stations = list(np.linspace(0.0, length, rings - 1)) + [length + extension]
        else:
            stations = list(np.linspace(0.0, length, rings))

        start = len(verts)
        owner_parent = int(skeleton.parents[owner])
        for s in stations:
            center = a + axis * s
            ring_start = len(verts)
            for i in range(_RING_SIZE):
                phi = 2.0 * np.pi * i / _RING_SIZE
                verts.append(center + radius * (np.cos(phi) * u + np.sin(phi) * v))
                weight_rows.append(_tube_weights(s, length, extension, owner, child, owner_parent))
            if abs(s) < 1e-12 and owner == 0 and owner_parent < 0 and 0 not in joint_ring:
                joint_ring[0] = list(range(ring_start, ring_start + _RING_SIZE))
            if abs(s - length) < 1e-12:
                joint_ring[child] = list(range(ring_start, ring_start + _RING_SIZE))

        for r in range(len(stations) - 1):
            r0 = start + r * _RING_SIZE
            r1 = r0 + _RING_SIZE
            for i in range(_RING_SIZE):
                j = (i + 1) % _RING_SIZE
                faces.append((r0 + i, r0 + j, r1 + i))
                faces.append((r0 + j, r1 + j, r1 + i))

    vertices = np.array(verts)
    nv = vertices.shape[0]
    weights = np.zeros((nv, NUM_JOINTS))
    for row, wmap in enumerate(weight_rows):
        for j, w in wmap.items():
            weights[row, j] = w

    regressor = np.zeros((NUM_JOINTS, nv))
    for j in range(NUM_JOINTS):
        ring = joint_ring[j]
        regressor[j, ring] = 1.0 / len(ring)

    shape_dirs = np.zeros((nv, 3, NUM_SHAPE_DIRS))
    legness = weights[:, 10:16].sum(axis=1)
    armness = weights[:, 4:10].sum(axis=1)
    shape_dirs[:, 2, 0] = 0.10 * vertices[:, 2]
    shape_dirs[:, 0, 1] = 0.08 * vertices[:, 0]
    shape_dirs[:, 1, 1] = 0.08 * vertices[:, 1]
    shape_dirs[:, 2, 2] = 0.15 * vertices[:, 2] * legness
    shape_dirs[:, 1, 3] = 0.15 * vertices[:, 1] * armness

    template = BodyTemplate(
        vertices=vertices,
        faces=np.array(faces, dtype=int),
        skin_weights=weights,
        joint_regressor=regressor,
        shape_dirs=shape_dirs,
    )
    validate_template(skeleton, template)
    return skeleton, template


def validate_template(skeleton: Skeleton, template: BodyTemplate) -> None:
    """Checks template invariants, raising ValueError on violation."""
    nv = template.num_vertices
    if template.vertices.shape != (nv, 3) or not np.all(np.isfinite(template.vertices)):
        raise ValueError("vertices must be finite (Nv, 3)")
    faces = template.faces
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValueError("faces must have shape (F, 3)")
    if faces.min() < 0 or faces.max() >= nv:
        raise ValueError("face index out of range")
    referenced = np.zeros(nv, dtype=bool)
    referenced[faces.ravel()] = True
    if not referenced.all():
        raise ValueError("every vertex must belong to at least one face")
    w = template.skin_weights
    if w.shape != (nv, skeleton.num_joints):
        raise ValueError("skin weight shape mismatch")
    if np.any(w < -1e-12):
        raise ValueError("skin weights must be non-negative")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("skin weight rows must sum to 1")
    if np.max((w > 0).sum(axis=1)) > 2:
        raise ValueError("at most two joint influences per vertex")
    reg = template.joint_regressor
    if reg.shape != (skeleton.num_joints, nv):
        raise ValueError("joint regressor shape mismatch")
    if np.max(np.abs(reg.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("joint regressor rows must sum to 1")
    if template.shape_dirs.shape[:2] != (nv, 3):
        raise ValueError("shape_dirs must have shape (Nv, 3, B)")


def shaped_vertices(template: BodyTemplate, shape: ShapeParams) -> np.ndarray:
    """Applies the shape blend, (Nv, 3)."""
    if shape.beta.shape[0] != template.num_shape_dirs:
        raise ValueError("shape coefficient count mismatch")
    return template.vertices + template.shape_dirs @ shape.beta


def joint_transforms(skeleton: Skeleton, theta: np.ndarray,
                     rest_joints: np.ndarray) -> tuple:
    """Composes per-joint world transforms root to leaf.

    Args:
        theta: (J, 3) axis-angle per joint.
        rest_joints: (J, 3) joint centers of the shaped rest body.

    Returns:
        (rotations (J, 3, 3), translations (J, 3)) with the pelvis
        pinned at the origin.
    """
    n = skeleton.num_joints
    rots = rodrigues_batch(theta)
    world_r = np.zeros((n, 3, 3))
    world_t = np.zeros((n, 3))
    world_r[0] = rots[0]
    for j in range(1, n):
        p = skeleton.parents[j]
        offset = rest_joints[j] - rest_joints[p]
        world_r[j] = world_r[p] @ rots[j]
        world_t[j] = world_r[p] @ offset + world_t[p]
    return world_r, world_t


def skin_mesh(skeleton: Skeleton, template: BodyTemplate,
              pose: PoseParams, shape: ShapeParams) -> np.ndarray:
    """Poses the shaped template by linear blend skinning.

    Args:
        pose: joint rotations.
        shape: shape coefficients.

    Returns:
        (Nv, 3) pelvis-local vertex positions. The rest pose returns
        the shaped template verbatim.
    """
    if pose.theta.shape[0] != skeleton.num_joints:
        raise ValueError("pose joint count mismatch")
    shaped = shaped_vertices(template, shape)
    if not np.any(pose.theta):
        # All joint transforms are the identity; skip the blend so the
        # rest pose reproduces the template bitwise.
        return shaped.copy()
    rest_joints = template.joint_regressor @ shaped
    world_r, world_t = joint_transforms(skeleton, pose.theta, rest_joints)
    out = np.zeros_like(shaped)
    for j in range(skeleton.num_joints):
        col = template.skin_weights[:, j]
        active = col > 0
        if not np.any(active):
            continue
        local = shaped[active] - rest_joints[j]
        out[active] += col[active, None] * (local @ world_r[j].T + world_t[j])
    return out


def skin_mesh_batch(skeleton: Skeleton, template: BodyTemplate,
                    thetas: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Vectorized skinning for a batch of parameter samples.

    Args:
        thetas: (S, J, 3) axis-angle stacks.
        betas: (S, B) shape coefficient stacks.

    Returns:
        (S, Nv, 3) pelvis-local meshes.
    """
    thetas = np.asarray(thetas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    n_samples = thetas.shape[0]
    n_joints = skeleton.num_joints
    shaped = template.vertices[None] + np.einsum("vcb,sb->svc", template.shape_dirs, betas)
    rest_joints = np.einsum("jv,svc->sjc", template.joint_regressor, shaped)

    rots = rodrigues_batch(thetas)
    world_r = np.zeros((n_samples, n_joints, 3, 3))
    world_t = np.zeros((n_samples, n_joints, 3))
    world_r[:, 0] = rots[:, 0]
    for j in range(1, n_joints):
        p = skeleton.parents[j]
        offset = rest_joints[:, j] - rest_joints[:, p]
        world_r[:, j] = world_r[:, p] @ rots[:, j]
        world_t[:, j] = np.einsum("sab,sb->sa", world_r[:, p], offset) + world_t[:, p]

    out = np.zeros_like(shaped)
    for j in range(n_joints):
        col = template.skin_weights[:, j]
        active = np.where(col > 0)[0]
        if active.size == 0:
            continue
        local = shaped[:, active] - rest_joints[:, j, None, :]
        moved = np.einsum("sab,svb->sva", world_r[:, j], local) + world_t[:, j, None, :]
        out[:, active] += col[active, None] * moved
    return out


def world_mesh(local_vertices: np.ndarray, global_pose: GlobalPose) -> np.ndarray:
    """Maps pelvis-local vertices into the world frame."""
    return local_vertices @ global_pose.rotation.T + global_pose.translation


def regress_joints(local_vertices: np.ndarray, template: BodyTemplate,
                   global_pose: GlobalPose) -> np.ndarray:
    """Recovers world-frame joint positions from a posed local mesh."""
    local_joints = template.joint_regressor @ local_vertices
    return local_joints @ global_pose.rotation.T + global_pose.translation


def save_template(path, skeleton: Skeleton, template: BodyTemplate) -> None:
    """Writes skeleton and template to a versioned JSON file."""
    payload = {
        "format": _TEMPLATE_FORMAT,
        "joint_names": list(skeleton.joint_names),
        "parents": skeleton.parents.tolist(),
        "rest_offsets": skeleton.rest_offsets.tolist(),
        "vertices": template.vertices.tolist(),
        "faces": template.faces.tolist(),
        "skin_weights": template.skin_weights.tolist(),
        "joint_regressor": template.joint_regressor.tolist(),
        "shape_dirs": template.shape_dirs.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_template(path) -> tuple:
    """Reads a template file written by save_template.

    Returns:
        (Skeleton, BodyTemplate) pair.

    Raises:
        ValueError: on unknown format version or invariant violation.
    """
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != _TEMPLATE_FORMAT:
        raise ValueError(f"unsupported template format: {payload.get('format')!r}")
    skeleton = Skeleton(
        tuple(payload["joint_names"]),
        np.array(payload["parents"], dtype=int),
        np.array(payload["rest_offsets"], dtype=float),
    )
    template = BodyTemplate(
        vertices=np.array(payload["vertices"], dtype=float),
        faces=np.array(payload["faces"], dtype=int),
        skin_weights=np.array(payload["skin_weights"], dtype=float),
        joint_regressor=np.array(payload["joint_regressor"], dtype=float),
        shape_dirs=np.array(payload["shape_dirs"], dtype=float),
    )
    validate_template(skeleton, template)
    return skeleton, template
