"""Serial kinematic chains for sensor placement.

A chain is a fixed base position followed by revolute and prismatic
joints, each with a local axis, a fixed origin offset from the previous
frame, and position limits. The tool point is a fixed offset in the
last joint frame. Placement requests are position-only: reach IK drives
the tool point to a world target with damped least squares and reports
failure as a result, never as an exception.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import rodrigues_batch

_CHAIN_FORMAT = "proximesh-chain/1"

# Fixed restart entropy keeps planning runs reproducible end to end.
_RESTART_SEED = 715517

_JOINT_KINDS = ("revolute", "prismatic")


@dataclass(frozen=True)
class Joint:
    """One degree of freedom in a serial chain.

    Attributes:
        name: identifier unique within the chain.
        kind: "revolute" (rad about ``axis``) or "prismatic" (m along
            ``axis``).
        axis: (3,) unit axis in the local joint frame.
        origin: (3,) fixed offset from the previous frame, applied
            before the joint motion.
        limits: (lo, hi) admissible positions, lo < hi.
    """

    name: str
    kind: str
    axis: np.ndarray
    origin: np.ndarray
    limits: tuple[float, float]

    def __post_init__(self):
        if self.kind not in _JOINT_KINDS:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float)
        origin = np.asarray(self.origin, dtype=float)
        if axis.shape != (3,) or origin.shape != (3,):
            raise ValueError("axis and origin must be 3-vectors")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name}: axis must be unit length")
        lo, hi = self.limits
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"joint {self.name}: bad limits {self.limits}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "limits", (float(lo), float(hi)))


@dataclass(frozen=True)
class KinematicChain:
    """Serial chain with a fixed world base and a tool point.

    Attributes:
        name: chain identifier used in reports.
        joints: tuple of Joint, base to tip.
        tool_offset: (3,) tool point in the last joint frame.
        base: (3,) world position of the first joint frame.
    """

    name: str
    joints: tuple[Joint, ...]
    tool_offset: np.ndarray
    base: np.ndarray

    def __post_init__(self):
        tool = np.asarray(self.tool_offset, dtype=float)
        base = np.asarray(self.base, dtype=float)
        if tool.shape != (3,) or base.shape != (3,):
            raise ValueError("tool_offset and base must be 3-vectors")
        if not self.joints:
            raise ValueError("chain needs at least one joint")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ValueError("joint names must be unique")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "tool_offset", tool)
        object.__setattr__(self, "base", base)

    @property
    def num_dof(self) -> int:
        return len(self.joints)

    def limit_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper limits as (N,) arrays."""
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        return lo, hi

    def clip(self, q: np.ndarray) -> np.ndarray:
        """Configuration clipped into the limit box, (N,)."""
        lo, hi = self.limit_arrays()
        return np.clip(np.asarray(q, dtype=float), lo, hi)

    def contains(self, q: np.ndarray, tol: float = 1e-9) -> bool:
        """Whether q lies within limits up to tol."""
        q = np.asarray(q, dtype=float)
        lo, hi = self.limit_arrays()
        return bool(np.all(q >= lo - tol) and np.all(q <= hi + tol))

    def max_reach(self) -> float:
        """Conservative radius of the reachable set around the base.

        Sums every link offset, the largest travel of each prismatic
        joint and the tool offset, so no tool position can lie farther
        from the base than this.
        """
        reach = float(np.linalg.norm(self.tool_offset))
        for joint in self.joints:
            reach += float(np.linalg.norm(joint.origin))
            if joint.kind == "prismatic":
                reach += max(abs(joint.limits[0]), abs(joint.limits[1]))
        return reach


def _check_q(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.num_dof,):
        raise ValueError(f"expected q of shape ({chain.num_dof},), got {q.shape}")
    if not chain.contains(q):
        raise ValueError("configuration violates joint limits")
    return q


def _chain_arrays(chain: KinematicChain):
    """Static (axes (N, 3), origins (N, 3), revolute (N,)) arrays."""
    axes = np.stack([j.axis for j in chain.joints])
    origins = np.stack([j.origin for j in chain.joints])
    revolute = np.array([j.kind == "revolute" for j in chain.joints])
    return axes, origins, revolute


def _frames(chain: KinematicChain, q: np.ndarray, arrays=None):
    """Tool pose plus per-joint world anchors for the Jacobian.

    Returns:
        (R_tool (3, 3), tool (3,), origins (N, 3), axes (N, 3)) where
        origins[i] is the world point the i-th joint acts at and
        axes[i] its world axis.
    """
    if arrays is None:
        arrays = _chain_arrays(chain)
    local_axes, local_origins, revolute = arrays
    spin = rodrigues_batch(local_axes * np.where(revolute, q, 0.0)[:, None])
    rot = np.eye(3)
    pos = chain.base.copy()
    origins = np.empty((chain.num_dof, 3))
    axes = np.empty((chain.num_dof, 3))
    for i in range(chain.num_dof):
        pos = pos + rot @ local_origins[i]
        axis = rot @ local_axes[i]
        origins[i] = pos
        axes[i] = axis
        if revolute[i]:
            rot = rot @ spin[i]
        else:
            pos = pos + axis * q[i]
    tool = pos + rot @ chain.tool_offset
    return rot, tool, origins, axes


def fk(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """World tool position for configuration q, (3,).

    Raises:
        ValueError: if q has the wrong shape or violates limits.
    """
    q = _check_q(chain, q)
    return _frames(chain, q)[1]


def fk_pose(chain: KinematicChain, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World tool rotation and position, ((3, 3), (3,))."""
    q = _check_q(chain, q)
    rot, tool, _, _ = _frames(chain, q)
    return rot, tool


def jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """Geometric position Jacobian d tool / d q, (3, N)."""
    q = _check_q(chain, q)
    _, tool, origins, axes = _frames(chain, q)
    cols = np.empty((chain.num_dof, 3))
    for i, joint in enumerate(chain.joints):
        if joint.kind == "revolute":
            cols[i] = np.cross(axes[i], tool - origins[i])
        else:
            cols[i] = axes[i]
    return cols.T


@dataclass(frozen=True)
class IkResult:
    """Outcome of a reach request.

    Attributes:
        q: (N,) best configuration found, within limits.
        position: (3,) tool position at q.
        residual: distance to the target (m).
        iterations: solver iterations spent on the reported q.
        restarts_used: restarts consumed, including the reported one.
        success: whether residual <= tol and clearance holds.
        reason: "" on success, else "unreachable", "no_converge" or
            "clearance".
    """

    q: np.ndarray
    position: np.ndarray
    residual: float
    iterations: int
    restarts_used: int
    success: bool
    reason: str


def _descend(chain, q0, target, tol, damping, max_iters):
    """Damped least squares from q0, clipping into limits each step."""
    arrays = _chain_arrays(chain)
    revolute = arrays[2]
    lo, hi = chain.limit_arrays()
    q = np.clip(np.asarray(q0, dtype=float), lo, hi)
    damp = damping * damping * np.eye(3)
    iterations = 0
    for iterations in range(max_iters + 1):
        _, tool, origins, axes = _frames(chain, q, arrays)
        resid = target - tool
        res = float(np.linalg.norm(resid))
        if res <= tol or iterations == max_iters:
            return q, tool, res, iterations
        jac = np.where(revolute[:, None],
                       np.cross(axes, tool - origins), axes).T
        step = jac.T @ np.linalg.solve(jac @ jac.T + damp, resid)
        if float(np.linalg.norm(step)) < 1e-12:
            return q, tool, res, iterations
        q = np.clip(q + step, lo, hi)
    return q, tool, res, iterations


def ik_reach(chain: KinematicChain, target: np.ndarray,
             committed: np.ndarray | tuple = (), *,
             tol: float = 0.01, clearance: float = 0.10,
             damping: float = 0.05, max_iters: int = 200,
             restarts: int = 8) -> IkResult:
    """Drive the tool point to a world target.

    Runs damped least squares from the limit midpoint and then from
    uniformly drawn configurations with a fixed seed per restart, so
    the result is deterministic. A converged configuration is accepted
    only if the tool clears every committed placement by ``clearance``;
    the default is roughly a sensor-body diameter, so two placements
    cannot occupy the same spot on the subject.

    Args:
        target: (3,) world point.
        committed: (M, 3) placements (earlier sensors, the camera) the
            tool must keep ``clearance`` metres from.
        tol: success threshold on the tool-to-target distance (m).

    Returns:
        IkResult; failure is reported in the result, not raised.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (3,):
        raise ValueError("target must be a 3-vector")
    committed = np.asarray(committed, dtype=float).reshape(-1, 3)
    lo, hi = chain.limit_arrays()
    midpoint = 0.5 * (lo + hi)

    if float(np.linalg.norm(target - chain.base)) > chain.max_reach():
        tool = fk(chain, midpoint)
        res = float(np.linalg.norm(target - tool))
        return IkResult(midpoint, tool, res, 0, 0, False, "unreachable")

    # Any tool within tol of such a target would sit inside the
    # clearance zone of a committed placement, so skip the descent.
    if committed.size and float(
            np.min(np.linalg.norm(committed - target, axis=1))) \
            < clearance - tol:
        tool = fk(chain, midpoint)
        res = float(np.linalg.norm(target - tool))
        return IkResult(midpoint, tool, res, 0, 0, False, "clearance")

    best = None
    clearance_hit = False
    for k in range(restarts):
        if k == 0:
            q0 = midpoint
        else:
            q0 = np.random.default_rng([_RESTART_SEED, k]).uniform(lo, hi)
        q, tool, res, iterations = _descend(chain, q0, target, tol, damping, max_iters)
        if res <= tol:
            if committed.size and float(
                    np.min(np.linalg.norm(committed - tool, axis=1))) < clearance:
                clearance_hit = True
                continue
            return IkResult(q, tool, res, iterations, k + 1, True, "")
        if best is None or res < best[2]:
            best = (q, tool, res, iterations)
    if best is None:
        tool = fk(chain, midpoint)
        best = (midpoint, tool, float(np.linalg.norm(target - tool)), 0)
    reason = "clearance" if clearance_hit else "no_converge"
    q, tool, res, iterations = best
    return IkResult(q, tool, res, iterations, restarts, False, reason)


def touch_probe_chain(base: np.ndarray | None = None) -> KinematicChain:
    """Mobile cart with a pitch-pitch-pitch arm and a contact probe.

    The planar base travels +-3 m and yaws freely; the arm column puts
    the shoulder at 0.8 m, and the 0.55 + 0.45 m links plus a 0.25 m
    probe cover floor level up to just above standing head height.
    """
    base = np.zeros(3) if base is None else np.asarray(base, dtype=float)
    x, y, z = np.eye(3)
    joints = (
        Joint("base_x", "prismatic", x, np.zeros(3), (-3.0, 3.0)),
        Joint("base_y", "prismatic", y, np.zeros(3), (-3.0, 3.0)),
        Joint("base_yaw", "revolute", z, np.zeros(3), (-np.pi, np.pi)),
        Joint("shoulder", "revolute", y, np.array([0.0, 0.0, 0.8]), (-2.4, 2.4)),
        Joint("elbow", "revolute", y, np.array([0.55, 0.0, 0.0]), (-2.6, 2.6)),
        Joint("wrist", "revolute", y, np.array([0.45, 0.0, 0.0]), (-2.6, 2.6)),
    )
    return KinematicChain("touch_probe", joints, np.array([0.25, 0.0, 0.0]), base)


def lidar_cart_chain(scan_height: float = 0.30,
                     base: np.ndarray | None = None) -> KinematicChain:
    """Mobile cart carrying a horizontally scanning range sensor.

    The sensor sits on a mast at ``scan_height`` with a 0.1 m forward
    stand-off; base yaw points the scan fan. Placement targets must lie
    at the scan height.
    """
    base = np.zeros(3) if base is None else np.asarray(base, dtype=float)
    x, y, z = np.eye(3)
    joints = (
        Joint("base_x", "prismatic", x, np.zeros(3), (-3.0, 3.0)),
        Joint("base_y", "prismatic", y, np.zeros(3), (-3.0, 3.0)),
        Joint("base_yaw", "revolute", z, np.zeros(3), (-np.pi, np.pi)),
    )
    tool = np.array([0.1, 0.0, float(scan_height)])
    return KinematicChain("lidar_cart", joints, tool, base)


def save_chain(path: str | Path, chain: KinematicChain) -> None:
    """Write a chain to versioned JSON."""
    payload = {
        "format": _CHAIN_FORMAT,
        "name": chain.name,
        "joints": [
            {
                "name": j.name,
                "kind": j.kind,
                "axis": j.axis.tolist(),
                "origin": j.origin.tolist(),
                "limits": list(j.limits),
            }
            for j in chain.joints
        ],
        "tool_offset": chain.tool_offset.tolist(),
        "base": chain.base.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_chain(path: str | Path) -> KinematicChain:
    """Read a chain written by save_chain.

    Raises:
        ValueError: on an unknown format tag.
    """
    payload = json.loads(Path(path).read_text())
    fmt = payload.get("format")
    if fmt != _CHAIN_FORMAT:
        raise ValueError(f"unsupported chain format {fmt!r}")
    joints = tuple(
        Joint(j["name"], j["kind"], np.array(j["axis"]), np.array(j["origin"]),
              (j["limits"][0], j["limits"][1]))
        for j in payload["joints"]
    )
    return KinematicChain(payload["name"], joints,
                          np.array(payload["tool_offset"]),
                          np.array(payload["base"]))
