"""Simulated contact and range sensing against the true mesh.

Touch probing returns a noisy copy of a chosen surface vertex. The
range sensor casts a horizontal fan of rays from a mast-mounted scanner
and reports first-hit distances; a cluster filter keeps only thin,
close returns so leg surfaces survive while walls and furniture drop
out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_RAY_EPS = 1e-12


def sample_touch(vertices: np.ndarray, index: int, rng: np.random.Generator,
                 sigma: float = 0.02) -> np.ndarray:
    """Noisy contact measurement of one surface vertex.

    Args:
        vertices: (Nv, 3) true world mesh.
        index: probed vertex.
        sigma: isotropic position noise std (m).

    Returns:
        (3,) measured contact point.
    """
    return vertices[index] + sigma * rng.standard_normal(3)


@dataclass
class LidarScan:
    """One horizontal sweep of the range sensor.

    Attributes:
        origin: (3,) sensor position; the scan plane is z = origin[2].
        angles: (B,) world yaw of each beam (rad).
        ranges: (B,) measured distance (m), NaN where the beam returned
            nothing.
        min_range: dead-zone radius; a nearer surface blanks the beam.
        max_range: sensing horizon.
    """

    origin: np.ndarray
    angles: np.ndarray
    ranges: np.ndarray
    min_range: float = 0.01
    max_range: float = 5.0

    def valid(self) -> np.ndarray:
        """(B,) mask of beams with a return."""
        return np.isfinite(self.ranges)

    def directions(self) -> np.ndarray:
        """(B, 3) unit beam directions in the scan plane."""
        return np.stack([np.cos(self.angles), np.sin(self.angles),
                         np.zeros_like(self.angles)], axis=1)

    def points(self) -> np.ndarray:
        """(M, 3) world hit points of the valid beams."""
        keep = self.valid()
        return self.origin + self.ranges[keep, None] * self.directions()[keep]


def _first_hit_distances(origin: np.ndarray, dirs: np.ndarray,
                         vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Nearest ray-triangle intersection per beam, inf where none.

    Moeller-Trumbore over all (beam, face) pairs at once; hits behind
    the origin or on parallel rays are discarded.
    """
    v0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - v0
    e2 = vertices[faces[:, 2]] - v0
    s = origin - v0
    q = np.cross(s, e1)
    h = np.cross(dirs[:, None, :], e2[None])
    a = np.einsum("fc,bfc->bf", e1, h)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / a
        u = inv * np.einsum("fc,bfc->bf", s, h)
        v = inv * np.einsum("bc,fc->bf", dirs, q)
        t = inv * np.einsum("fc,fc->f", e2, q)[None]
    hit = (np.abs(a) > _RAY_EPS) & (u >= -_RAY_EPS) & (v >= -_RAY_EPS) \
        & (u + v <= 1.0 + _RAY_EPS) & (t > 1e-9)
    t = np.where(hit, t, np.inf)
    return t.min(axis=1)


def scan_lidar_slice(vertices: np.ndarray, faces: np.ndarray,
                     origin: np.ndarray, yaw: float, *,
                     fov: float = np.pi, n_beams: int = 181,
                     min_range: float = 0.01, max_range: float = 5.0,
                     sigma_range: float = 0.01,
                     rng: np.random.Generator | None = None) -> LidarScan:
    """Cast a horizontal fan of rays and return noisy first hits.

    Beams span ``yaw +- fov / 2``. A surface inside ``min_range``
    blanks the beam instead of being skipped, and hits beyond
    ``max_range`` are dropped; radial noise is applied to the surviving
    returns and clipped into the sensing window.

    Args:
        vertices: (Nv, 3) scene mesh in world coordinates.
        faces: (F, 3) triangle indices.
        origin: (3,) sensor position, scan plane at its height.
        yaw: central beam heading (rad, world frame).
        rng: noise source; None means a noise-free sweep.

    Returns:
        LidarScan with one entry per beam.
    """
    origin = np.asarray(origin, dtype=float)
    angles = yaw + np.linspace(-fov / 2.0, fov / 2.0, n_beams)
    dirs = np.stack([np.cos(angles), np.sin(angles), np.zeros(n_beams)], axis=1)
    dist = _first_hit_distances(origin, dirs, vertices, faces)
    ranges = np.where((dist >= min_range) & (dist <= max_range), dist, np.nan)
    if rng is not None and sigma_range > 0.0:
        keep = np.isfinite(ranges)
        noise = sigma_range * rng.standard_normal(n_beams)
        ranges[keep] = np.clip(ranges[keep] + noise[keep], min_range, max_range)
    return LidarScan(origin, angles, ranges, min_range, max_range)


def filter_leg_returns(scan: LidarScan, *,
                       range_band: tuple[float, float] = (0.1, 2.5),
                       max_diameter: float = 0.25,
                       gap: float = 0.08,
                       min_points: int = 2) -> list[np.ndarray]:
    """Clusters of returns thin enough to be legs.

    Returns inside ``range_band`` are grouped over consecutive beams;
    a jump larger than ``gap`` between neighbouring hit points, or any
    beam without a return, starts a new cluster. Clusters with fewer
    than ``min_points`` points or a diameter above ``max_diameter``
    are discarded, which removes walls and draped furniture.

    Returns:
        List of (M_i, 3) world-point arrays, in beam order.
    """
    in_band = scan.valid() & (scan.ranges >= range_band[0]) \
        & (scan.ranges <= range_band[1])
    dirs = scan.directions()
    points = scan.origin + np.where(in_band, scan.ranges, 0.0)[:, None] * dirs

    clusters: list[np.ndarray] = []
    run: list[int] = []

    def flush():
        if len(run) >= min_points:
            pts = points[run]
            diff = pts[:, None, :] - pts[None, :, :]
            diameter = float(np.sqrt((diff ** 2).sum(-1).max()))
            if diameter <= max_diameter:
                clusters.append(pts)
        run.clear()

    for b in range(scan.angles.shape[0]):
        if not in_band[b]:
            flush()
            continue
        if run and np.linalg.norm(points[b] - points[run[-1]]) > gap:
            flush()
        run.append(b)
    flush()
    return clusters
