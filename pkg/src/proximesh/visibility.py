"""Pinhole camera projection and mesh self-occlusion visibility.

Visibility is decided by a full-resolution z-buffer: a vertex counts as
visible when it projects inside the image and no rasterized face sits
more than eps_z in front of it at its pixel. An exact per-vertex
ray-cast oracle implements the same definition without rasterization
and is used to cross-check the z-buffer on random scenes.

Faces touching the near plane are excluded as occluders by both routes,
so the two implementations share one geometric definition and differ
only in discretization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import is_rotation

# Points closer than this to the camera plane are not projectable.
Z_NEAR = 1e-6

# Depth slack for the front-most test; ties resolve toward visible.
DEFAULT_EPS_Z = 1e-4


@dataclass
class Camera:
    """Pinhole camera with square pixels and centered principal point.

    Attributes:
        rotation: (3, 3) matrix whose columns are the camera axes in
            world coordinates: x right, y down, z forward.
        translation: (3,) camera center in world coordinates.
        focal: focal length in pixels.
        width: image width in pixels.
        height: image height in pixels.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    focal: float = 2200.0
    width: int = 1920
    height: int = 1080

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if not is_rotation(self.rotation, tol=1e-6):
            raise ValueError("camera rotation must be orthonormal with determinant +1")
        if self.translation.shape != (3,) or not np.all(np.isfinite(self.translation)):
            raise ValueError("camera translation must be a finite 3-vector")
        if self.focal <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("focal length and image size must be positive")

    @property
    def principal_point(self) -> tuple:
        return (self.width / 2.0, self.height / 2.0)


@dataclass
class VisibilityMask:
    """Per-vertex visibility classification for one camera.

    Attributes:
        visible: (Nv,) bool, projects in-image and is front-most.
        occluded: (Nv,) bool, projects in-image but a nearer surface
            covers it. Out-of-image vertices are neither.
        pixels: (Nv, 2) projected pixel coordinates, NaN when the
            vertex is behind the camera.
        depths: (Nv,) camera-frame depth.
        degenerate_faces: count of zero-area faces skipped.
        clipped_faces: count of faces touching the near plane, skipped
            as occluders.
    """

    visible: np.ndarray
    occluded: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray
    degenerate_faces: int = 0
    clipped_faces: int = 0


def camera_frame(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Transforms world points into the camera frame, (N, 3)."""
    return (np.asarray(points, dtype=float) - camera.translation) @ camera.rotation


def project_points(points: np.ndarray, camera: Camera) -> tuple:
    """Projects world points through the pinhole model.

    Points behind the camera are flagged by NaN pixel coordinates,
    never by an exception.

    Args:
        points: (N, 3) world positions.

    Returns:
        (pixels (N, 2), depths (N,)) where depth is camera-frame z.
    """
    cam_pts = camera_frame(points, camera)
    depths = cam_pts[:, 2]
    cx, cy = camera.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        px = cx + camera.focal * cam_pts[:, 0] / depths
        py = cy + camera.focal * cam_pts[:, 1] / depths
    pixels = np.stack([px, py], axis=1)
    pixels[depths <= Z_NEAR] = np.nan
    return pixels, depths


def project(point: np.ndarray, camera: Camera) -> tuple:
    """Single-point projection, returns (x, y, depth)."""
    pixels, depths = project_points(np.asarray(point, dtype=float)[None], camera)
    return float(pixels[0, 0]), float(pixels[0, 1]), float(depths[0])


def in_image(pixels: np.ndarray, camera: Camera) -> np.ndarray:
    """Boundary-inclusive containment test for projected pixels."""
    x, y = pixels[:, 0], pixels[:, 1]
    with np.errstate(invalid="ignore"):
        return (x >= 0.0) & (x <= camera.width) & (y >= 0.0) & (y <= camera.height)


@njit(cache=True)
def _rasterize(face_px: np.ndarray, face_depth: np.ndarray, usable: np.ndarray,
               width: int, height: int, zbuf: np.ndarray) -> int:
    """Fills zbuf with per-pixel minimum depth; returns degenerate count."""
    degenerate = 0
    for f in range(face_px.shape[0]):
        if not usable[f]:
            continue
        x0, y0 = face_px[f, 0, 0], face_px[f, 0, 1]
        x1, y1 = face_px[f, 1, 0], face_px[f, 1, 1]
        x2, y2 = face_px[f, 2, 0], face_px[f, 2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            degenerate += 1
            continue
        xmin = int(np.floor(min(x0, min(x1, x2))))
        xmax = int(np.ceil(max(x0, max(x1, x2))))
        ymin = int(np.floor(min(y0, min(y1, y2))))
        ymax = int(np.ceil(max(y0, max(y1, y2))))
        if xmin < 0:
            xmin = 0
        if ymin < 0:
            ymin = 0
        if xmax > width - 1:
            xmax = width - 1
        if ymax > height - 1:
            ymax = height - 1
        z0, z1, z2 = face_depth[f, 0], face_depth[f, 1], face_depth[f, 2]
        inv_area = 1.0 / area
        for iy in range(ymin, ymax + 1):
            py = iy + 0.5
            for ix in range(xmin, xmax + 1):
                px = ix + 0.5
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) * inv_area
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < -1e-9 or w1 < -1e-9 or w2 < -1e-9:
                    continue
                z = w0 * z0 + w1 * z1 + w2 * z2
                if z < zbuf[iy, ix]:
                    zbuf[iy, ix] = z
    return degenerate


@njit(cache=True)
def _raycast_depths(cam_verts: np.ndarray, faces: np.ndarray,
                    usable: np.ndarray) -> np.ndarray:
    """Nearest surface depth along each vertex ray, camera frame.

    Uses Moller-Trumbore intersection against every usable face. The
    returned value is the camera-z of the closest hit, or +inf when the
    ray misses everything.
    """
    n = cam_verts.shape[0]
    out = np.full(n, np.inf)
    for v in range(n):
        vz = cam_verts[v, 2]
        if vz <= Z_NEAR:
            continue
        norm = np.sqrt(cam_verts[v, 0] ** 2 + cam_verts[v, 1] ** 2 + vz ** 2)
        dx = cam_verts[v, 0] / norm
        dy = cam_verts[v, 1] / norm
        dz = vz / norm
        best = np.inf
        for f in range(faces.shape[0]):
            if not usable[f]:
                continue
            a = faces[f, 0]
            b = faces[f, 1]
            c = faces[f, 2]
            e1x = cam_verts[b, 0] - cam_verts[a, 0]
            e1y = cam_verts[b, 1] - cam_verts[a, 1]
            e1z = cam_verts[b, 2] - cam_verts[a, 2]
            e2x = cam_verts[c, 0] - cam_verts[a, 0]
            e2y = cam_verts[c, 1] - cam_verts[a, 1]
            e2z = cam_verts[c, 2] - cam_verts[a, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) < 1e-14:
                continue
            inv_det = 1.0 / det
            tx = -cam_verts[a, 0]
            ty = -cam_verts[a, 1]
            tz = -cam_verts[a, 2]
            u = (tx * px + ty * py + tz * pz) * inv_det
            if u < -1e-9 or u > 1.0 + 1e-9:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            w = (dx * qx + dy * qy + dz * qz) * inv_det
            if w < -1e-9 or u + w > 1.0 + 1e-9:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
            if t <= 1e-9:
                continue
            zhit = t * dz
            if zhit < best:
                best = zhit
        out[v] = best
    return out


def _usable_faces(cam_verts: np.ndarray, faces: np.ndarray) -> tuple:
    """Occluder eligibility: all three corners in front of the near plane."""
    in_front = cam_verts[:, 2] > Z_NEAR
    usable = in_front[faces].all(axis=1)
    clipped = int(faces.shape[0] - usable.sum())
    return usable, clipped


def zbuffer_visibility(vertices: np.ndarray, faces: np.ndarray, camera: Camera,
                       eps_z: float = DEFAULT_EPS_Z) -> VisibilityMask:
    """Classifies vertex visibility with a full-resolution z-buffer.

    Args:
        vertices: (Nv, 3) world positions.
        faces: (F, 3) int triangle indices.
        camera: viewing camera.
        eps_z: depth slack in meters; a vertex within eps_z of the
            front surface at its pixel counts as visible.

    Returns:
        VisibilityMask over the vertices.
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    cam_verts = camera_frame(vertices, camera)
    pixels, depths = project_points(vertices, camera)
    inside = in_image(pixels, camera)

    usable, clipped = _usable_faces(cam_verts, faces)
    face_px = np.zeros((faces.shape[0], 3, 2))
    face_z = np.zeros((faces.shape[0], 3))
    if np.any(usable):
        face_px[usable] = pixels[faces[usable]]
        face_z[usable] = depths[faces[usable]]

    zbuf = np.full((camera.height, camera.width), np.inf)
    degenerate = _rasterize(face_px, face_z, usable, camera.width, camera.height, zbuf)

    ix = np.clip(np.floor(np.nan_to_num(pixels[:, 0], nan=-1.0)).astype(int), 0, camera.width - 1)
    iy = np.clip(np.floor(np.nan_to_num(pixels[:, 1], nan=-1.0)).astype(int), 0, camera.height - 1)
    front = depths <= zbuf[iy, ix] + eps_z
    visible = inside & front
    occluded = inside & ~front
    return VisibilityMask(
        visible=visible,
        occluded=occluded,
        pixels=pixels,
        depths=depths,
        degenerate_faces=int(degenerate),
        clipped_faces=clipped,
    )


def raycast_visibility_oracle(vertices: np.ndarray, faces: np.ndarray, camera: Camera,
                              eps_z: float = DEFAULT_EPS_Z) -> VisibilityMask:
    """Ray-cast implementation of the same visibility definition.

    Casts the exact ray through every vertex and intersects it with
    every eligible face, so there is no pixel discretization. Intended
    as a cross-check oracle for zbuffer_visibility.
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    cam_verts = camera_frame(vertices, camera)
    pixels, depths = project_points(vertices, camera)
    inside = in_image(pixels, camera)

    usable, clipped = _usable_faces(cam_verts, faces)
    areas = np.linalg.norm(
        np.cross(
            vertices[faces[:, 1]] - vertices[faces[:, 0]],
            vertices[faces[:, 2]] - vertices[faces[:, 0]],
        ),
        axis=1,
    )
    degenerate = int(np.sum(usable & (areas < 1e-12)))
    usable = usable & (areas >= 1e-12)

    nearest = _raycast_depths(cam_verts, faces, usable)
    front = depths <= nearest + eps_z
    visible = inside & front
    occluded = inside & ~front
    return VisibilityMask(
        visible=visible,
        occluded=occluded,
        pixels=pixels,
        depths=depths,
        degenerate_faces=degenerate,
        clipped_faces=clipped,
    )


def silhouette_adjacent(vertices: np.ndarray, faces: np.ndarray, camera: Camera,
                        border_margin: float = 2.0,
                        depth_edge: float = 0.02,
                        margin_band: float = 0.01,
                        eps_z: float = DEFAULT_EPS_Z) -> np.ndarray:
    """Marks vertices whose visibility is discretization-sensitive.

    A vertex qualifies when it lies on an occluding contour (incident
    to both camera-facing and averted faces), touches a face skipped by
    the near-plane rule, projects within border_margin pixels of the
    image edge, sits on a depth discontinuity of the rasterized buffer
    larger than depth_edge meters, or is occluded by less than
    margin_band in its pixel neighbourhood. The last case covers
    grazing surfaces where half a pixel of parallax flips the
    front-most test either way.

    Returns:
        (Nv,) bool exclusion mask.
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    cam_verts = camera_frame(vertices, camera)
    pixels, depths = project_points(vertices, camera)

    tri = cam_verts[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centers = tri.mean(axis=1)
    facing = np.einsum("fc,fc->f", normals, centers) < 0.0

    nv = vertices.shape[0]
    has_front = np.zeros(nv, dtype=bool)
    has_back = np.zeros(nv, dtype=bool)
    for k in range(3):
        np.logical_or.at(has_front, faces[:, k], facing)
        np.logical_or.at(has_back, faces[:, k], ~facing)
    contour = has_front & has_back

    usable, _ = _usable_faces(cam_verts, faces)
    near_clip = np.zeros(nv, dtype=bool)
    for k in range(3):
        np.logical_or.at(near_clip, faces[:, k], ~usable)

    # Near the frame boundary on either side; far outside the frame is
    # a trivial agreement case and stays in the comparison set.
    with np.errstate(invalid="ignore"):
        m = border_margin
        w, h = camera.width, camera.height
        x, y = pixels[:, 0], pixels[:, 1]
        border = (
            (np.abs(x) < m) | (np.abs(x - w) < m) | (np.abs(y) < m) | (np.abs(y - h) < m)
        )
    border &= np.isfinite(pixels[:, 0])

    # Depth-discontinuity test on the rasterized buffer.
    face_px = np.zeros((faces.shape[0], 3, 2))
    face_z = np.zeros((faces.shape[0], 3))
    if np.any(usable):
        face_px[usable] = pixels[faces[usable]]
        face_z[usable] = depths[faces[usable]]
    zbuf = np.full((camera.height, camera.width), np.inf)
    _rasterize(face_px, face_z, usable, camera.width, camera.height, zbuf)

    edge = np.zeros(nv, dtype=bool)
    with np.errstate(invalid="ignore"):
        testable = (
            np.isfinite(pixels[:, 0])
            & np.isfinite(pixels[:, 1])
            & (pixels[:, 0] >= 1.0)
            & (pixels[:, 0] < camera.width - 1.0)
            & (pixels[:, 1] >= 1.0)
            & (pixels[:, 1] < camera.height - 1.0)
        )
    ix = np.clip(np.floor(np.nan_to_num(pixels[:, 0], nan=1.0)).astype(int), 1, camera.width - 2)
    iy = np.clip(np.floor(np.nan_to_num(pixels[:, 1], nan=1.0)).astype(int), 1, camera.height - 2)
    for v in np.where(testable)[0]:
        patch = zbuf[iy[v] - 1:iy[v] + 2, ix[v] - 1:ix[v] + 2]
        finite = patch[np.isfinite(patch)]
        if finite.size < 9 or finite.max() - finite.min() > depth_edge:
            edge[v] = True
            continue
        occlusion = depths[v] - finite.min()
        if eps_z < occlusion <= margin_band:
            edge[v] = True

    return contour | near_clip | border | edge
