"""Tests for touch probing, range scanning and the leg filter."""

import numpy as np

from proximesh.body import GlobalPose, PoseParams, ShapeParams, skin_mesh, world_mesh
from proximesh.sensors import (
    LidarScan,
    filter_leg_returns,
    sample_touch,
    scan_lidar_slice,
)


def _wall(x, half_width, z_lo, z_hi):
    """Vertical quad in the plane of constant x, as two triangles."""
    verts = np.array([
        [x, -half_width, z_lo],
        [x, half_width, z_lo],
        [x, half_width, z_hi],
        [x, -half_width, z_hi],
    ])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return verts, faces


class TestTouch:
    def test_zero_noise_returns_the_vertex(self):
        verts = np.array([[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]])
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(sample_touch(verts, 1, rng, sigma=0.0),
                                      verts[1])

    def test_noise_scale(self):
        verts = np.zeros((1, 3))
        rng = np.random.default_rng(2)
        samples = np.array([sample_touch(verts, 0, rng, sigma=0.02)
                            for _ in range(10000)])
        std = samples.std(axis=0)
        np.testing.assert_allclose(std, 0.02, rtol=0.05)

    def test_deterministic_per_seed(self):
        verts = np.array([[0.3, 0.0, 1.0]])
        a = sample_touch(verts, 0, np.random.default_rng(9))
        b = sample_touch(verts, 0, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)


class TestScanGeometry:
    """Noise-free ranges against a flat wall, worked out by hand."""

    def test_perpendicular_and_oblique_ranges(self):
        verts, faces = _wall(2.0, 5.0, 0.0, 1.0)
        scan = scan_lidar_slice(verts, faces, np.array([0.0, 0.0, 0.3]), 0.0,
                                rng=None)
        # 181 beams over pi: index 90 is straight ahead, 1 deg steps.
        np.testing.assert_allclose(scan.ranges[90], 2.0, atol=1e-9)
        np.testing.assert_allclose(scan.ranges[135], 2.0 * np.sqrt(2.0),
                                   atol=1e-9)
        np.testing.assert_allclose(scan.ranges[150], 4.0, atol=1e-9)

    def test_parallel_and_out_of_window_beams_miss(self):
        verts, faces = _wall(2.0, 5.0, 0.0, 1.0)
        scan = scan_lidar_slice(verts, faces, np.array([0.0, 0.0, 0.3]), 0.0,
                                rng=None)
        assert np.isnan(scan.ranges[0])        # parallel to the wall
        assert np.isnan(scan.ranges[180])
        assert np.isnan(scan.ranges[170])      # 2 / cos(80 deg) > max_range

    def test_near_surface_blanks_instead_of_passing_through(self):
        near_v, near_f = _wall(0.005, 1.0, 0.0, 1.0)
        far_v, far_f = _wall(1.0, 1.0, 0.0, 1.0)
        verts = np.vstack([near_v, far_v])
        faces = np.vstack([near_f, far_f + 4])
        scan = scan_lidar_slice(verts, faces, np.array([0.0, 0.0, 0.3]), 0.0,
                                rng=None)
        assert np.isnan(scan.ranges[90])
        alone = scan_lidar_slice(far_v, far_f, np.array([0.0, 0.0, 0.3]), 0.0,
                                 rng=None)
        np.testing.assert_allclose(alone.ranges[90], 1.0, atol=1e-9)

    def test_returns_stay_inside_the_sensing_window(self):
        verts, faces = _wall(1.5, 5.0, 0.0, 1.0)
        scan = scan_lidar_slice(verts, faces, np.array([0.0, 0.0, 0.3]), 0.0,
                                sigma_range=0.05, rng=np.random.default_rng(4))
        kept = scan.ranges[scan.valid()]
        assert kept.size
        assert np.all(kept >= scan.min_range)
        assert np.all(kept <= scan.max_range)

    def test_noise_is_radial(self):
        verts, faces = _wall(1.5, 5.0, 0.0, 1.0)
        scan = scan_lidar_slice(verts, faces, np.array([0.2, -0.1, 0.3]), 0.0,
                                rng=np.random.default_rng(5))
        points = scan.points()
        offsets = points - scan.origin
        dirs = scan.directions()[scan.valid()]
        cross = np.cross(offsets, dirs)
        assert np.abs(cross).max() < 1e-12
        assert np.all(points[:, 2] == scan.origin[2])

    def test_deterministic_per_seed(self):
        verts, faces = _wall(1.5, 5.0, 0.0, 1.0)
        origin = np.array([0.0, 0.0, 0.3])
        a = scan_lidar_slice(verts, faces, origin, 0.1,
                             rng=np.random.default_rng(7))
        b = scan_lidar_slice(verts, faces, origin, 0.1,
                             rng=np.random.default_rng(7))
        np.testing.assert_array_equal(a.ranges, b.ranges)


class TestLegFilter:
    def test_standing_body_yields_two_leg_clusters(self, body):
        skeleton, template = body
        gp = GlobalPose(np.eye(3), np.array([0.0, 0.0, 0.95]))
        verts = world_mesh(
            skin_mesh(skeleton, template, PoseParams(np.zeros((16, 3))),
                      ShapeParams(np.zeros(4))), gp)
        scan = scan_lidar_slice(verts, template.faces,
                                np.array([1.2, 0.0, 0.3]), np.pi, rng=None)
        clusters = filter_leg_returns(scan)
        assert len(clusters) == 2
        centroids = sorted((c.mean(axis=0) for c in clusters),
                           key=lambda p: p[1])
        np.testing.assert_allclose(centroids[0], [0.0, -0.10, 0.30], atol=0.08)
        np.testing.assert_allclose(centroids[1], [0.0, 0.10, 0.30], atol=0.08)

    def test_wide_surface_is_rejected(self):
        verts, faces = _wall(0.0, 0.5, 0.0, 1.0)
        scan = scan_lidar_slice(verts, faces, np.array([1.2, 0.0, 0.3]), np.pi,
                                rng=None)
        assert scan.valid().any()
        assert filter_leg_returns(scan) == []

    def test_far_returns_fall_outside_the_band(self):
        verts, faces = _wall(0.0, 0.1, 0.0, 1.0)
        scan = scan_lidar_slice(verts, faces, np.array([3.2, 0.0, 0.3]), np.pi,
                                rng=None)
        assert scan.valid().any()
        assert filter_leg_returns(scan) == []

    def test_empty_scan_yields_no_clusters(self):
        scan = LidarScan(np.zeros(3), np.linspace(0, np.pi, 5),
                         np.full(5, np.nan))
        assert filter_leg_returns(scan) == []
