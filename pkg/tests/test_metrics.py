"""Tests for the joint-error metrics."""

import numpy as np
import pytest

from proximesh.geometry import rodrigues
from proximesh.metrics import mpjpe, pa_mpjpe, similarity_align


def _horn_similarity(source, target):
    """Independent similarity fit via the quaternion eigen method."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    x = source - mu_s
    y = target - mu_t
    s = x.T @ y
    trace = np.trace(s)
    delta = np.array([s[1, 2] - s[2, 1], s[2, 0] - s[0, 2],
                      s[0, 1] - s[1, 0]])
    n = np.empty((4, 4))
    n[0, 0] = trace
    n[0, 1:] = delta
    n[1:, 0] = delta
    n[1:, 1:] = s + s.T - trace * np.eye(3)
    values, vectors = np.linalg.eigh(n)
    w, qx, qy, qz = vectors[:, np.argmax(values)]
    rotation = np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - w * qz),
         2 * (qx * qz + w * qy)],
        [2 * (qx * qy + w * qz), 1 - 2 * (qx * qx + qz * qz),
         2 * (qy * qz - w * qx)],
        [2 * (qx * qz - w * qy), 2 * (qy * qz + w * qx),
         1 - 2 * (qx * qx + qy * qy)]])
    scale = float((y * (x @ rotation.T)).sum() / (x * x).sum())
    shift = mu_t - scale * rotation @ mu_s
    return scale * source @ rotation.T + shift


class TestMpjpe:
    def test_identical_sets_score_zero(self):
        joints = np.random.default_rng(0).normal(size=(16, 3))
        assert mpjpe(joints, joints) == 0.0

    def test_uniform_offset_is_exact(self):
        # An exactly representable 10 mm offset scores 10.0 bit-exactly.
        joints = np.zeros((16, 3))
        assert mpjpe(joints + [0.01, 0.0, 0.0], joints) == 10.0
        base = np.random.default_rng(1).normal(size=(16, 3))
        np.testing.assert_allclose(mpjpe(base + [0.01, 0.0, 0.0], base), 10.0,
                                   rtol=1e-12)

    def test_matches_per_joint_arithmetic(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(16, 3))
        b = rng.normal(size=(16, 3))
        expected = 1000.0 * np.mean(
            [np.sqrt(((a[j] - b[j]) ** 2).sum()) for j in range(16)])
        np.testing.assert_allclose(mpjpe(a, b), expected, rtol=1e-12)

    def test_root_alignment_removes_translation(self):
        rng = np.random.default_rng(3)
        joints = rng.normal(size=(16, 3))
        shifted = joints + rng.normal(size=3)
        assert mpjpe(shifted, joints, align_root=True) < 1e-9
        assert mpjpe(shifted, joints) > 1.0

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError):
            mpjpe(np.zeros((16, 3)), np.zeros((15, 3)))
        with pytest.raises(ValueError):
            mpjpe(np.zeros((16, 2)), np.zeros((16, 2)))
        with pytest.raises(ValueError):
            mpjpe(np.zeros((0, 3)), np.zeros((0, 3)))


class TestSimilarityAlign:
    def test_recovers_a_planted_transform(self):
        rng = np.random.default_rng(4)
        source = rng.normal(size=(16, 3))
        rotation = rodrigues(np.array([0.3, -0.5, 0.8]))
        target = 1.7 * source @ rotation.T + np.array([0.2, -1.0, 0.4])
        fit = similarity_align(source, target)
        assert not fit.degenerate
        np.testing.assert_allclose(fit.rotation, rotation, atol=1e-9)
        np.testing.assert_allclose(fit.scale, 1.7, rtol=1e-9)
        np.testing.assert_allclose(fit.apply(source), target, atol=1e-9)

    def test_collinear_points_fall_back_to_translation(self):
        line = np.linspace(0.0, 1.0, 8)[:, None] * np.array([1.0, 2.0, -1.0])
        target = np.random.default_rng(5).normal(size=(8, 3))
        fit = similarity_align(line, target)
        assert fit.degenerate
        np.testing.assert_allclose(fit.rotation, np.eye(3))
        assert fit.scale == 1.0
        np.testing.assert_allclose(fit.apply(line).mean(axis=0),
                                   target.mean(axis=0), atol=1e-12)

    def test_two_points_are_degenerate(self):
        fit = similarity_align(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                               np.array([[1.0, 1.0, 1.0], [2.0, 1.0, 1.0]]))
        assert fit.degenerate
        # Centroid-matching shift: target centroid minus source centroid.
        np.testing.assert_allclose(fit.shift, [1.0, 1.0, 1.0], atol=1e-12)

    def test_rotation_stays_proper_under_noise(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a = rng.normal(size=(16, 3))
            b = rng.normal(size=(16, 3))
            fit = similarity_align(a, b)
            np.testing.assert_allclose(np.linalg.det(fit.rotation), 1.0,
                                       rtol=1e-9)
            np.testing.assert_allclose(fit.rotation @ fit.rotation.T,
                                       np.eye(3), atol=1e-9)


class TestPaMpjpe:
    def test_similarity_transforms_score_zero(self):
        rng = np.random.default_rng(7)
        joints = rng.normal(size=(16, 3))
        rotation = rodrigues(np.array([-0.2, 0.9, 0.1]))
        moved = joints @ rotation.T + np.array([3.0, -2.0, 1.0])
        assert pa_mpjpe(moved, joints) < 1e-9
        assert pa_mpjpe(2.0 * joints, joints) < 1e-9

    def test_matches_quaternion_reference(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = rng.normal(size=(16, 3))
            b = a + rng.normal(scale=0.1, size=(16, 3))
            expected = mpjpe(_horn_similarity(a, b), b)
            np.testing.assert_allclose(pa_mpjpe(a, b), expected, rtol=1e-9)

    def test_never_exceeds_unaligned_error(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a = rng.normal(size=(16, 3))
            b = rng.normal(size=(16, 3))
            assert pa_mpjpe(a, b) <= mpjpe(a, b) + 1e-9

    def test_degenerate_pair_stays_bounded(self):
        line = np.linspace(0.0, 1.0, 5)[:, None] * np.array([0.0, 0.0, 1.0])
        target = np.random.default_rng(10).normal(size=(5, 3))
        assert pa_mpjpe(line, target) <= mpjpe(line, target) + 1e-9
