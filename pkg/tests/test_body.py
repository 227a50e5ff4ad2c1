"""Body model tests: skinning oracles, invariants, serialization."""

import numpy as np
import pytest

from proximesh.body import (
    GlobalPose,
    PoseParams,
    ShapeParams,
    default_body,
    load_template,
    regress_joints,
    save_template,
    shaped_vertices,
    skin_mesh,
    skin_mesh_batch,
    validate_template,
    world_mesh,
)
from proximesh.geometry import rodrigues

from conftest import two_bone_body


class TestRestPose:
    def test_zero_pose_returns_template_bitwise(self, body):
        skeleton, template = body
        out = skin_mesh(skeleton, template, PoseParams.zero(), ShapeParams.zero())
        assert np.array_equal(out, template.vertices)

    def test_zero_pose_shaped_returns_shaped_template_bitwise(self, body):
        skeleton, template = body
        shape = ShapeParams(np.array([1.0, -0.5, 0.3, 0.2]))
        out = skin_mesh(skeleton, template, PoseParams.zero(), shape)
        assert np.array_equal(out, shaped_vertices(template, shape))

    def test_rest_joints_match_skeleton(self, body):
        skeleton, template = body
        rest = template.joint_regressor @ template.vertices
        np.testing.assert_allclose(rest, skeleton.rest_positions(), atol=1e-6)


class TestTwoBoneOracle:
    """Hand-computed skinning results for a 2-joint chain.

    With joint 1 rotated 90 degrees about +x, its bound vertices spin
    about the joint position (0, 0, 1):
        (0,  1, 1) -> (0, 0, 2)
        (0, -1, 1) -> (0, 0, 0)
    Root-bound vertices stay put.
    """

    def test_child_rotation(self):
        skeleton, template = two_bone_body()
        theta = np.zeros((2, 3))
        theta[1] = [np.pi / 2.0, 0.0, 0.0]
        out = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero(1))
        expected = np.array(
            [
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, 0.0, 2.0],
                [0.0, 0.0, 0.0],
            ]
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_root_rotation_spins_everything(self):
        # Root rotated 90 degrees about +z: x axis goes to y.
        skeleton, template = two_bone_body()
        theta = np.zeros((2, 3))
        theta[0] = [0.0, 0.0, np.pi / 2.0]
        out = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero(1))
        expected = np.array(
            [
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [-1.0, 0.0, 1.0],
                [1.0, 0.0, 1.0],
            ]
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_composed_rotation(self):
        # Root 90 about z then child 90 about x (in the rotated frame).
        # Child axis +x maps to world +y, so child-bound vertices spin
        # about world +y around (0, 0, 1):
        #   local (0,1,0) -> root-rotated (-1,0,0) -> about +y -> (0,0,1)
        #   giving world (0,0,2); the other vertex lands at (0,0,0).
        skeleton, template = two_bone_body()
        theta = np.array([[0.0, 0.0, np.pi / 2.0], [np.pi / 2.0, 0.0, 0.0]])
        out = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero(1))
        expected = np.array(
            [
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [0.0, 0.0, 2.0],
                [0.0, 0.0, 0.0],
            ]
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestRigidEquivariance:
    def test_composed_global_pose(self, body):
        skeleton, template = body
        rng = np.random.default_rng(42)
        theta = 0.3 * rng.standard_normal((16, 3))
        local = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero())

        r1 = rodrigues(np.array([0.3, -0.2, 0.9]))
        t1 = np.array([0.5, -1.0, 0.2])
        r2 = rodrigues(np.array([-0.1, 0.7, 0.4]))
        t2 = np.array([-0.3, 0.8, 1.5])

        composed = GlobalPose(r2 @ r1, r2 @ t1 + t2)
        direct = world_mesh(local, composed)
        staged = world_mesh(local, GlobalPose(r1, t1)) @ r2.T + t2
        np.testing.assert_allclose(direct, staged, atol=1e-9)

    def test_pelvis_stays_at_local_origin(self, body):
        skeleton, template = body
        rng = np.random.default_rng(7)
        for _ in range(5):
            theta = 0.5 * rng.standard_normal((16, 3))
            local = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero())
            pelvis = (template.joint_regressor @ local)[0]
            assert np.linalg.norm(pelvis) <= 1e-9


class TestRegressJoints:
    def test_world_joints_follow_global_pose(self, body):
        skeleton, template = body
        r = rodrigues(np.array([0.0, 0.0, 1.2]))
        t = np.array([2.0, -1.0, 0.9])
        gp = GlobalPose(r, t)
        joints = regress_joints(template.vertices, template, gp)
        expected = skeleton.rest_positions() @ r.T + t
        np.testing.assert_allclose(joints, expected, atol=1e-6)


class TestShapeDirs:
    def test_height_direction_scales_z(self, body):
        _, template = body
        shaped = shaped_vertices(template, ShapeParams(np.array([1.0, 0.0, 0.0, 0.0])))
        np.testing.assert_allclose(shaped[:, 2], 1.1 * template.vertices[:, 2], atol=1e-12)
        np.testing.assert_allclose(shaped[:, :2], template.vertices[:, :2], atol=1e-12)

    def test_leg_direction_leaves_head_alone(self, body):
        skeleton, template = body
        shaped = shaped_vertices(template, ShapeParams(np.array([0.0, 0.0, 2.0, 0.0])))
        delta = np.linalg.norm(shaped - template.vertices, axis=1)
        head_verts = template.skin_weights[:, 3] > 0.9
        ankle_verts = (template.skin_weights[:, 12] > 0.9) | (template.skin_weights[:, 15] > 0.9)
        assert np.max(delta[head_verts]) < 1e-12
        assert np.min(delta[ankle_verts]) > 0.01


class TestValidation:
    def test_pose_angle_over_pi_rejected(self):
        theta = np.zeros((16, 3))
        theta[4] = [3.5, 0.0, 0.0]
        with pytest.raises(ValueError):
            PoseParams(theta)

    def test_pose_non_finite_rejected(self):
        theta = np.zeros((16, 3))
        theta[0, 0] = np.nan
        with pytest.raises(ValueError):
            PoseParams(theta)

    def test_shape_magnitude_rejected(self):
        with pytest.raises(ValueError):
            ShapeParams(np.array([0.0, 6.0, 0.0, 0.0]))

    def test_global_pose_rejects_reflection(self):
        bad = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            GlobalPose(bad, np.zeros(3))

    def test_template_invariants_hold(self, body):
        skeleton, template = body
        validate_template(skeleton, template)
        w = template.skin_weights
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert np.max((w > 0).sum(axis=1)) <= 2

    def test_default_vertex_count(self, body):
        _, template = body
        assert template.num_vertices == 512


class TestBatchConsistency:
    def test_batch_matches_single(self, body):
        skeleton, template = body
        rng = np.random.default_rng(3)
        thetas = 0.4 * rng.standard_normal((6, 16, 3))
        betas = rng.uniform(-1.0, 1.0, size=(6, 4))
        batch = skin_mesh_batch(skeleton, template, thetas, betas)
        for s in range(6):
            single = skin_mesh(
                skeleton, template, PoseParams(thetas[s]), ShapeParams(betas[s])
            )
            np.testing.assert_allclose(batch[s], single, atol=1e-12)


class TestDeterminism:
    def test_repeated_calls_bitwise_equal(self, body):
        skeleton, template = body
        theta = np.full((16, 3), 0.21)
        a = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero())
        b = skin_mesh(skeleton, template, PoseParams(theta), ShapeParams.zero())
        assert np.array_equal(a, b)


class TestSerialization:
    def test_round_trip(self, tmp_path, body):
        skeleton, template = body
        path = tmp_path / "body.json"
        save_template(path, skeleton, template)
        skeleton2, template2 = load_template(path)
        assert skeleton2.joint_names == skeleton.joint_names
        assert np.array_equal(skeleton2.parents, skeleton.parents)
        np.testing.assert_allclose(skeleton2.rest_offsets, skeleton.rest_offsets)
        np.testing.assert_allclose(template2.vertices, template.vertices)
        assert np.array_equal(template2.faces, template.faces)
        np.testing.assert_allclose(template2.skin_weights, template.skin_weights)
        np.testing.assert_allclose(template2.joint_regressor, template.joint_regressor)
        np.testing.assert_allclose(template2.shape_dirs, template.shape_dirs)

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other/9"}')
        with pytest.raises(ValueError):
            load_template(path)


class TestReducedResolution:
    def test_smaller_template_still_valid(self, small_body):
        skeleton, template = small_body
        validate_template(skeleton, template)
        assert template.num_vertices < 512
        rest = template.joint_regressor @ template.vertices
        np.testing.assert_allclose(rest, skeleton.rest_positions(), atol=1e-6)
