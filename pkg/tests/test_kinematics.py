"""Tests for serial chains, forward kinematics and reach IK."""

import numpy as np
import pytest

from proximesh.kinematics import (
    IkResult,
    Joint,
    KinematicChain,
    fk,
    fk_pose,
    ik_reach,
    jacobian,
    lidar_cart_chain,
    load_chain,
    save_chain,
    touch_probe_chain,
)


def _planar_arm(j1_limits=(-np.pi, np.pi)):
    """Two revolute z joints at 0.5 m height, links 0.6 m and 0.4 m."""
    z = np.array([0.0, 0.0, 1.0])
    joints = (
        Joint("j1", "revolute", z, np.array([0.0, 0.0, 0.5]), j1_limits),
        Joint("j2", "revolute", z, np.array([0.6, 0.0, 0.0]), (-np.pi, np.pi)),
    )
    return KinematicChain("planar_arm", joints, np.array([0.4, 0.0, 0.0]),
                          np.zeros(3))


class TestPlanarArmOracle:
    """Tool positions worked out by hand for the two-link arm."""

    def test_stretched(self):
        arm = _planar_arm()
        np.testing.assert_allclose(fk(arm, np.zeros(2)), [1.0, 0.0, 0.5],
                                   atol=1e-12)

    def test_base_quarter_turn(self):
        arm = _planar_arm()
        np.testing.assert_allclose(fk(arm, np.array([np.pi / 2, 0.0])),
                                   [0.0, 1.0, 0.5], atol=1e-12)

    def test_elbow_quarter_turn(self):
        arm = _planar_arm()
        np.testing.assert_allclose(fk(arm, np.array([0.0, np.pi / 2])),
                                   [0.6, 0.4, 0.5], atol=1e-12)

    def test_both_quarter_turns(self):
        arm = _planar_arm()
        np.testing.assert_allclose(fk(arm, np.array([np.pi / 2, np.pi / 2])),
                                   [-0.4, 0.6, 0.5], atol=1e-12)

    def test_out_of_limit_configuration_rejected(self):
        arm = _planar_arm()
        with pytest.raises(ValueError):
            fk(arm, np.array([4.0, 0.0]))
        with pytest.raises(ValueError):
            fk(arm, np.zeros(3))


class TestPrismaticOracle:
    def test_cart_translation_is_exact(self):
        cart = lidar_cart_chain()
        pos = fk(cart, np.array([0.3, -0.2, 0.0]))
        np.testing.assert_allclose(pos, [0.4, -0.2, 0.3], atol=1e-15)

    def test_yaw_turns_the_stand_off(self):
        cart = lidar_cart_chain()
        rot, pos = fk_pose(cart, np.array([0.3, -0.2, np.pi / 2]))
        np.testing.assert_allclose(pos, [0.3, -0.1, 0.3], atol=1e-12)
        np.testing.assert_allclose(rot @ np.array([1.0, 0.0, 0.0]),
                                   [0.0, 1.0, 0.0], atol=1e-12)


class TestJacobian:
    @pytest.mark.parametrize("make", [touch_probe_chain, lidar_cart_chain,
                                      _planar_arm])
    def test_matches_central_differences(self, make):
        chain = make()
        rng = np.random.default_rng(7)
        lo, hi = chain.limit_arrays()
        h = 1e-6
        for _ in range(5):
            # Stay clear of the limits so the probe points stay valid.
            q = rng.uniform(lo + 10 * h, hi - 10 * h)
            jac = jacobian(chain, q)
            fd = np.empty_like(jac)
            for i in range(chain.num_dof):
                step = np.zeros(chain.num_dof)
                step[i] = h
                fd[:, i] = (fk(chain, q + step) - fk(chain, q - step)) / (2 * h)
            np.testing.assert_allclose(jac, fd, atol=1e-6)


class TestReachIk:
    def test_round_trip_on_touch_chain(self):
        chain = touch_probe_chain()
        rng = np.random.default_rng(3)
        lo, hi = chain.limit_arrays()
        for _ in range(10):
            target = fk(chain, rng.uniform(lo, hi))
            result = ik_reach(chain, target)
            assert result.success
            assert result.residual <= 0.01
            np.testing.assert_allclose(fk(chain, result.q), result.position,
                                       atol=1e-12)

    def test_reaches_standing_body_extremes(self):
        chain = touch_probe_chain()
        for target in ([0.4, 0.1, 1.85], [0.3, -0.2, 0.06], [0.0, 0.8, 0.95]):
            result = ik_reach(chain, np.array(target))
            assert result.success, target

    def test_far_target_fails_fast(self):
        chain = touch_probe_chain()
        result = ik_reach(chain, np.array([10.0, 10.0, 5.0]))
        assert not result.success
        assert result.reason == "unreachable"
        assert result.restarts_used == 0

    def test_off_plane_target_fails_as_result(self):
        # The scan cart cannot leave its mast height.
        cart = lidar_cart_chain()
        result = ik_reach(cart, np.array([0.5, 0.5, 0.9]))
        assert not result.success
        assert result.reason == "no_converge"
        assert result.residual > 0.01

    def test_shrunk_limits_remove_a_reachable_target(self):
        target = np.array([0.0, 1.0, 0.5])
        assert ik_reach(_planar_arm(), target).success
        narrow = ik_reach(_planar_arm(j1_limits=(-0.1, 0.1)), target)
        assert not narrow.success
        assert narrow.reason == "no_converge"

    def test_committed_placement_blocks_the_only_solution(self):
        # Full stretch admits a single configuration, so a committed
        # point on the target leaves no clearance anywhere.
        arm = _planar_arm()
        target = np.array([1.0, 0.0, 0.5])
        blocked = ik_reach(arm, target, committed=[target])
        assert not blocked.success
        assert blocked.reason == "clearance"
        assert ik_reach(arm, target).success

    def test_clearance_ignores_far_placements(self):
        chain = touch_probe_chain()
        target = np.array([0.5, 0.0, 1.0])
        result = ik_reach(chain, target, committed=[[0.5, 2.0, 1.0]])
        assert result.success

    def test_deterministic(self):
        chain = touch_probe_chain()
        target = np.array([0.4, -0.3, 1.2])
        a = ik_reach(chain, target, committed=[[0.4, -0.3, 1.21]])
        b = ik_reach(chain, target, committed=[[0.4, -0.3, 1.21]])
        assert np.array_equal(a.q, b.q)
        assert a.residual == b.residual
        assert a.restarts_used == b.restarts_used

    def test_solutions_stay_within_limits(self):
        chain = touch_probe_chain()
        lo, hi = chain.limit_arrays()
        rng = np.random.default_rng(11)
        for _ in range(5):
            target = fk(chain, rng.uniform(lo, hi))
            result = ik_reach(chain, target)
            assert chain.contains(result.q)


class TestReachEnvelope:
    def test_max_reach_bounds_every_tool_position(self):
        for make in (touch_probe_chain, lidar_cart_chain, _planar_arm):
            chain = make()
            bound = chain.max_reach()
            lo, hi = chain.limit_arrays()
            rng = np.random.default_rng(19)
            for _ in range(200):
                pos = fk(chain, rng.uniform(lo, hi))
                assert np.linalg.norm(pos - chain.base) <= bound + 1e-12


class TestChainSerialization:
    def test_round_trip(self, tmp_path):
        chain = touch_probe_chain()
        path = tmp_path / "chain.json"
        save_chain(path, chain)
        loaded = load_chain(path)
        assert loaded.name == chain.name
        q = np.array([0.5, -1.0, 0.3, 0.2, -0.4, 0.9])
        np.testing.assert_allclose(fk(loaded, q), fk(chain, q), atol=1e-15)

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "chain.json"
        path.write_text('{"format": "proximesh-chain/99"}')
        with pytest.raises(ValueError):
            load_chain(path)


class TestValidation:
    def test_non_unit_axis_rejected(self):
        with pytest.raises(ValueError):
            Joint("bad", "revolute", np.array([0.0, 0.0, 2.0]), np.zeros(3),
                  (-1.0, 1.0))

    def test_bad_limits_rejected(self):
        with pytest.raises(ValueError):
            Joint("bad", "revolute", np.array([0.0, 0.0, 1.0]), np.zeros(3),
                  (1.0, -1.0))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Joint("bad", "helical", np.array([0.0, 0.0, 1.0]), np.zeros(3),
                  (-1.0, 1.0))
