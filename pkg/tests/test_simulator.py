import dataclasses

import numpy as np
import pytest

from bronchonav.control import Command, RECOVER
from bronchonav.geometry import Pose, VisibilityConfig, pose_errors
from bronchonav.perception import NoiseConfig
from bronchonav.simulator import (
    EpisodeLog,
    ScopeState,
    SimConfig,
    centerline_script,
    load_log,
    log_to_bytes,
    nearest_lumen_point,
    run_driving_episode,
    run_tracking_episode,
    save_log,
    step,
    tree_hash,
)
from bronchonav.skeleton import TreeGenConfig, generate_tree

from conftest import build_tree, line_airway

VIS = VisibilityConfig()
ZERO = NoiseConfig()
SIM = SimConfig()


def straight_tree(length=100.0, radius=5.0):
    return build_tree([line_airway(0, None, [], (0, 0, 0), (0, 0, 1), length, radius=radius, n_points=5)])


def start_state(tree):
    a = tree.airways[0]
    return ScopeState(pose=Pose.looking(a.proximal, a.proximal_tangent))


class TestStep:
    def test_zero_command_fixed_point(self):
        t = straight_tree()
        s0 = start_state(t)
        s1 = step(s0, Command.zero(), t, SIM)
        np.testing.assert_array_equal(s1.pose.position, s0.pose.position)
        np.testing.assert_array_equal(s1.pose.rotation, s0.pose.rotation)
        assert s1.u_ins == s0.u_ins and s1.collisions == 0

    def test_pure_insertion_advances_along_axis(self):
        t = straight_tree()
        s0 = start_state(t)
        s1 = step(s0, Command(np.zeros(4), 10.0), t, SIM)
        np.testing.assert_allclose(s1.pose.position, [0, 0, 0.2], atol=1e-12)
        assert s1.u_ins == pytest.approx(0.2)

    def test_heading_rate_limit(self):
        t = straight_tree()
        s0 = start_state(t)
        huge = Command(np.array([10.0, 0.0, -10.0, 0.0]), 0.0)
        s1 = step(s0, huge, t, SIM)
        angle = np.arccos(np.clip(s1.pose.p_z @ s0.pose.p_z, -1, 1))
        assert angle == pytest.approx(SIM.heading_rate_limit * SIM.dt, abs=1e-9)

    def test_wall_clamp_and_collision_count(self):
        t = straight_tree(radius=5.0)
        a = t.airways[0]
        # heading 60 deg off-axis near the wall: insertion pushes outside
        pose = Pose.looking((4.95, 0.0, 50.0), (np.sin(1.0), 0.0, np.cos(1.0)))
        s0 = ScopeState(pose=pose)
        s1 = step(s0, Command(np.zeros(4), 10.0), t, SIM)
        _, dist, radius = nearest_lumen_point(t, s1.pose.position)
        assert dist <= radius + 1e-9
        assert s1.collisions == 1

    def test_slide_mode_keeps_tangential_motion(self):
        t = straight_tree(radius=5.0)
        cfg = dataclasses.replace(SIM, wall_mode="SLIDE")
        pose = Pose.looking((4.95, 0.0, 50.0), (np.sin(0.5), 0.0, np.cos(0.5)))
        s1 = step(ScopeState(pose=pose), Command(np.zeros(4), 10.0), t, cfg)
        _, dist, radius = nearest_lumen_point(t, s1.pose.position)
        assert dist <= radius + 1e-9
        assert s1.pose.position[2] > 50.0  # axial progress preserved
        assert s1.collisions == 1

    def test_u_ins_floored_at_zero(self):
        t = straight_tree()
        s = start_state(t)
        s = step(s, Command(np.zeros(4), -10.0), t, SIM)
        assert s.u_ins == 0.0

    def test_displacement_bounded_by_insertion_plus_radius(self):
        t = generate_tree(TreeGenConfig(depth=3, seed=2))
        rng = np.random.default_rng(0)
        s = start_state(t)
        for _ in range(200):
            cmd = Command(rng.normal(0, 0.05, 4), float(rng.uniform(-5, 15)))
            s1 = step(s, cmd, t, SIM)
            moved = np.linalg.norm(s1.pose.position - s.pose.position)
            assert moved <= abs(cmd.du_ins) * SIM.dt + t.airways[0].radius[0] + 1e-9
            s = s1


class TestTrackingEpisode:
    def test_zero_noise_exact_when_localized(self):
        tree = generate_tree(TreeGenConfig(depth=4, seed=0))
        log = run_tracking_episode(tree, centerline_script(tree, 14))
        localized = [f for f in log.frames if f.estimate is not None]
        assert len(localized) > 100
        for f in localized:
            e_p, e_d, e_r = pose_errors(f.true_pose, f.estimate)
            assert e_p < 1e-6 and e_d < 1e-6 and e_r < 1e-6

    def test_timestamps_increase_by_dt(self):
        tree = generate_tree(TreeGenConfig(depth=3, seed=0))
        log = run_tracking_episode(tree, centerline_script(tree, 3))
        ts = [f.t for f in log.frames]
        np.testing.assert_allclose(np.diff(ts), SIM.dt, atol=1e-12)

    def test_fixed_seed_bitwise_identical(self):
        tree = generate_tree(TreeGenConfig(depth=4, seed=1))
        noise = NoiseConfig(sigma_pos=0.5, sigma_dir=0.02, p_miss=0.05, seed=3)
        script = centerline_script(tree, 9)
        a = log_to_bytes(run_tracking_episode(tree, script, noise=noise))
        b = log_to_bytes(run_tracking_episode(tree, script, noise=noise))
        assert a == b

    def test_blind_frames_logged_without_estimate(self):
        tree = straight_tree(length=100.0)
        # script marching backwards out of the airway: nothing visible
        poses = [(Pose.looking((0, 0, -5.0 - k), (0, 0, -1)), 0.0) for k in range(5)]
        log = run_tracking_episode(tree, poses)
        assert len(log.frames) == 5
        assert all(f.estimate is None for f in log.frames)

    def test_bifurcationnet_localizer_runs(self):
        tree = generate_tree(TreeGenConfig(depth=4, seed=0))
        log = run_tracking_episode(
            tree, centerline_script(tree, 14)[:100], localizer="bifurcationnet"
        )
        assert any(f.estimate is not None for f in log.frames)

    def test_unknown_localizer_rejected(self):
        tree = straight_tree()
        with pytest.raises(ValueError):
            run_tracking_episode(tree, centerline_script(tree, 0)[:2], localizer="nope")


class TestDrivingEpisode:
    def test_zero_noise_reaches_target(self):
        tree = generate_tree(TreeGenConfig(depth=5, seed=3))
        log = run_driving_episode(tree, [15])
        assert log.outcome.success
        assert log.outcome.completion_time < 60.0

    def test_stays_inside_lumen_all_episode(self):
        tree = generate_tree(TreeGenConfig(depth=4, seed=2))
        log = run_driving_episode(tree, [10])
        for f in log.frames:
            _, dist, radius = nearest_lumen_point(tree, f.true_pose.position)
            assert dist <= radius + 1e-9

    def test_opposite_subtree_targets_trigger_recovery(self):
        tree = generate_tree(TreeGenConfig(depth=4, seed=0))
        # leaves under child 1 and child 2 respectively
        leaf_a = next(i for i in tree.ids() if not tree.airways[i].children and 1 in tree.path_to_root(i))
        leaf_b = next(i for i in tree.ids() if not tree.airways[i].children and 2 in tree.path_to_root(i))
        log = run_driving_episode(tree, [leaf_a, leaf_b])
        assert log.outcome.success
        assert any(f.mode == RECOVER for f in log.frames)
        assert log.outcome.recoveries >= 1

    def test_total_dropout_times_out(self):
        tree = generate_tree(TreeGenConfig(depth=3, seed=0))
        cfg = dataclasses.replace(SIM, max_steps=300)
        log = run_driving_episode(tree, [3], noise=NoiseConfig(p_miss=1.0), sim_cfg=cfg)
        assert not log.outcome.success
        assert all(f.estimate is None for f in log.frames)


class TestLogs:
    def test_round_trip(self, tmp_path):
        tree = generate_tree(TreeGenConfig(depth=3, seed=0))
        log = run_tracking_episode(tree, centerline_script(tree, 3)[:20])
        p = tmp_path / "ep.jsonl"
        save_log(log, p)
        back = load_log(p, tree=tree)
        assert log_to_bytes(back) == log_to_bytes(log)
        assert back.outcome.success == log.outcome.success

    def test_tree_hash_mismatch_rejected(self, tmp_path):
        tree = generate_tree(TreeGenConfig(depth=3, seed=0))
        other = generate_tree(TreeGenConfig(depth=3, seed=1))
        log = run_tracking_episode(tree, centerline_script(tree, 3)[:5])
        p = tmp_path / "ep.jsonl"
        save_log(log, p)
        with pytest.raises(ValueError):
            load_log(p, tree=other)

    def test_tree_hash_deterministic(self):
        a = generate_tree(TreeGenConfig(depth=4, seed=5))
        b = generate_tree(TreeGenConfig(depth=4, seed=5))
        assert tree_hash(a) == tree_hash(b)
