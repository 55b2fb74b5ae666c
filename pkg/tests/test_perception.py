import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bronchonav.geometry import (
    AirwayGroundTruth,
    Pose,
    VisibilityConfig,
    ground_truth_observation,
)
from bronchonav.perception import (
    LossWeights,
    NoiseConfig,
    ObservationMatrix,
    PerceptionError,
    airwaynet_loss,
    bifurcation_order_key,
    oracle_airwaynet,
    oracle_bifurcationnet,
    score_threshold_sweep,
)
from bronchonav.skeleton import TreeGenConfig, generate_tree

from conftest import build_tree, line_airway

VIS = VisibilityConfig()
ZERO = NoiseConfig()


def trachea_scene():
    t = build_tree([line_airway(0, None, [], (0, 0, 0), (0, 0, 1), 25.0, n_points=5)])
    return t, Pose(np.zeros(3), np.eye(3))


class TestZeroNoiseOracle:
    def test_trachea_view_exact(self):
        t, pose = trachea_scene()
        obs = oracle_airwaynet(pose, t, VIS, ZERO)
        assert obs.p_is_vis[0] == 1.0
        np.testing.assert_allclose(obs.y_p[0], [0, 0, 25], atol=1e-9)
        np.testing.assert_array_equal(obs.y_d[0], [0, 0])

    def test_thresholded_matrix_reproduces_ground_truth(self, deep_tree):
        rng = np.random.default_rng(0)
        ids = deep_tree.ids()
        for _ in range(100):
            a = deep_tree.airways[int(rng.choice(ids))]
            s = rng.uniform(0, 1)
            pos = a.proximal + s * (a.distal - a.proximal)
            pose = Pose.looking(pos, a.distal_tangent)
            truth = ground_truth_observation(pose, VIS, deep_tree)
            obs = oracle_airwaynet(pose, deep_tree, VIS, ZERO)
            assert set(obs.visible_ids()) == {r.airway_id for r in truth}
            assert set(np.flatnonzero(obs.p_has_vis_child >= 0.5)) == {
                r.airway_id for r in truth if r.has_vis_child
            }

    def test_probabilities_saturated(self, deep_tree):
        pose = Pose.looking((0, 0, 1), (0, 0, 1))
        obs = oracle_airwaynet(pose, deep_tree, VIS, ZERO)
        assert set(np.unique(obs.p_is_vis)) <= {0.0, 1.0}
        assert set(np.unique(obs.p_has_vis_child)) <= {0.0, 1.0}


class TestNoiseModel:
    def test_position_noise_chi_mean(self):
        # ||y_p - truth|| over Gaussian (sigma=1) per component is chi(3):
        # mean sqrt(8/pi) ~ 1.5958
        t, pose = trachea_scene()
        noise = NoiseConfig(sigma_pos=1.0, seed=0)
        rng = noise.rng()
        errs = [
            np.linalg.norm(oracle_airwaynet(pose, t, VIS, noise, rng).y_p[0] - [0, 0, 25])
            for _ in range(10_000)
        ]
        assert np.mean(errs) == pytest.approx(math.sqrt(8 / math.pi), rel=0.05)

    def test_miss_demotes_below_threshold(self):
        t, pose = trachea_scene()
        obs = oracle_airwaynet(pose, t, VIS, NoiseConfig(p_miss=1.0, seed=1))
        assert obs.p_is_vis[0] < 0.5

    def test_false_positive_within_two_hops(self, three_airway_tree):
        # camera sees only airway 1; its sibling (2 hops) may be promoted
        a = three_airway_tree.airways[1]
        pose = Pose.looking(a.proximal + 5.0 * a.proximal_tangent, a.proximal_tangent)
        truth_ids = {r.airway_id for r in ground_truth_observation(pose, VIS, three_airway_tree)}
        obs = oracle_airwaynet(pose, three_airway_tree, VIS, NoiseConfig(p_false=1.0, seed=2))
        promoted = set(map(int, obs.visible_ids())) - truth_ids
        assert promoted
        from bronchonav.skeleton import generation_distance

        assert all(
            min(generation_distance(three_airway_tree, i, j) for j in truth_ids) <= 2
            for i in promoted
        )

    def test_sibling_swap_exchanges_rows(self, three_airway_tree):
        pose = Pose.looking((0, 0, 12), (0, 0, 1))
        truth = {r.airway_id: r for r in ground_truth_observation(pose, VIS, three_airway_tree)}
        obs = oracle_airwaynet(pose, three_airway_tree, VIS, NoiseConfig(p_swap=1.0, seed=3))
        np.testing.assert_array_equal(obs.y_p[1], truth[2].y_p)
        np.testing.assert_array_equal(obs.y_p[2], truth[1].y_p)

    def test_visible_confidence_in_upper_half(self, deep_tree):
        pose = Pose.looking((0, 0, 1), (0, 0, 1))
        noise = NoiseConfig(sigma_pos=0.5, seed=4)
        obs = oracle_airwaynet(pose, deep_tree, VIS, noise)
        truth_ids = [r.airway_id for r in ground_truth_observation(pose, VIS, deep_tree)]
        for i in truth_ids:
            assert 0.5 < obs.p_is_vis[i] <= 1.0

    def test_invalid_config_rejected(self):
        with pytest.raises(PerceptionError):
            NoiseConfig(p_miss=1.5)
        with pytest.raises(PerceptionError):
            NoiseConfig(sigma_pos=-1.0)


class TestBifurcationOracle:
    def test_two_visible_children_two_rows(self):
        t = build_tree(
            [
                line_airway(0, None, [1, 2], (0, 0, -40), (0, 0, 1), 40.0, radius=6.0),
                line_airway(1, 0, [], (0, 0, 0), (0.5, 0, 1), 20.0),
                line_airway(2, 0, [], (0, 0, 0), (-0.5, 0, 1), 20.0),
            ]
        )
        pose = Pose.looking((0, 0, -10), (0, 0, 1))
        # parent + 2 children are visible -> 3 rows, none beyond
        uobs = oracle_bifurcationnet(pose, t, VIS, ZERO)
        assert len(uobs) == 3

    def test_six_visible_rows_capped_at_four_smallest_keys(self):
        # short airways keep grandchildren inside max_dist: 7 airways visible
        left = line_airway(1, 0, [3, 4], (0, 0, 10), (0.3, 0, 1), 8.0, radius=5.0)
        right = line_airway(2, 0, [5, 6], (0, 0, 10), (-0.3, 0, 1), 8.0, radius=5.0)
        t = build_tree(
            [
                line_airway(0, None, [1, 2], (0, 0, 0), (0, 0, 1), 10.0, radius=6.0),
                left,
                right,
                line_airway(3, 1, [], left.distal, (0.5, 0, 1), 8.0),
                line_airway(4, 1, [], left.distal, (0.1, 0.3, 1), 8.0),
                line_airway(5, 2, [], right.distal, (-0.5, 0, 1), 8.0),
                line_airway(6, 2, [], right.distal, (-0.1, -0.3, 1), 8.0),
            ]
        )
        pose = Pose(np.zeros(3), np.eye(3))
        truth = ground_truth_observation(pose, VIS, t)
        assert len(truth) >= 6
        uobs = oracle_bifurcationnet(pose, t, VIS, ZERO)
        assert len(uobs) == 4
        keys = sorted(bifurcation_order_key(r.y_p, r.y_d) for r in truth)
        got = [bifurcation_order_key(uobs.y_p[k], tuple(uobs.y_d[k])) for k in range(4)]
        assert got == keys[:4]

    def test_rows_ordered_by_key(self, deep_tree):
        pose = Pose.looking((0, 0, 5), (0, 0, 1))
        uobs = oracle_bifurcationnet(pose, deep_tree, VIS, ZERO)
        keys = [bifurcation_order_key(uobs.y_p[k], tuple(uobs.y_d[k])) for k in range(len(uobs))]
        assert keys == sorted(keys)

    def test_zero_noise_ids_recoverable_by_nearest_y_p(self, deep_tree):
        pose = Pose.looking((0, 0, 5), (0, 0, 1))
        truth = ground_truth_observation(pose, VIS, deep_tree)
        uobs = oracle_bifurcationnet(pose, deep_tree, VIS, ZERO)
        recovered = []
        for k in range(len(uobs)):
            dists = [np.linalg.norm(uobs.y_p[k] - r.y_p) for r in truth]
            recovered.append(truth[int(np.argmin(dists))].airway_id)
        assert len(set(recovered)) == len(recovered)


class TestLoss:
    def test_perfect_prediction_zero(self, deep_tree):
        pose = Pose.looking((0, 0, 1), (0, 0, 1))
        truth = ground_truth_observation(pose, VIS, deep_tree)
        pred = oracle_airwaynet(pose, deep_tree, VIS, ZERO)
        assert airwaynet_loss(pred, truth) == 0.0

    def test_unit_offset_at_10mm(self):
        truth = [
            AirwayGroundTruth(0, True, False, np.array([0.0, 0.0, 10.0]), (0.0, 0.0))
        ]
        pred = ObservationMatrix.zeros(4)
        pred.p_is_vis[0] = 1.0
        pred.y_p[0] = [0.0, 0.0, 11.0]
        # f = max(0.1, 6 - 0.2*10) = 4; L = f * c3 * 1^2 = 4
        assert airwaynet_loss(pred, truth) == pytest.approx(4.0, abs=1e-12)

    def test_depth_weight_floor(self):
        truth = [
            AirwayGroundTruth(0, True, False, np.array([0.0, 0.0, 30.0]), (0.0, 0.0))
        ]
        pred = ObservationMatrix.zeros(4)
        pred.p_is_vis[0] = 1.0
        pred.y_p[0] = [0.0, 0.0, 31.0]
        # f = max(0.1, 6 - 0.2*30) = 0.1
        assert airwaynet_loss(pred, truth) == pytest.approx(0.1, abs=1e-12)

    def test_loss_nonnegative_and_monotone_in_offset(self):
        truth = [
            AirwayGroundTruth(0, True, False, np.array([0.0, 0.0, 10.0]), (0.0, 0.0))
        ]
        last = -1.0
        for off in (0.0, 0.5, 1.0, 2.0):
            pred = ObservationMatrix.zeros(4)
            pred.p_is_vis[0] = 1.0
            pred.y_p[0] = [0.0, 0.0, 10.0 + off]
            val = airwaynet_loss(pred, truth)
            assert val >= 0.0 and val > last
            last = val

    def test_misclassification_penalized(self):
        truth = [
            AirwayGroundTruth(0, True, False, np.array([0.0, 0.0, 10.0]), (0.0, 0.0))
        ]
        pred = ObservationMatrix.zeros(4)
        pred.p_is_vis[0] = 1.0
        pred.y_p[0] = [0.0, 0.0, 10.0]
        base = airwaynet_loss(pred, truth)
        pred.p_is_vis[0] = 0.5
        assert airwaynet_loss(pred, truth) > base

    def test_one_sided_variant_drops_negative_terms(self):
        truth = []
        pred = ObservationMatrix.zeros(2)
        pred.p_is_vis[0] = 0.9  # false positive
        assert airwaynet_loss(pred, truth, one_sided=True) == 0.0
        assert airwaynet_loss(pred, truth) > 0.0

    def test_out_of_range_probability_rejected(self):
        pred = ObservationMatrix.zeros(2)
        pred.p_is_vis[0] = 1.5
        with pytest.raises(PerceptionError):
            airwaynet_loss(pred, [])

    @given(p=st.floats(1e-6, 1.0 - 1e-6), off=st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_loss_always_nonnegative(self, p, off):
        truth = [
            AirwayGroundTruth(0, True, False, np.array([0.0, 0.0, 10.0]), (0.0, 0.0))
        ]
        pred = ObservationMatrix.zeros(2)
        pred.p_is_vis[0] = p
        pred.y_p[0] = [0.0, off, 10.0]
        assert airwaynet_loss(pred, truth) >= 0.0


class TestScoreSweep:
    def test_zero_noise_perfect_at_half(self, deep_tree):
        rng = np.random.default_rng(6)
        preds, truths = [], []
        for _ in range(20):
            a = deep_tree.airways[int(rng.choice(deep_tree.ids()))]
            pose = Pose.looking(a.proximal + 1.0 * a.proximal_tangent, a.proximal_tangent)
            truths.append(ground_truth_observation(pose, VIS, deep_tree))
            preds.append(oracle_airwaynet(pose, deep_tree, VIS, ZERO))
        curves = score_threshold_sweep(preds, truths, [0.5])
        for precision, recall in curves.values():
            np.testing.assert_array_equal(precision, [1.0])
            np.testing.assert_array_equal(recall, [1.0])
