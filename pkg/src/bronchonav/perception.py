"""Perception oracle standing in for the trained network, plus the weighted
L2 training loss as a scoring function and precision/recall sweeps.

The oracle starts from geometric ground truth and perturbs it with a
configurable noise model: regression noise on positions and angles,
missed detections, near-miss false positives and sibling row swaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    AirwayGroundTruth,
    Pose,
    VisibilityConfig,
    alpha_beta_to_direction,
    ground_truth_observation,
)
from .skeleton import AirwayTree, generation_distance

_CLAMP = 1e-7


class PerceptionError(ValueError):
    pass


@dataclass
class ObservationMatrix:
    """Per-airway observation rows; row index = airway ID, capacity M rows."""

    p_is_vis: np.ndarray        # (M,)
    p_has_vis_child: np.ndarray  # (M,)
    y_p: np.ndarray             # (M, 3) mm, camera frame
    y_d: np.ndarray             # (M, 2) rad (alpha, beta)

    @classmethod
    def zeros(cls, max_rows: int) -> "ObservationMatrix":
        return cls(
            p_is_vis=np.zeros(max_rows),
            p_has_vis_child=np.zeros(max_rows),
            y_p=np.zeros((max_rows, 3)),
            y_d=np.zeros((max_rows, 2)),
        )

    @property
    def max_rows(self) -> int:
        return len(self.p_is_vis)

    def visible_ids(self, threshold: float = 0.5) -> np.ndarray:
        return np.flatnonzero(self.p_is_vis >= threshold)

    def nonzero_ids(self) -> np.ndarray:
        return np.flatnonzero((self.p_is_vis > 0) | (self.p_has_vis_child > 0))


@dataclass
class UnlabeledObservation:
    """Up to 4 airway rows with IDs stripped, ordered by proximity key."""

    p_is_vis: np.ndarray         # (n,)
    p_has_vis_child: np.ndarray  # (n,)
    y_p: np.ndarray              # (n, 3)
    y_d: np.ndarray              # (n, 2)

    def __len__(self) -> int:
        return len(self.p_is_vis)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise model emulating network error characteristics."""

    sigma_pos: float = 0.0   # mm, Gaussian per y_p component
    sigma_dir: float = 0.0   # rad, Gaussian on alpha and beta
    p_miss: float = 0.0      # visible airway demoted below threshold
    p_false: float = 0.0     # near-miss invisible airway promoted
    p_swap: float = 0.0      # sibling rows exchanged
    seed: int = 0

    def __post_init__(self):
        for name in ("p_miss", "p_false", "p_swap"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise PerceptionError(f"{name} must be in [0, 1]")
        if self.sigma_pos < 0 or self.sigma_dir < 0:
            raise PerceptionError("sigmas must be non-negative")

    @property
    def is_zero(self) -> bool:
        return (
            self.sigma_pos == 0
            and self.sigma_dir == 0
            and self.p_miss == 0
            and self.p_false == 0
            and self.p_swap == 0
        )

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class LossWeights:
    c1: float = 2.0
    c2: float = 2.0
    c3: float = 1.0
    c4: float = 10.0
    c5: float = 0.1
    c6: float = 6.0
    c7: float = 0.2

    def __post_init__(self):
        if self.c5 <= 0 or self.c6 <= self.c5:
            raise PerceptionError("require c5 > 0 and c6 > c5")


def _camera_row(tree: AirwayTree, pose: Pose, aid: int) -> Tuple[np.ndarray, Tuple[float, float]]:
    """Synthetic camera-frame row for an airway from its distal point and tangent.

    Used for false-positive rows where no truly visible point exists.
    """
    from .geometry import direction_to_alpha_beta

    a = tree.airways[aid]
    y_p = pose.to_camera(a.distal)
    tan = a.distal_tangent @ pose.rotation
    try:
        y_d = direction_to_alpha_beta(tan)
    except Exception:
        y_d = (0.0, 0.0)
    return y_p, y_d


def oracle_airwaynet(
    pose: Pose,
    tree: AirwayTree,
    vis_cfg: VisibilityConfig,
    noise: NoiseConfig,
    rng: Optional[np.random.Generator] = None,
) -> ObservationMatrix:
    """Emit the M x 7 labeled observation matrix for a pose.

    With an all-zero noise config the output is the ground truth with
    probabilities exactly 1.0 / 0.0 and is a pure function of the pose.
    """
    truth = ground_truth_observation(pose, vis_cfg, tree)
    obs = ObservationMatrix.zeros(tree.max_rows)
    if noise.is_zero:
        for row in truth:
            obs.p_is_vis[row.airway_id] = 1.0
            obs.p_has_vis_child[row.airway_id] = 1.0 if row.has_vis_child else 0.0
            obs.y_p[row.airway_id] = row.y_p
            obs.y_d[row.airway_id] = row.y_d
        return obs

    if rng is None:
        rng = noise.rng()
    vis_ids = [r.airway_id for r in truth]
    vis_set = set(vis_ids)
    for row in truth:
        i = row.airway_id
        obs.p_is_vis[i] = rng.uniform(0.5, 1.0)
        obs.p_has_vis_child[i] = (
            rng.uniform(0.5, 1.0) if row.has_vis_child else rng.uniform(0.0, 0.5)
        )
        obs.y_p[i] = row.y_p + rng.normal(0.0, noise.sigma_pos, 3) if noise.sigma_pos else row.y_p
        y_d = np.asarray(row.y_d, dtype=float)
        if noise.sigma_dir:
            y_d = y_d + rng.normal(0.0, noise.sigma_dir, 2)
        obs.y_d[i] = y_d
    # missed detections
    if noise.p_miss:
        for i in vis_ids:
            if rng.random() < noise.p_miss:
                obs.p_is_vis[i] = rng.uniform(0.0, 0.5)
    # false positives on invisible airways within 2 hops of a visible one
    if noise.p_false:
        near = set()
        for i in vis_set:
            for j in tree.airways:
                if j not in vis_set and generation_distance(tree, i, j) <= 2:
                    near.add(j)
        for j in sorted(near):
            if rng.random() < noise.p_false:
                obs.p_is_vis[j] = rng.uniform(0.5, 1.0)
                y_p, y_d = _camera_row(tree, pose, j)
                obs.y_p[j] = y_p + rng.normal(0.0, noise.sigma_pos, 3) if noise.sigma_pos else y_p
                obs.y_d[j] = y_d
    # sibling row swaps
    if noise.p_swap:
        for aid in tree.bifurcation_ids():
            ch = tree.airways[aid].children
            for a, b in zip(ch[:-1], ch[1:]):
                if rng.random() < noise.p_swap:
                    for arr in (obs.p_is_vis, obs.p_has_vis_child, obs.y_p, obs.y_d):
                        arr[[a, b]] = arr[[b, a]]
    return obs


def bifurcation_order_key(y_p: np.ndarray, y_d: Tuple[float, float]) -> Tuple[float, float]:
    """Ordering key: camera distance rounded to 1 mm, then angle to optical axis."""
    d = alpha_beta_to_direction(*y_d)
    angle = math.acos(max(-1.0, min(1.0, float(d[2]))))
    return (round(float(np.linalg.norm(y_p))), angle)


def oracle_bifurcationnet(
    pose: Pose,
    tree: AirwayTree,
    vis_cfg: VisibilityConfig,
    noise: NoiseConfig,
    rng: Optional[np.random.Generator] = None,
) -> UnlabeledObservation:
    """Emit up to 4 unlabeled airway rows ordered by the proximity key."""
    truth = ground_truth_observation(pose, vis_cfg, tree)
    if rng is None and not noise.is_zero:
        rng = noise.rng()
    rows = sorted(truth, key=lambda r: bifurcation_order_key(r.y_p, r.y_d))[:4]

    n = len(rows)
    p_vis = np.ones(n)
    p_child = np.zeros(n)
    y_p = np.zeros((n, 3))
    y_d = np.zeros((n, 2))
    for k, row in enumerate(rows):
        y_p[k] = row.y_p
        y_d[k] = row.y_d
        p_child[k] = 1.0 if row.has_vis_child else 0.0
    if not noise.is_zero:
        for k, row in enumerate(rows):
            p_vis[k] = rng.uniform(0.5, 1.0)
            p_child[k] = (
                rng.uniform(0.5, 1.0) if row.has_vis_child else rng.uniform(0.0, 0.5)
            )
        if noise.sigma_pos:
            y_p += rng.normal(0.0, noise.sigma_pos, (n, 3))
        if noise.sigma_dir:
            y_d += rng.normal(0.0, noise.sigma_dir, (n, 2))
        if noise.p_swap and n >= 2:
            id_of = {row.airway_id: k for k, row in enumerate(rows)}
            for aid in tree.bifurcation_ids():
                ch = tree.airways[aid].children
                for a, b in zip(ch[:-1], ch[1:]):
                    if a in id_of and b in id_of and rng.random() < noise.p_swap:
                        ka, kb = id_of[a], id_of[b]
                        for arr in (p_vis, p_child, y_p, y_d):
                            arr[[ka, kb]] = arr[[kb, ka]]
        if noise.p_miss:
            for k in range(n):
                if rng.random() < noise.p_miss:
                    p_vis[k] = rng.uniform(0.0, 0.5)
    return UnlabeledObservation(p_vis, p_child, y_p, y_d)


def _ce(label: float, p: float) -> float:
    """Two-sided binary cross entropy; exactly 0 at a saturated correct label."""
    term = 0.0
    if label > 0:
        term -= label * math.log(max(p, _CLAMP))
    if label < 1:
        term -= (1.0 - label) * math.log(max(1.0 - p, _CLAMP))
    return term


def airwaynet_loss(
    pred: ObservationMatrix,
    truth: Sequence[AirwayGroundTruth],
    w: LossWeights = LossWeights(),
    one_sided: bool = False,
) -> float:
    """Depth-weighted sum of classification cross entropy and L2 regression.

    Rows for invisible airways use the depth-weight floor c5 and incur no
    regression terms. `one_sided` keeps only the positive-class cross
    entropy terms (the literal displayed form).
    """
    if np.any(pred.p_is_vis < 0) or np.any(pred.p_is_vis > 1):
        raise PerceptionError("p_is_vis outside [0, 1]")
    if np.any(pred.p_has_vis_child < 0) or np.any(pred.p_has_vis_child > 1):
        raise PerceptionError("p_has_vis_child outside [0, 1]")
    by_id = {r.airway_id: r for r in truth}
    total = 0.0
    for i in range(pred.max_rows):
        row = by_id.get(i)
        if row is not None:
            y_vis, y_child = 1.0, (1.0 if row.has_vis_child else 0.0)
            f = max(w.c5, w.c6 - w.c7 * float(np.linalg.norm(row.y_p)))
        else:
            y_vis, y_child = 0.0, 0.0
            f = w.c5
        if one_sided:
            ce = 0.0
            if y_vis:
                ce += -w.c1 * math.log(max(pred.p_is_vis[i], _CLAMP))
            if y_child:
                ce += -w.c2 * math.log(max(pred.p_has_vis_child[i], _CLAMP))
        else:
            ce = w.c1 * _ce(y_vis, pred.p_is_vis[i]) + w.c2 * _ce(
                y_child, pred.p_has_vis_child[i]
            )
        reg = 0.0
        if row is not None:
            dp = pred.y_p[i] - row.y_p
            dd = pred.y_d[i] - np.asarray(row.y_d)
            reg = w.c3 * float(dp @ dp) + w.c4 * float(dd @ dd)
        total += f * (ce + reg)
    return total


def score_threshold_sweep(
    preds: Sequence[ObservationMatrix],
    truths: Sequence[Sequence[AirwayGroundTruth]],
    thresholds: Sequence[float],
) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """Per-airway (precision, recall) arrays over a threshold grid.

    Counts TP/FP/FN of p_isVis >= tau against ground truth across frames.
    Airways never visible and never scored are excluded. Precision at a
    threshold with no positive predictions is reported as 1.
    """
    if len(preds) == 0 or len(preds) != len(truths):
        raise PerceptionError("need equal-length non-empty prediction/truth sequences")
    thresholds = np.asarray(thresholds, dtype=float)
    n_frames = len(preds)
    max_rows = preds[0].max_rows
    scores = np.stack([p.p_is_vis for p in preds])  # (F, M)
    vis = np.zeros((n_frames, max_rows), dtype=bool)
    for f, rows in enumerate(truths):
        for r in rows:
            vis[f, r.airway_id] = True
    keep = vis.any(axis=0) | (scores > 0).any(axis=0)
    out: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for i in np.flatnonzero(keep):
        s = scores[:, i]
        v = vis[:, i]
        pred_pos = s[None, :] >= thresholds[:, None]  # (T, F)
        tp = (pred_pos & v[None, :]).sum(axis=1)
        fp = (pred_pos & ~v[None, :]).sum(axis=1)
        fn = ((~pred_pos) & v[None, :]).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
            recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        out[int(i)] = (precision, recall)
    return out
