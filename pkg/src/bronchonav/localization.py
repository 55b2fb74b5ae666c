"""6-DOF pose estimation in CT frame.

Two routes: the stateless labeled-observation path (skeleton consistency
check followed by rigid alignment of direction correspondences) and the
stateful bifurcation particle filter operating on unlabeled rows with a
prior built from insertion length, tree adjacency, position and roll
continuity.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    GeometryError,
    Pose,
    alpha_beta_to_direction,
    axis_rotation,
    minimal_rotation,
    pose_errors,
)
from .perception import ObservationMatrix, UnlabeledObservation
from .skeleton import AirwayTree, generation_distance, insertion_length_to_bifurcation

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class LocalizationError(ValueError):
    pass


def _normal_pdf(x: float, sigma: float) -> float:
    return math.exp(-0.5 * (x / sigma) ** 2) / (_SQRT_2PI * sigma)


@dataclass
class BifurcationMatch:
    """A labeled parent + children observation consistent with the skeleton."""

    parent_id: int
    child_ids: List[int]
    parent_dir_cam: np.ndarray         # (3,) unit, camera frame
    child_dirs_cam: np.ndarray         # (k, 3) unit, camera frame
    bif_point_cam: np.ndarray          # (3,) mm (parent y_p)


@dataclass(frozen=True)
class FilterConfig:
    n_candidates: int = 3
    sigma_fit: float = 0.1    # on 1 - cosine
    sigma_ins: float = 10.0   # mm
    sigma_x: float = 10.0     # mm
    sigma_r: float = 0.35     # rad
    threshold: float = 0.5

    def __post_init__(self):
        if min(self.sigma_fit, self.sigma_ins, self.sigma_x, self.sigma_r) <= 0:
            raise LocalizationError("all sigmas must be positive")
        if self.n_candidates < 1:
            raise LocalizationError("n_candidates must be >= 1")


@dataclass
class FilterState:
    """Particle-filter memory carried between frames."""

    config: FilterConfig = field(default_factory=FilterConfig)
    prev_pose: Optional[Pose] = None
    prev_visible_ids: List[int] = field(default_factory=list)


@dataclass
class PriorComponents:
    p_ins: float
    p_a: float
    p_x: float
    p_r: float

    @property
    def p_prior(self) -> float:
        return self.p_ins * self.p_a * self.p_x * self.p_r


def find_consistent_bifurcation(
    obs: ObservationMatrix, tree: AirwayTree, threshold: float = 0.5
) -> Optional[BifurcationMatch]:
    """Best labeled bifurcation whose visible children agree with the skeleton.

    Requires a row with p_hasVisChild >= threshold and at least two of its
    skeleton children with p_isVis >= threshold. Candidates are ranked by
    p_hasVisChild, ties by smaller camera distance of the bifurcation point.
    """
    candidates = []
    for i in np.flatnonzero(obs.p_has_vis_child >= threshold):
        i = int(i)
        if i not in tree:
            continue
        kids = [c for c in tree.airways[i].children if obs.p_is_vis[c] >= threshold]
        if len(kids) >= 2:
            candidates.append(
                (-obs.p_has_vis_child[i], float(np.linalg.norm(obs.y_p[i])), i, kids)
            )
    if not candidates:
        return None
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    _, _, parent, kids = candidates[0]
    return BifurcationMatch(
        parent_id=parent,
        child_ids=kids,
        parent_dir_cam=alpha_beta_to_direction(*obs.y_d[parent]),
        child_dirs_cam=np.stack([alpha_beta_to_direction(*obs.y_d[c]) for c in kids]),
        bif_point_cam=obs.y_p[parent].copy(),
    )


def _ct_directions(tree: AirwayTree, parent_id: int, child_ids: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    parent_dir = tree.airways[parent_id].distal_tangent
    child_dirs = np.stack([tree.airways[c].proximal_tangent for c in child_ids])
    return parent_dir, child_dirs


def align_pose(match: BifurcationMatch, tree: AirwayTree) -> Pose:
    """Back the camera pose out of a matched bifurcation.

    Solves the rotation minimizing the squared direction residuals over the
    parent + child pairs (orthogonal Procrustes), then places the camera so
    the observed bifurcation point maps onto the CT bifurcation point.
    """
    d_ct_parent, d_ct_children = _ct_directions(tree, match.parent_id, match.child_ids)
    d_ct = np.vstack([d_ct_parent[None, :], d_ct_children])
    d_cam = np.vstack([match.parent_dir_cam[None, :], match.child_dirs_cam])
    # degeneracy: all directions collinear leaves roll unconstrained
    spans = np.abs(np.cross(d_ct, d_ct[0])).max()
    if spans < 1e-6:
        raise LocalizationError("degenerate (collinear) direction set")
    b = d_ct.T @ d_cam
    u, _, vt = np.linalg.svd(b)
    r = u @ np.diag([1.0, 1.0, float(np.sign(np.linalg.det(u @ vt)))]) @ vt
    bif_ct = tree.airways[match.parent_id].distal
    position = bif_ct - r @ match.bif_point_cam
    return Pose(position, r)


def fit_probability(
    obs_parent_dir: np.ndarray,
    obs_child_dirs: np.ndarray,
    parent_id: int,
    tree: AirwayTree,
    sigma_fit: float = 0.1,
) -> Tuple[float, float, Tuple[int, ...]]:
    """Measurement fit of observed child directions against one CT bifurcation.

    For every injective assignment of observed children to skeleton
    children the parent axes are aligned and the roll about the parent axis
    minimizing the mean angular offset is found in closed form; the fit is
    the mean Gaussian density over the per-child (1 - cosine) residuals.
    Returns (p_fit, best_roll, best assignment as (observed-row index,
    skeleton child ID) pairs).
    """
    obs_child_dirs = np.atleast_2d(np.asarray(obs_child_dirs, dtype=float))
    if len(obs_child_dirs) < 2:
        raise LocalizationError("need >= 2 observed child directions")
    skel_children = tree.airways[parent_id].children
    if len(skel_children) < 2:
        raise LocalizationError(f"airway {parent_id} is not a bifurcation")
    d_ct_parent, _ = _ct_directions(tree, parent_id, skel_children)
    try:
        r0 = minimal_rotation(np.asarray(obs_parent_dir, dtype=float), d_ct_parent)
    except GeometryError:
        r0 = axis_rotation(_any_perp(d_ct_parent), math.pi)
    b_all = obs_child_dirs @ r0.T  # observed children in CT frame, roll-free
    axis = d_ct_parent

    n_obs = len(obs_child_dirs)
    if n_obs <= len(skel_children):
        assignments = [
            tuple(zip(range(n_obs), perm))
            for perm in itertools.permutations(skel_children, n_obs)
        ]
    else:
        assignments = [
            tuple(zip(obs_sel, skel_children))
            for obs_sel in itertools.permutations(range(n_obs), len(skel_children))
        ]
    best_p, best_roll, best_assign = -1.0, 0.0, ()
    for pairs in assignments:
        rows = [p[0] for p in pairs]
        cand_ids = tuple(p[1] for p in pairs)
        b = b_all[rows]
        c = np.stack([tree.airways[cid].proximal_tangent for cid in cand_ids])
        # sum_k c_k . R(axis, g) b_k = A + B cos g + C sin g
        ca = c @ axis
        ba = b @ axis
        coef_b = float(np.sum(np.einsum("ij,ij->i", c, b)) - np.sum(ca * ba))
        coef_c = float(
            np.sum(np.einsum("ij,ij->i", c, np.cross(np.broadcast_to(axis, b.shape), b)))
        )
        roll = math.atan2(coef_c, coef_b) if (coef_b or coef_c) else 0.0
        r_roll = axis_rotation(axis, roll)
        resid = 1.0 - np.einsum("ij,ij->i", c, b @ r_roll.T)
        p_fit = float(np.mean(np.exp(-0.5 * (resid / sigma_fit) ** 2))) / (
            _SQRT_2PI * sigma_fit
        )
        if p_fit > best_p or (
            p_fit == best_p and best_assign and cand_ids < tuple(p[1] for p in best_assign)
        ):
            best_p, best_roll, best_assign = p_fit, roll, pairs
    return best_p, best_roll, best_assign


def _any_perp(d: np.ndarray) -> np.ndarray:
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(a, d)
    return p / np.linalg.norm(p)


def _parent_row(obs: UnlabeledObservation, threshold: float) -> Optional[int]:
    ok = np.flatnonzero(
        (obs.p_has_vis_child >= threshold) & (obs.p_is_vis >= threshold)
    )
    if len(ok) == 0:
        return None
    return int(ok[np.argmax(obs.p_has_vis_child[ok])])


def prior_probability(
    candidate_id: int,
    tree: AirwayTree,
    u_ins: float,
    obs: UnlabeledObservation,
    state: FilterState,
) -> PriorComponents:
    """Prior of a candidate bifurcation: insertion length x tree adjacency x
    position continuity x roll continuity.

    With no filter history the adjacency, position and roll components are
    uninformative (1).
    """
    cfg = state.config
    parent_row = _parent_row(obs, cfg.threshold)
    y_pz = float(obs.y_p[parent_row][2]) if parent_row is not None else 0.0
    z_bif = insertion_length_to_bifurcation(tree, candidate_id)
    p_ins = _normal_pdf(u_ins + y_pz - z_bif, cfg.sigma_ins)

    if state.prev_pose is None or not state.prev_visible_ids:
        return PriorComponents(p_ins, 1.0, 1.0, 1.0)

    # adjacency: relative weight of this candidate among all airways
    num = sum(_p_gen(tree, j, candidate_id) for j in state.prev_visible_ids)
    denom = sum(
        _p_gen(tree, j, i)
        for i in tree.airways
        for j in state.prev_visible_ids
    )
    p_a = num / denom if denom > 0 else 0.0

    # position continuity: candidate-implied camera position vs previous estimate
    if parent_row is not None:
        x_tilde = tree.airways[candidate_id].distal - state.prev_pose.rotation @ obs.y_p[parent_row]
        p_x = _normal_pdf(
            float(np.linalg.norm(x_tilde - state.prev_pose.position)), cfg.sigma_x
        )
        # roll continuity: minimally correct the previous rotation so the
        # observed parent direction maps onto the candidate's parent axis,
        # then measure the residual roll of that correction
        d_obs_ct = state.prev_pose.rotation @ alpha_beta_to_direction(*obs.y_d[parent_row])
        try:
            r_min = minimal_rotation(d_obs_ct, tree.airways[candidate_id].distal_tangent)
            corrected = Pose(state.prev_pose.position, r_min @ state.prev_pose.rotation)
            _, _, e_r_deg = pose_errors(corrected, state.prev_pose)
            p_r = _normal_pdf(math.radians(e_r_deg), cfg.sigma_r)
        except GeometryError:
            p_r = _normal_pdf(math.pi, cfg.sigma_r)
    else:
        p_x = 1.0
        p_r = 1.0
    return PriorComponents(p_ins, p_a, p_x, p_r)


def _p_gen(tree: AirwayTree, i: int, j: int) -> float:
    d = generation_distance(tree, i, j)
    return 10.0 ** (1 - d) if d <= 3 else 0.0


def filter_step(
    obs: UnlabeledObservation,
    u_ins: float,
    tree: AirwayTree,
    state: FilterState,
    exhaustive: bool = False,
) -> Tuple[Optional[Pose], FilterState]:
    """One particle-filter update.

    When a bifurcation row and at least two child rows pass the visibility
    threshold, the top-prior candidate bifurcations are scored by
    posterior = fit x prior, the argmax is assigned and the pose backed
    out; otherwise no estimate is produced and the state is unchanged.
    `exhaustive` scores every bifurcation instead of the top n_candidates.
    """
    cfg = state.config
    parent_row = _parent_row(obs, cfg.threshold)
    if parent_row is None:
        return None, state
    child_rows = [
        k
        for k in range(len(obs))
        if k != parent_row and obs.p_is_vis[k] >= cfg.threshold
    ]
    if len(child_rows) < 2:
        return None, state

    obs_parent_dir = alpha_beta_to_direction(*obs.y_d[parent_row])
    obs_child_dirs = np.stack([alpha_beta_to_direction(*obs.y_d[k]) for k in child_rows])

    candidates = tree.bifurcation_ids()
    priors = {
        cid: prior_probability(cid, tree, u_ins, obs, state).p_prior
        for cid in candidates
    }
    if not exhaustive:
        candidates = sorted(candidates, key=lambda c: (-priors[c], c))[: cfg.n_candidates]

    best = None
    for cid in candidates:
        p_fit, _, assignment = fit_probability(
            obs_parent_dir, obs_child_dirs, cid, tree, cfg.sigma_fit
        )
        post = p_fit * priors[cid]
        if best is None or post > best[0] or (post == best[0] and cid < best[1]):
            best = (post, cid, assignment)
    if best is None or best[0] <= 0:
        return None, state
    _, winner, assignment = best

    match = BifurcationMatch(
        parent_id=winner,
        child_ids=[cid for _, cid in assignment],
        parent_dir_cam=obs_parent_dir,
        child_dirs_cam=obs_child_dirs[[row for row, _ in assignment]],
        bif_point_cam=obs.y_p[parent_row].copy(),
    )
    try:
        pose = align_pose(match, tree)
    except LocalizationError:
        return None, state
    new_state = FilterState(
        config=cfg,
        prev_pose=pose,
        prev_visible_ids=[winner, *(cid for _, cid in assignment)],
    )
    return pose, new_state
