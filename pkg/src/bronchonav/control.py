"""Trajectory planning, the proportional view-angle / insertion-ramp
controller, and the supervisor handling bifurcation hand-off and the
reverse-and-reacquire recovery behavior."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .geometry import Pose, alpha_beta_to_direction, direction_to_alpha_beta
from .perception import ObservationMatrix
from .skeleton import AirwayTree, TreeError

FOLLOW = "FOLLOW"
RECOVER = "RECOVER"

# tendon Jacobian: two antagonistic pairs articulating (alpha, beta)
J = np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
J_PINV = J.T / 2.0  # J J^T = 2 I


class ControlError(ValueError):
    pass


class AirwayNotVisible(ControlError):
    """Raised by view_error when the active airway has no usable row;
    the supervisor treats it as a recovery trigger."""


@dataclass(frozen=True)
class Trajectory:
    airway_ids: Tuple[int, ...]
    target_id: int

    def __len__(self) -> int:
        return len(self.airway_ids)


@dataclass(frozen=True)
class ControllerConfig:
    k: float = 0.5              # proportional gain
    v_ins: float = 10.0         # mm/s
    e_max: float = math.pi / 2  # rad
    lookahead: float = 15.0     # mm
    handoff_dist: float = 15.0  # mm
    vis_threshold: float = 0.5

    def __post_init__(self):
        if min(self.k, self.v_ins, self.e_max, self.lookahead, self.handoff_dist) <= 0:
            raise ControlError("controller parameters must be positive")
        if self.e_max > math.pi:
            raise ControlError("e_max must be <= pi")


@dataclass
class Command:
    du_tendons: np.ndarray  # (4,) displacement increments
    du_ins: float           # mm/s, negative = retract
    mode: str = FOLLOW

    @classmethod
    def zero(cls, mode: str = FOLLOW) -> "Command":
        return cls(np.zeros(4), 0.0, mode)


@dataclass
class SupervisorState:
    active_idx: int = 0
    mode: str = FOLLOW
    reached: bool = False
    recoveries: int = 0


def plan_trajectory(tree: AirwayTree, target_id: int) -> Trajectory:
    """Unique root-to-target airway ID path."""
    path = tree.path_to_root(target_id)[::-1]
    return Trajectory(airway_ids=tuple(path), target_id=target_id)


def _aim_point(y_p: np.ndarray, y_d: Tuple[float, float], lookahead: float) -> np.ndarray:
    """Point on the observed airway segment whose camera distance is closest
    to `lookahead`.

    The segment is reconstructed from the furthest visible point backwards
    along the (distal-pointing) airway direction toward the camera.
    """
    d = alpha_beta_to_direction(*y_d)
    r = float(np.linalg.norm(y_p))
    if r == 0.0:
        return np.asarray(y_p, dtype=float)
    s_max = r  # no farther back than the camera itself
    # |y_p - s d|^2 = lookahead^2  ->  s^2 - 2 (y_p.d) s + r^2 - L^2 = 0
    pd = float(np.dot(y_p, d))
    disc = pd * pd - (r * r - lookahead * lookahead)
    # endpoints, the distance minimizer, and any exact lookahead crossings
    candidates = [0.0, s_max, min(max(pd, 0.0), s_max)]
    if disc >= 0.0:
        for s in (pd - math.sqrt(disc), pd + math.sqrt(disc)):
            if 0.0 <= s <= s_max:
                candidates.append(s)
    best = min(candidates, key=lambda s: abs(np.linalg.norm(y_p - s * d) - lookahead))
    return y_p - best * d


def view_error(
    pose_estimate: Optional[Pose],
    obs: ObservationMatrix,
    active_id: int,
    cfg: ControllerConfig,
) -> Tuple[float, float]:
    """(d_alpha, d_beta) toward the aim point on the active airway."""
    if obs.p_is_vis[active_id] < cfg.vis_threshold:
        raise AirwayNotVisible(f"airway {active_id} not visible")
    aim = _aim_point(obs.y_p[active_id], tuple(obs.y_d[active_id]), cfg.lookahead)
    n = np.linalg.norm(aim)
    if n == 0.0:
        return 0.0, 0.0
    return direction_to_alpha_beta(aim / n)


def _rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def tendon_command(d_alpha: float, d_beta: float, roll: float, cfg: ControllerConfig) -> np.ndarray:
    """du = k J^+ R_theta^T (d_alpha, d_beta); satisfies the forward identity
    (1/k) R_theta J du = (d_alpha, d_beta) exactly."""
    e = _rot2(roll).T @ np.array([d_alpha, d_beta])
    return cfg.k * (J_PINV @ e)


def insertion_command(d_alpha: float, d_beta: float, cfg: ControllerConfig) -> float:
    """Linear insertion ramp: full speed at zero view error, zero at e_max."""
    e = math.hypot(d_alpha, d_beta)
    return max(0.0, cfg.v_ins * (1.0 - e / cfg.e_max))


def supervisor_step(
    estimate: Optional[Pose],
    obs: ObservationMatrix,
    trajectory: Trajectory,
    tree: AirwayTree,
    state: SupervisorState,
    cfg: ControllerConfig,
    roll: float = 0.0,
) -> Tuple[Command, SupervisorState]:
    """One supervisory decision: follow the trajectory, hand off at
    bifurcations, flag the target, or retract and re-aim in recovery."""
    if len(trajectory) == 0:
        raise ControlError("empty trajectory")
    ids = trajectory.airway_ids
    visible = [i for i, aid in enumerate(ids) if obs.p_is_vis[aid] >= cfg.vis_threshold]
    state = replace(state)

    if not visible:
        if state.mode != RECOVER:
            state.mode = RECOVER
            state.recoveries += 1
        # aim at the nearest visible airway, if any
        vis_rows = obs.visible_ids(cfg.vis_threshold)
        da = db = 0.0
        if len(vis_rows):
            nearest = int(vis_rows[np.argmin(np.linalg.norm(obs.y_p[vis_rows], axis=1))])
            aim = obs.y_p[nearest]
            n = np.linalg.norm(aim)
            if n > 0:
                da, db = direction_to_alpha_beta(aim / n)
        return Command(tendon_command(da, db, roll, cfg), -cfg.v_ins, RECOVER), state

    if state.mode == RECOVER:
        # re-acquired a trajectory airway: resume; advancement stays gated
        # on the hand-off rule below
        state.mode = FOLLOW

    active = ids[state.active_idx]
    # distance to the active airway's distal bifurcation
    dist = None
    if estimate is not None:
        dist = float(np.linalg.norm(estimate.position - tree.airways[active].distal))
    elif obs.p_is_vis[active] >= cfg.vis_threshold:
        dist = float(np.linalg.norm(obs.y_p[active]))

    # hand off to the next trajectory airway
    if (
        state.active_idx + 1 < len(ids)
        and dist is not None
        and dist <= cfg.handoff_dist
        and obs.p_is_vis[ids[state.active_idx + 1]] >= cfg.vis_threshold
    ):
        state.active_idx += 1
        active = ids[state.active_idx]
        if estimate is not None:
            dist = float(np.linalg.norm(estimate.position - tree.airways[active].distal))
        elif obs.p_is_vis[active] >= cfg.vis_threshold:
            dist = float(np.linalg.norm(obs.y_p[active]))
        else:
            dist = None

    # terminal condition
    if active == trajectory.target_id and dist is not None and dist <= cfg.handoff_dist:
        state.reached = True
        return Command.zero(FOLLOW), state

    # steer at the active airway; if its row is missing this frame, fall
    # back to the deepest visible trajectory airway so the view recenters
    if state.active_idx in visible:
        steer_id = active
    else:
        steer_id = ids[visible[-1]]
    try:
        da, db = view_error(estimate, obs, steer_id, cfg)
    except AirwayNotVisible:
        da = db = 0.0
    return Command(tendon_command(da, db, roll, cfg), insertion_command(da, db, cfg), FOLLOW), state
