"""Forward kinematics of the scope inside the airway tree, episode
orchestration for tracking and driving experiments, and replayable
JSON Lines episode logs."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import control
from .control import Command, ControllerConfig, SupervisorState, plan_trajectory, supervisor_step
from .geometry import (
    AirwayGroundTruth,
    Pose,
    VisibilityConfig,
    ground_truth_observation,
    rot_x,
    rot_y,
)
from .localization import (
    FilterState,
    align_pose,
    filter_step,
    find_consistent_bifurcation,
    LocalizationError,
)
from .perception import (
    NoiseConfig,
    ObservationMatrix,
    UnlabeledObservation,
    oracle_airwaynet,
    oracle_bifurcationnet,
)
from .skeleton import AirwayTree, tree_to_dict

CLAMP = "CLAMP"
SLIDE = "SLIDE"


@dataclass
class ScopeState:
    pose: Pose
    u_ins: float = 0.0        # cumulative commanded insertion, mm
    roll: float = 0.0         # rad, camera roll relative to tendon frame
    tendons: np.ndarray = field(default_factory=lambda: np.zeros(4))
    collisions: int = 0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02                 # s (50 Hz)
    max_steps: int = 5000
    heading_rate_limit: float = 1.5  # rad/s
    wall_mode: str = CLAMP
    gain: float = 0.5                # matches the controller's k
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.heading_rate_limit <= 0:
            raise ValueError("dt and heading_rate_limit must be positive")
        if self.wall_mode not in (CLAMP, SLIDE):
            raise ValueError("wall_mode must be CLAMP or SLIDE")


# ---------------------------------------------------------------------------
# lumen geometry

class _TreeSegments:
    """Flat segment arrays over all airway polylines, for nearest-point queries."""

    def __init__(self, tree: AirwayTree):
        a, d, ra, rb = [], [], [], []
        for aid in sorted(tree.airways):
            aw = tree.airways[aid]
            a.append(aw.centerline[:-1])
            d.append(np.diff(aw.centerline, axis=0))
            ra.append(aw.radius[:-1])
            rb.append(aw.radius[1:])
        self.a = np.concatenate(a)
        self.d = np.concatenate(d)
        self.len2 = np.einsum("ij,ij->i", self.d, self.d)
        self.ra = np.concatenate(ra)
        self.rb = np.concatenate(rb)


def _tree_segments(tree: AirwayTree) -> _TreeSegments:
    segs = getattr(tree, "_segment_cache", None)
    if segs is None:
        segs = _TreeSegments(tree)
        tree._segment_cache = segs
    return segs


def nearest_lumen_point(tree: AirwayTree, p: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """(foot point on nearest centerline, distance, local lumen radius)."""
    s = _tree_segments(tree)
    t = np.clip(np.einsum("ij,ij->i", p - s.a, s.d) / s.len2, 0.0, 1.0)
    foot = s.a + t[:, None] * s.d
    dist = np.linalg.norm(p - foot, axis=1)
    k = int(np.argmin(dist))
    radius = s.ra[k] + t[k] * (s.rb[k] - s.ra[k])
    return foot[k], float(dist[k]), float(radius)


def step(state: ScopeState, cmd: Command, tree: AirwayTree, cfg: SimConfig) -> ScopeState:
    """Advance the point-camera scope by one control period.

    The achieved heading change is the forward map of the tendon command,
    clipped to the heading rate limit; the position advances along the
    optical axis and is kept inside the lumen by projection.
    """
    e = (1.0 / cfg.gain) * (control._rot2(state.roll) @ (control.J @ cmd.du_tendons))
    mag = float(np.linalg.norm(e))
    limit = cfg.heading_rate_limit * cfg.dt
    if mag > limit:
        e = e * (limit / mag)
    d_alpha, d_beta = float(e[0]), float(e[1])
    rotation = state.pose.rotation @ rot_x(d_alpha) @ rot_y(d_beta)
    position = state.pose.position + rotation[:, 2] * (cmd.du_ins * cfg.dt)

    collisions = state.collisions
    foot, dist, radius = nearest_lumen_point(tree, position)
    if dist > radius:
        collisions += 1
        if cfg.wall_mode == SLIDE:
            # drop the outward component of this step's displacement, then
            # re-project in case the tangential remainder still exits
            outward = (position - foot) / dist
            disp = rotation[:, 2] * (cmd.du_ins * cfg.dt)
            position = position - max(0.0, float(disp @ outward)) * outward
            foot, dist, radius = nearest_lumen_point(tree, position)
        if dist > radius:
            position = foot + (position - foot) * (radius / dist)

    return ScopeState(
        pose=Pose(position, rotation),
        u_ins=max(0.0, state.u_ins + cmd.du_ins * cfg.dt),
        roll=state.roll,
        tendons=state.tendons + cmd.du_tendons,
        collisions=collisions,
    )


# ---------------------------------------------------------------------------
# episode logs

@dataclass
class Frame:
    t: float
    true_pose: Pose
    u_ins: float
    obs_rows: List[dict]                 # sparse observation rows
    gt_vis: List[int]
    gt_child: List[int]
    gt_bif_parent: Optional[int]
    estimate: Optional[Pose]
    assigned_parent: Optional[int]
    command: Optional[dict] = None
    mode: Optional[str] = None


@dataclass
class Outcome:
    success: bool = False
    completion_time: float = 0.0
    recoveries: int = 0
    collisions: int = 0


@dataclass
class EpisodeLog:
    header: dict
    frames: List[Frame]
    outcome: Outcome


def tree_hash(tree: AirwayTree) -> str:
    blob = json.dumps(tree_to_dict(tree), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _pose_dict(p: Optional[Pose]) -> Optional[dict]:
    if p is None:
        return None
    return {"position": p.position.tolist(), "rotation": p.rotation.tolist()}


def _pose_from(d: Optional[dict]) -> Optional[Pose]:
    if d is None:
        return None
    return Pose(np.array(d["position"]), np.array(d["rotation"]))


def _frame_dict(f: Frame) -> dict:
    return {
        "type": "frame",
        "t": f.t,
        "true_pose": _pose_dict(f.true_pose),
        "u_ins": f.u_ins,
        "obs_rows": f.obs_rows,
        "gt_vis": f.gt_vis,
        "gt_child": f.gt_child,
        "gt_bif_parent": f.gt_bif_parent,
        "estimate": _pose_dict(f.estimate),
        "assigned_parent": f.assigned_parent,
        "command": f.command,
        "mode": f.mode,
    }


def _frame_from(d: dict) -> Frame:
    return Frame(
        t=d["t"],
        true_pose=_pose_from(d["true_pose"]),
        u_ins=d["u_ins"],
        obs_rows=d["obs_rows"],
        gt_vis=d["gt_vis"],
        gt_child=d["gt_child"],
        gt_bif_parent=d["gt_bif_parent"],
        estimate=_pose_from(d["estimate"]),
        assigned_parent=d["assigned_parent"],
        command=d.get("command"),
        mode=d.get("mode"),
    )


def save_log(log: EpisodeLog, path) -> None:
    with open(path, "w") as f:
        for obj in (
            log.header,
            *map(_frame_dict, log.frames),
            {"type": "outcome", **dataclasses.asdict(log.outcome)},
        ):
            f.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
            f.write("\n")


def load_log(path, tree: Optional[AirwayTree] = None) -> EpisodeLog:
    header = None
    frames: List[Frame] = []
    outcome = Outcome()
    with open(path) as f:
        for line in f:
            d = json.loads(line)
            kind = d.get("type")
            if kind == "header":
                header = d
            elif kind == "frame":
                frames.append(_frame_from(d))
            elif kind == "outcome":
                d.pop("type")
                outcome = Outcome(**d)
    if header is None:
        raise ValueError(f"{path}: missing header record")
    if tree is not None and header.get("tree_hash") != tree_hash(tree):
        raise ValueError(f"{path}: tree hash mismatch")
    return EpisodeLog(header=header, frames=frames, outcome=outcome)


def log_to_bytes(log: EpisodeLog) -> bytes:
    import io

    buf = io.StringIO()
    for obj in (
        log.header,
        *map(_frame_dict, log.frames),
        {"type": "outcome", **dataclasses.asdict(log.outcome)},
    ):
        buf.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        buf.write("\n")
    return buf.getvalue().encode()


def _sparse_rows(obs: ObservationMatrix) -> List[dict]:
    rows = []
    for i in obs.nonzero_ids():
        i = int(i)
        rows.append(
            {
                "id": i,
                "p_vis": float(obs.p_is_vis[i]),
                "p_child": float(obs.p_has_vis_child[i]),
                "y_p": obs.y_p[i].tolist(),
                "y_d": obs.y_d[i].tolist(),
            }
        )
    return rows


def rows_to_matrix(rows: List[dict], max_rows: int) -> ObservationMatrix:
    obs = ObservationMatrix.zeros(max_rows)
    for r in rows:
        i = r["id"]
        obs.p_is_vis[i] = r["p_vis"]
        obs.p_has_vis_child[i] = r["p_child"]
        obs.y_p[i] = r["y_p"]
        obs.y_d[i] = r["y_d"]
    return obs


def _gt_summary(truth: List[AirwayGroundTruth], tree: AirwayTree):
    """(visible ids, hasVisChild ids, ground-truth nearest visible bifurcation parent)."""
    vis = [r.airway_id for r in truth]
    child = [r.airway_id for r in truth if r.has_vis_child]
    vis_set = set(vis)
    best = None
    for r in truth:
        if not r.has_vis_child:
            continue
        kids_vis = sum(1 for c in tree.airways[r.airway_id].children if c in vis_set)
        if kids_vis >= 2:
            d = float(np.linalg.norm(r.y_p))
            if best is None or d < best[0]:
                best = (d, r.airway_id)
    return vis, child, (best[1] if best else None)


# ---------------------------------------------------------------------------
# scripted paths and episode runners

def centerline_script(
    tree: AirwayTree,
    target_id: int,
    speed: float = 10.0,
    dt: float = 0.02,
    start_offset: float = 0.0,
) -> List[Tuple[Pose, float]]:
    """Pose sequence riding the centerline from the root to a target airway.

    The optical axis follows the local tangent; the transverse frame is
    parallel-transported to avoid roll flips. Returns (pose, insertion
    length) per frame.
    """
    path = plan_trajectory(tree, target_id).airway_ids
    pts = [tree.airways[path[0]].centerline]
    for aid in path[1:]:
        pts.append(tree.airways[aid].centerline[1:])
    polyline = np.concatenate(pts, axis=0)
    seg = np.diff(polyline, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    script: List[Tuple[Pose, float]] = []
    x_prev = None
    s = start_offset
    while s < total:
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        p = polyline[k] + (s - cum[k]) / seg_len[k] * seg[k]
        z = seg[k] / seg_len[k]
        if x_prev is None:
            pose = Pose.looking(p, z)
        else:
            x = x_prev - (x_prev @ z) * z
            n = np.linalg.norm(x)
            pose = Pose.looking(p, z, up_hint=x_prev if n > 1e-9 else (0.0, 1.0, 0.0))
        x_prev = pose.p_x
        script.append((pose, s))
        s += speed * dt
    return script


def airwaynet_localize(obs: ObservationMatrix, tree: AirwayTree, threshold: float = 0.5):
    """Stateless labeled-path localization: (pose estimate, assigned parent)."""
    match = find_consistent_bifurcation(obs, tree, threshold)
    if match is None:
        return None, None
    try:
        return align_pose(match, tree), match.parent_id
    except LocalizationError:
        return None, None


def run_tracking_episode(
    tree: AirwayTree,
    script: Sequence[Tuple[Pose, float]],
    vis_cfg: VisibilityConfig = VisibilityConfig(),
    noise: NoiseConfig = NoiseConfig(),
    sim_cfg: SimConfig = SimConfig(),
    localizer: str = "airwaynet",
    filter_config=None,
) -> EpisodeLog:
    """Replay a scripted pose path, run perception + localization per frame."""
    rng = noise.rng()
    frames: List[Frame] = []
    state = FilterState(config=filter_config) if filter_config else FilterState()
    for n, (pose, u_ins) in enumerate(script):
        truth = ground_truth_observation(pose, vis_cfg, tree)
        gt_vis, gt_child, gt_bif = _gt_summary(truth, tree)
        if localizer == "airwaynet":
            obs = oracle_airwaynet(pose, tree, vis_cfg, noise, rng)
            estimate, parent = airwaynet_localize(obs, tree)
            rows = _sparse_rows(obs)
        elif localizer == "bifurcationnet":
            uobs = oracle_bifurcationnet(pose, tree, vis_cfg, noise, rng)
            estimate, state = filter_step(uobs, u_ins, tree, state)
            parent = state.prev_visible_ids[0] if (estimate is not None and state.prev_visible_ids) else None
            rows = [
                {
                    "id": -1,
                    "p_vis": float(uobs.p_is_vis[k]),
                    "p_child": float(uobs.p_has_vis_child[k]),
                    "y_p": uobs.y_p[k].tolist(),
                    "y_d": uobs.y_d[k].tolist(),
                }
                for k in range(len(uobs))
            ]
        else:
            raise ValueError(f"unknown localizer {localizer!r}")
        frames.append(
            Frame(
                t=n * sim_cfg.dt,
                true_pose=pose,
                u_ins=u_ins,
                obs_rows=rows,
                gt_vis=gt_vis,
                gt_child=gt_child,
                gt_bif_parent=gt_bif,
                estimate=estimate,
                assigned_parent=parent,
            )
        )
    header = {
        "type": "header",
        "kind": "tracking",
        "localizer": localizer,
        "tree_hash": tree_hash(tree),
        "noise": dataclasses.asdict(noise),
        "sim": dataclasses.asdict(sim_cfg),
        "vis": dataclasses.asdict(vis_cfg),
    }
    return EpisodeLog(header=header, frames=frames, outcome=Outcome(success=True))


def run_driving_episode(
    tree: AirwayTree,
    targets: Sequence[int],
    vis_cfg: VisibilityConfig = VisibilityConfig(),
    noise: NoiseConfig = NoiseConfig(),
    ctrl_cfg: ControllerConfig = ControllerConfig(),
    sim_cfg: SimConfig = SimConfig(),
) -> EpisodeLog:
    """Closed loop: perception -> localization -> supervisor -> kinematics
    until all targets are reached (re-planning between targets) or timeout."""
    rng = noise.rng()
    root = tree.airways[tree.root_id]
    scope = ScopeState(pose=Pose.looking(root.centerline[0], root.proximal_tangent))
    target_iter = list(targets)
    trajectory = plan_trajectory(tree, target_iter[0])
    target_idx = 0
    sup = SupervisorState()
    recoveries = 0
    frames: List[Frame] = []
    success = False
    t = 0.0
    for n in range(sim_cfg.max_steps):
        t = n * sim_cfg.dt
        truth = ground_truth_observation(scope.pose, vis_cfg, tree)
        gt_vis, gt_child, gt_bif = _gt_summary(truth, tree)
        obs = oracle_airwaynet(scope.pose, tree, vis_cfg, noise, rng)
        estimate, parent = airwaynet_localize(obs, tree, ctrl_cfg.vis_threshold)
        cmd, sup = supervisor_step(
            estimate, obs, trajectory, tree, sup, ctrl_cfg, roll=scope.roll
        )
        frames.append(
            Frame(
                t=t,
                true_pose=scope.pose,
                u_ins=scope.u_ins,
                obs_rows=_sparse_rows(obs),
                gt_vis=gt_vis,
                gt_child=gt_child,
                gt_bif_parent=gt_bif,
                estimate=estimate,
                assigned_parent=parent,
                command={
                    "du_tendons": cmd.du_tendons.tolist(),
                    "du_ins": cmd.du_ins,
                },
                mode=cmd.mode,
            )
        )
        if sup.reached:
            recoveries += sup.recoveries
            target_idx += 1
            if target_idx >= len(target_iter):
                success = True
                break
            trajectory = plan_trajectory(tree, target_iter[target_idx])
            sup = SupervisorState()
            continue
        scope = step(scope, cmd, tree, sim_cfg)
    if not success:
        recoveries += sup.recoveries
    header = {
        "type": "header",
        "kind": "driving",
        "targets": list(target_iter),
        "tree_hash": tree_hash(tree),
        "noise": dataclasses.asdict(noise),
        "sim": dataclasses.asdict(sim_cfg),
        "vis": dataclasses.asdict(vis_cfg),
        "ctrl": dataclasses.asdict(ctrl_cfg),
    }
    outcome = Outcome(
        success=success,
        completion_time=t,
        recoveries=recoveries,
        collisions=scope.collisions,
    )
    return EpisodeLog(header=header, frames=frames, outcome=outcome)
