"""Camera pose, field-of-view visibility model, ground-truth airway
observations in camera frame, and the pose error metrics (e_p, e_d, e_r)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .skeleton import AirwayTree

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(eq=False)
class Pose:
    """6-DOF camera location in CT frame.

    `rotation` columns are the camera axes p_x, p_y, p_z expressed in CT
    frame (p_z = optical axis); it maps camera-frame vectors to CT frame.
    """

    position: np.ndarray  # (3,) mm
    rotation: np.ndarray  # (3, 3)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        err = np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3)))
        if err > 1e-6:
            raise GeometryError(f"rotation not orthonormal (error {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise GeometryError("rotation must be proper (det = +1)")

    @property
    def p_x(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def p_y(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def p_z(self) -> np.ndarray:
        return self.rotation[:, 2]

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        """CT-frame points -> camera frame."""
        return (np.asarray(pts) - self.position) @ self.rotation

    def to_ct(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.position

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.position, other.position) and np.array_equal(
            self.rotation, other.rotation
        )

    @classmethod
    def looking(cls, position, p_z, up_hint=(1.0, 0.0, 0.0)) -> "Pose":
        """Pose at `position` with optical axis `p_z`; p_x chosen from `up_hint`
        projected perpendicular to p_z."""
        z = np.asarray(p_z, dtype=float)
        z = z / np.linalg.norm(z)
        x = np.asarray(up_hint, dtype=float)
        x = x - (x @ z) * z
        n = np.linalg.norm(x)
        if n < 1e-9:
            x = np.array([0.0, 1.0, 0.0]) - (np.array([0.0, 1.0, 0.0]) @ z) * z
            n = np.linalg.norm(x)
        x /= n
        y = np.cross(z, x)
        return cls(np.asarray(position, dtype=float), np.column_stack([x, y, z]))


@dataclass(frozen=True)
class VisibilityConfig:
    """Field of view (full cone apex angle) and max viewing distance."""

    fov_full_angle: float = math.radians(60.0)
    max_dist: float = 30.0  # mm

    def __post_init__(self):
        if not (0 < self.fov_full_angle < math.pi):
            raise GeometryError("fov_full_angle must be in (0, pi)")
        if self.max_dist <= 0:
            raise GeometryError("max_dist must be positive")


@dataclass
class AirwayGroundTruth:
    """Per-airway ground-truth observation row (emitted only when visible)."""

    airway_id: int
    is_vis: bool
    has_vis_child: bool
    y_p: np.ndarray  # (3,) camera frame, furthest visible centerline point
    y_d: Tuple[float, float]  # (alpha, beta) rad


def point_visible(pose: Pose, cfg: VisibilityConfig, q) -> bool:
    """True iff CT point q is in front of the camera, inside the FOV cone
    and within max_dist."""
    qc = pose.to_camera(np.asarray(q, dtype=float))
    r = np.linalg.norm(qc)
    if qc[2] <= 0 or r > cfg.max_dist or r == 0:
        return False
    return bool(qc[2] >= r * math.cos(cfg.fov_full_angle / 2.0))


def direction_to_alpha_beta(d) -> Tuple[float, float]:
    """Unit camera-frame direction -> (alpha, beta) with
    R_x(alpha) R_y(beta) z_hat = d."""
    d = np.asarray(d, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise GeometryError("direction must be a unit vector")
    if abs(d[0]) >= 1.0 - 1e-12:
        raise GeometryError("gimbal-degenerate direction (|d_x| = 1)")
    beta = math.asin(max(-1.0, min(1.0, d[0])))
    alpha = math.atan2(-d[1], d[2])
    return alpha, beta


def alpha_beta_to_direction(alpha: float, beta: float) -> np.ndarray:
    sa, ca = math.sin(alpha), math.cos(alpha)
    sb, cb = math.sin(beta), math.cos(beta)
    return np.array([sb, -sa * cb, ca * cb])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def minimal_rotation(a, b) -> np.ndarray:
    """Minimal (geodesic) rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-12:
        raise GeometryError("antiparallel vectors: minimal rotation undefined")
    v = np.cross(a, b)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def axis_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    kx = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * kx @ kx


def _angle_between_deg(a: np.ndarray, b: np.ndarray) -> float:
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def pose_errors(a: Pose, b: Pose) -> Tuple[float, float, float]:
    """(e_p mm, e_d deg, e_r deg) between two poses.

    e_r compares the p_x axes after the pointing axes are aligned by the
    minimal rotation taking b.p_z onto a.p_z; undefined at e_d = 180 deg.
    """
    e_p = float(np.linalg.norm(a.position - b.position))
    e_d = _angle_between_deg(a.p_z, b.p_z)
    r_align = minimal_rotation(b.p_z, a.p_z)
    e_r = _angle_between_deg(a.p_x, r_align @ b.p_x)
    return e_p, e_d, e_r


# ---------------------------------------------------------------------------
# dense centerline sampling (cached per tree) and ground-truth observation

_SAMPLE_SPACING = 0.5  # mm


class _TreeSamples:
    """Flat arrays of <=0.5 mm-spaced centerline samples for one tree."""

    def __init__(self, tree: AirwayTree):
        ids = sorted(tree.airways)
        pts: List[np.ndarray] = []
        tans: List[np.ndarray] = []
        starts = []
        n = 0
        for aid in ids:
            cl = tree.airways[aid].centerline
            seg_pts = [cl[:1]]
            seg_tans = []
            for k in range(len(cl) - 1):
                d = cl[k + 1] - cl[k]
                length = np.linalg.norm(d)
                m = max(1, int(math.ceil(length / _SAMPLE_SPACING)))
                ts = np.linspace(0.0, 1.0, m + 1)[1:, None]
                seg_pts.append(cl[k] + ts * d)
                seg_tans.append(np.repeat((d / length)[None, :], m, axis=0))
            p = np.concatenate(seg_pts, axis=0)
            t = np.concatenate(seg_tans, axis=0)
            # tangent at a sample points distally; the shared proximal sample
            # uses the first segment's direction
            t = np.concatenate([t[:1], t], axis=0)
            pts.append(p)
            tans.append(t)
            starts.append(n)
            n += len(p)
        self.ids = np.array(ids)
        self.points = np.concatenate(pts, axis=0)
        self.tangents = np.concatenate(tans, axis=0)
        self.starts = np.array(starts)
        self.airway_index = np.repeat(np.arange(len(ids)), np.diff(np.append(self.starts, n)))
        self.distal = np.stack([tree.airways[a].distal for a in ids])
        self.has_children = np.array([len(tree.airways[a].children) > 0 for a in ids])


def tree_samples(tree: AirwayTree) -> _TreeSamples:
    cache = getattr(tree, "_sample_cache", None)
    if cache is None:
        cache = _TreeSamples(tree)
        tree._sample_cache = cache
    return cache


def ground_truth_observation(
    pose: Pose, cfg: VisibilityConfig, tree: AirwayTree
) -> List[AirwayGroundTruth]:
    """Ground-truth rows for all visible airways.

    An airway is visible when any <=0.5 mm-spaced centerline sample lies in
    the camera's cone; y_p is the furthest visible sample (camera-frame
    norm, ties broken by larger arc length) and y_d the distal-pointing
    tangent there. has_vis_child requires the distal bifurcation point to
    be visible and the airway to have children.
    """
    s = tree_samples(tree)
    qc = s.points @ pose.rotation - (pose.position @ pose.rotation)
    dist = np.linalg.norm(qc, axis=1)
    cos_half = math.cos(cfg.fov_full_angle / 2.0)
    with np.errstate(invalid="ignore"):
        visible = (qc[:, 2] > 0) & (dist <= cfg.max_dist) & (qc[:, 2] >= dist * cos_half)
    n_air = len(s.ids)
    bounds = np.append(s.starts, len(visible))
    any_vis = np.bitwise_or.reduceat(visible, s.starts)
    score = np.where(visible, dist, -1.0)
    seg_max = np.maximum.reduceat(score, s.starts)
    # last index attaining the per-airway max (larger arc length wins ties)
    idx_candidates = np.where(
        visible & (score == seg_max[s.airway_index]), np.arange(len(score)), -1
    )
    best_idx = np.maximum.reduceat(idx_candidates, s.starts)

    # distal-point visibility for has_vis_child
    dc = s.distal @ pose.rotation - (pose.position @ pose.rotation)
    ddist = np.linalg.norm(dc, axis=1)
    distal_vis = (dc[:, 2] > 0) & (ddist <= cfg.max_dist) & (dc[:, 2] >= ddist * cos_half)

    out: List[AirwayGroundTruth] = []
    for k in np.flatnonzero(any_vis):
        bi = int(best_idx[k])
        tan_cam = s.tangents[bi] @ pose.rotation
        try:
            y_d = direction_to_alpha_beta(tan_cam)
        except GeometryError:
            continue  # tangent perpendicular-degenerate; skip row
        out.append(
            AirwayGroundTruth(
                airway_id=int(s.ids[k]),
                is_vis=True,
                has_vis_child=bool(distal_vis[k] and s.has_children[k]),
                y_p=qc[bi].copy(),
                y_d=y_d,
            )
        )
    return out
