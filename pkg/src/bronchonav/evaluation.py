"""Metrics over episode logs: per-airway F1, macro-averaged precision-recall
curves with AUC, tracking-error reports on correctly-labeled bifurcation
frames, and driving success statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import pose_errors
from .simulator import EpisodeLog, Frame

DEFAULT_THRESHOLDS = np.round(np.linspace(1.0, 0.0, 101), 2)  # descending grid


class EvaluationError(ValueError):
    pass


@dataclass
class AirwayClassStats:
    airway_id: int
    frames_visible: int
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0


@dataclass
class PRCurve:
    thresholds: np.ndarray  # descending
    precision: np.ndarray   # macro-averaged (headline)
    recall: np.ndarray
    auc: float
    micro_precision: Optional[np.ndarray] = None  # pooled counts
    micro_recall: Optional[np.ndarray] = None
    micro_auc: Optional[float] = None


@dataclass
class TrackingReport:
    e_p: np.ndarray  # mm, per qualifying frame
    e_d: np.ndarray  # deg
    e_r: np.ndarray  # deg

    @property
    def n_frames(self) -> int:
        return len(self.e_p)

    def summary(self) -> dict:
        if self.n_frames == 0:
            return {"n_frames": 0}
        out = {"n_frames": self.n_frames}
        for name, arr in (("e_p", self.e_p), ("e_d", self.e_d), ("e_r", self.e_r)):
            out[name] = {
                "mean": float(np.mean(arr)),
                "median": float(np.median(arr)),
                "std": float(np.std(arr)),
            }
        return out


def _frame_scores(frame: Frame) -> Dict[int, float]:
    return {r["id"]: r["p_vis"] for r in frame.obs_rows if r["id"] >= 0}


def per_airway_f1(log: EpisodeLog, threshold: float = 0.5) -> List[AirwayClassStats]:
    """TP/FP/FN and F1 per airway across frames at one threshold.

    Airways never visible and never predicted are excluded.
    """
    if not log.frames:
        raise EvaluationError("empty log")
    counts: Dict[int, AirwayClassStats] = {}

    def stat(aid: int) -> AirwayClassStats:
        if aid not in counts:
            counts[aid] = AirwayClassStats(aid, 0, 0, 0, 0)
        return counts[aid]

    for frame in log.frames:
        scores = _frame_scores(frame)
        vis = set(frame.gt_vis)
        for aid in vis | set(scores):
            predicted = scores.get(aid, 0.0) >= threshold
            s = stat(aid)
            if aid in vis:
                s.frames_visible += 1
                if predicted:
                    s.tp += 1
                else:
                    s.fn += 1
            elif predicted:
                s.fp += 1
    return [counts[a] for a in sorted(counts) if counts[a].frames_visible or counts[a].tp or counts[a].fp]


def _per_airway_pr(
    logs: Sequence[EpisodeLog], thresholds: np.ndarray
) -> Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per-airway (tp, fp, fn) count arrays over a descending threshold grid,
    restricted to airways with visible support."""
    vis_scores: Dict[int, List[float]] = {}
    invis_scores: Dict[int, List[float]] = {}
    n_frames = 0
    support: set = set()
    for log in logs:
        for frame in log.frames:
            n_frames += 1
            scores = _frame_scores(frame)
            vis = set(frame.gt_vis)
            support |= vis
            for aid in vis:
                vis_scores.setdefault(aid, []).append(scores.get(aid, 0.0))
            for aid, s in scores.items():
                if aid not in vis:
                    invis_scores.setdefault(aid, []).append(s)
    if not support:
        raise EvaluationError("no airway with visible support")
    out = {}
    for aid in sorted(support):
        sv = np.sort(np.asarray(vis_scores.get(aid, []), dtype=float))
        si_list = invis_scores.get(aid, [])
        n_invis_total = n_frames - len(sv)
        si = np.sort(np.asarray(si_list, dtype=float))
        n_invis_zero = n_invis_total - len(si)  # frames with implicit score 0
        tp = len(sv) - np.searchsorted(sv, thresholds, side="left")
        fp = len(si) - np.searchsorted(si, thresholds, side="left")
        fp = fp + np.where(thresholds <= 0.0, n_invis_zero, 0)
        fn = len(sv) - tp
        out[aid] = (tp, fp, fn)
    return out


def _pr_from_counts(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
    recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
    return precision, recall


def _anchored_auc(precision: np.ndarray, recall: np.ndarray) -> float:
    # thresholds descend, so recall ascends along the array
    r_pts = np.concatenate([[0.0], recall])
    p_pts = np.concatenate([[precision[0]], precision])
    return float(np.sum(np.diff(r_pts) * (p_pts[1:] + p_pts[:-1]) / 2.0))


def averaged_pr_curve(
    logs: Sequence[EpisodeLog], thresholds: Optional[np.ndarray] = None
) -> PRCurve:
    """Macro-average of per-airway precision and recall on a fixed threshold
    grid; AUC by trapezoid over the recall-sorted averaged curve anchored
    at recall 0."""
    if not logs:
        raise EvaluationError("no logs")
    thresholds = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    counts = _per_airway_pr(logs, thresholds)
    per_airway = [_pr_from_counts(tp, fp, fn) for tp, fp, fn in counts.values()]
    precision = np.mean([p for p, _ in per_airway], axis=0)
    recall = np.mean([r for _, r in per_airway], axis=0)
    tp_all = np.sum([tp for tp, _, _ in counts.values()], axis=0)
    fp_all = np.sum([fp for _, fp, _ in counts.values()], axis=0)
    fn_all = np.sum([fn for _, _, fn in counts.values()], axis=0)
    micro_p, micro_r = _pr_from_counts(tp_all, fp_all, fn_all)
    return PRCurve(
        thresholds=thresholds,
        precision=precision,
        recall=recall,
        auc=_anchored_auc(precision, recall),
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_auc=_anchored_auc(micro_p, micro_r),
    )


def tracking_report(log: EpisodeLog) -> TrackingReport:
    """Pose errors restricted to frames where the assigned bifurcation
    parent matches the ground-truth nearest visible bifurcation."""
    e_p, e_d, e_r = [], [], []
    for frame in log.frames:
        if (
            frame.estimate is None
            or frame.assigned_parent is None
            or frame.gt_bif_parent is None
            or frame.assigned_parent != frame.gt_bif_parent
        ):
            continue
        ep, ed, er = pose_errors(frame.true_pose, frame.estimate)
        e_p.append(ep)
        e_d.append(ed)
        e_r.append(er)
    return TrackingReport(np.asarray(e_p), np.asarray(e_d), np.asarray(e_r))


def driving_summary(logs: Sequence[EpisodeLog]) -> dict:
    """Success counts and completion-time statistics (small-n sample std)."""
    if not logs:
        raise EvaluationError("no driving logs")
    successes = [log for log in logs if log.outcome.success]
    times = np.asarray([log.outcome.completion_time for log in successes])
    std = float(np.std(times, ddof=1)) if len(times) > 1 else 0.0
    return {
        "trials": len(logs),
        "successes": len(successes),
        "completion_time_mean": float(np.mean(times)) if len(times) else float("nan"),
        "completion_time_std": std if len(times) else float("nan"),
        "recoveries": int(sum(log.outcome.recoveries for log in logs)),
        "collisions": int(sum(log.outcome.collisions for log in logs)),
    }
