"""Branched airway centerline tree: structure, queries, generation and JSON I/O.

The tree is the "lung skeleton": directed centerline polylines with
parent/child links, per-point lumen radii and dense integer IDs
(0 = trachea). All coordinates are millimetres in the fixed CT frame.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

DEFAULT_MAX_ROWS = 500

_SHARED_POINT_TOL = 1e-9


class TreeError(ValueError):
    """Malformed tree structure, unknown airway ID, or bad tree file."""


@dataclass(eq=False)
class Airway:
    """One branch segment: centerline polyline plus lumen radii.

    The first centerline point is the proximal end (the parent's
    bifurcation point, shared exactly); the last is the distal end.
    """

    id: int
    parent: Optional[int]
    children: List[int]
    centerline: np.ndarray  # (N, 3) mm
    radius: np.ndarray      # (N,) mm

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        self.radius = np.asarray(self.radius, dtype=float)
        if self.centerline.ndim != 2 or self.centerline.shape[1] != 3:
            raise TreeError(f"airway {self.id}: centerline must be (N, 3)")
        if self.centerline.shape[0] < 2:
            raise TreeError(f"airway {self.id}: centerline needs >= 2 points")
        if self.radius.shape != (self.centerline.shape[0],):
            raise TreeError(f"airway {self.id}: radius length mismatch")
        if np.any(self.radius <= 0):
            raise TreeError(f"airway {self.id}: radii must be positive")
        seg = np.diff(self.centerline, axis=0)
        if np.any(np.linalg.norm(seg, axis=1) == 0):
            raise TreeError(f"airway {self.id}: repeated centerline point")

    @property
    def proximal(self) -> np.ndarray:
        return self.centerline[0]

    @property
    def distal(self) -> np.ndarray:
        return self.centerline[-1]

    @property
    def distal_tangent(self) -> np.ndarray:
        """Unit direction of the last centerline segment."""
        d = self.centerline[-1] - self.centerline[-2]
        return d / np.linalg.norm(d)

    @property
    def proximal_tangent(self) -> np.ndarray:
        """Unit direction of the first centerline segment."""
        d = self.centerline[1] - self.centerline[0]
        return d / np.linalg.norm(d)

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1).sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Airway):
            return NotImplemented
        return (
            self.id == other.id
            and self.parent == other.parent
            and self.children == other.children
            and np.array_equal(self.centerline, other.centerline)
            and np.array_equal(self.radius, other.radius)
        )


@dataclass(eq=False)
class AirwayTree:
    """Immutable-after-construction airway tree with precomputed path queries."""

    airways: Dict[int, Airway]
    root_id: int
    max_rows: int = DEFAULT_MAX_ROWS

    def __post_init__(self):
        self._validate()
        # depth of each node (root = 0) and cumulative root-to-distal arc length
        self._depth: Dict[int, int] = {}
        self._z_bif: Dict[int, float] = {}
        stack = [(self.root_id, 0, 0.0)]
        while stack:
            aid, depth, z = stack.pop()
            a = self.airways[aid]
            self._depth[aid] = depth
            z_here = z + a.arc_length()
            self._z_bif[aid] = z_here
            for c in a.children:
                stack.append((c, depth + 1, z_here))

    def _validate(self):
        if self.root_id not in self.airways:
            raise TreeError(f"root id {self.root_id} not present")
        if len(self.airways) > self.max_rows:
            raise TreeError(
                f"{len(self.airways)} airways exceed max_rows={self.max_rows}"
            )
        roots = [a.id for a in self.airways.values() if a.parent is None]
        if roots != [self.root_id] and set(roots) != {self.root_id}:
            raise TreeError(f"expected exactly one root {self.root_id}, found {roots}")
        for a in self.airways.values():
            if a.id in a.children:
                raise TreeError(f"airway {a.id} lists itself as child")
            for c in a.children:
                child = self.airways.get(c)
                if child is None:
                    raise TreeError(f"airway {a.id} references unknown child {c}")
                if child.parent != a.id:
                    raise TreeError(
                        f"airway {c}: parent field {child.parent} != {a.id}"
                    )
                if np.max(np.abs(child.centerline[0] - a.centerline[-1])) > _SHARED_POINT_TOL:
                    raise TreeError(
                        f"airway {c}: proximal point not shared with parent {a.id}"
                    )
            if a.parent is not None:
                p = self.airways.get(a.parent)
                if p is None:
                    raise TreeError(f"airway {a.id}: unknown parent {a.parent}")
                if a.id not in p.children:
                    raise TreeError(f"airway {a.id} missing from parent's child list")
        # reachability from root also rules out cycles
        seen = set()
        stack = [self.root_id]
        while stack:
            aid = stack.pop()
            if aid in seen:
                raise TreeError(f"cycle detected at airway {aid}")
            seen.add(aid)
            stack.extend(self.airways[aid].children)
        if seen != set(self.airways):
            raise TreeError(f"airways unreachable from root: {sorted(set(self.airways) - seen)}")

    def __len__(self) -> int:
        return len(self.airways)

    def __contains__(self, aid: int) -> bool:
        return aid in self.airways

    def __getitem__(self, aid: int) -> Airway:
        try:
            return self.airways[aid]
        except KeyError:
            raise TreeError(f"unknown airway id {aid}") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, AirwayTree):
            return NotImplemented
        return (
            self.root_id == other.root_id
            and self.max_rows == other.max_rows
            and self.airways == other.airways
        )

    def ids(self) -> List[int]:
        return sorted(self.airways)

    def depth_of(self, aid: int) -> int:
        if aid not in self.airways:
            raise TreeError(f"unknown airway id {aid}")
        return self._depth[aid]

    def bifurcation_ids(self) -> List[int]:
        """Airways with at least two children (candidate bifurcations)."""
        return sorted(a.id for a in self.airways.values() if len(a.children) >= 2)

    def path_to_root(self, aid: int) -> List[int]:
        """IDs from `aid` up to (and including) the root."""
        if aid not in self.airways:
            raise TreeError(f"unknown airway id {aid}")
        path = [aid]
        while self.airways[path[-1]].parent is not None:
            path.append(self.airways[path[-1]].parent)
        return path


def generation_distance(tree: AirwayTree, i: int, j: int) -> int:
    """Undirected hop distance between airway nodes i and j.

    "Generations removed" between two airways; symmetric, d(i, i) = 0.
    """
    di, dj = tree.depth_of(i), tree.depth_of(j)
    hops = 0
    while di > dj:
        i = tree.airways[i].parent
        di -= 1
        hops += 1
    while dj > di:
        j = tree.airways[j].parent
        dj -= 1
        hops += 1
    while i != j:
        i = tree.airways[i].parent
        j = tree.airways[j].parent
        hops += 2
    return hops


def insertion_length_to_bifurcation(tree: AirwayTree, i: int) -> float:
    """Arc length from the root's proximal point to airway i's distal point (mm)."""
    if i not in tree.airways:
        raise TreeError(f"unknown airway id {i}")
    return tree._z_bif[i]


@dataclass(frozen=True)
class TreeGenConfig:
    """Synthetic binary-tree generation parameters."""

    depth: int
    branch_angle_range: Tuple[float, float] = (0.4, 0.9)  # rad off parent axis
    length_range: Tuple[float, float] = (20.0, 40.0)      # mm per airway
    radius_decay: float = 0.8                             # per generation
    seed: int = 0
    root_radius: float = 6.0                              # mm
    points_per_airway: int = 5
    max_airways: Optional[int] = None
    max_rows: int = DEFAULT_MAX_ROWS

    def validate(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        lo, hi = self.branch_angle_range
        if not (0 < lo < hi < math.pi / 2):
            raise ValueError("branch_angle_range must satisfy 0 < lo < hi < pi/2")
        lo, hi = self.length_range
        if not (0 < lo < hi):
            raise ValueError("length_range must satisfy 0 < lo < hi")
        if not (0 < self.radius_decay <= 1):
            raise ValueError("radius_decay must be in (0, 1]")
        if self.root_radius <= 0:
            raise ValueError("root_radius must be positive")
        if self.points_per_airway < 2:
            raise ValueError("points_per_airway must be >= 2")


def _perp_basis(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, d)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return u, v


def generate_tree(cfg: TreeGenConfig) -> AirwayTree:
    """Procedurally grow a binary airway tree; deterministic for a fixed seed.

    Airways are straight polylines; sibling branch directions sit on
    opposite azimuths so their separation is at least twice the minimum
    branch angle.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    airways: Dict[int, Airway] = {}
    next_id = 0
    # breadth-first growth so the max_airways cap keeps the tree balanced
    queue: List[Tuple[Optional[int], np.ndarray, np.ndarray, int]] = [
        (None, np.zeros(3), np.array([0.0, 0.0, 1.0]), 1)
    ]
    cap = cfg.max_airways if cfg.max_airways is not None else 2 ** cfg.depth - 1
    while queue and next_id < cap:
        parent, start, direction, gen = queue.pop(0)
        length = rng.uniform(*cfg.length_range)
        ts = np.linspace(0.0, 1.0, cfg.points_per_airway)[:, None]
        centerline = start + ts * (length * direction)
        radius = np.full(cfg.points_per_airway, cfg.root_radius * cfg.radius_decay ** (gen - 1))
        aid = next_id
        next_id += 1
        airways[aid] = Airway(aid, parent, [], centerline, radius)
        if parent is not None:
            airways[parent].children.append(aid)
        if gen < cfg.depth:
            az = rng.uniform(0.0, 2.0 * math.pi)
            u, v = _perp_basis(direction)
            for k in range(2):
                theta = rng.uniform(*cfg.branch_angle_range)
                phi = az + k * math.pi
                child_dir = (
                    math.cos(theta) * direction
                    + math.sin(theta) * (math.cos(phi) * u + math.sin(phi) * v)
                )
                child_dir /= np.linalg.norm(child_dir)
                queue.append((aid, centerline[-1].copy(), child_dir, gen + 1))
    return AirwayTree(airways=airways, root_id=0, max_rows=cfg.max_rows)


def tree_to_dict(tree: AirwayTree) -> dict:
    return {
        "root_id": tree.root_id,
        "max_rows": tree.max_rows,
        "airways": [
            {
                "id": a.id,
                "parent": a.parent,
                "children": list(a.children),
                "centerline": a.centerline.tolist(),
                "radius": a.radius.tolist(),
            }
            for a in (tree.airways[i] for i in sorted(tree.airways))
        ],
    }


def tree_from_dict(data: dict) -> AirwayTree:
    try:
        entries = data["airways"]
        root_id = data["root_id"]
        max_rows = data.get("max_rows", DEFAULT_MAX_ROWS)
    except (KeyError, TypeError) as exc:
        raise TreeError(f"malformed tree data: missing {exc}") from None
    airways: Dict[int, Airway] = {}
    for n, entry in enumerate(entries):
        try:
            a = Airway(
                id=int(entry["id"]),
                parent=None if entry["parent"] is None else int(entry["parent"]),
                children=[int(c) for c in entry["children"]],
                centerline=np.array(entry["centerline"], dtype=float),
                radius=np.array(entry["radius"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TreeError(f"airway entry {n}: {exc}") from None
        if a.id in airways:
            raise TreeError(f"duplicated airway id {a.id} (entry {n})")
        airways[a.id] = a
    return AirwayTree(airways=airways, root_id=root_id, max_rows=max_rows)


def save_tree(tree: AirwayTree, path) -> None:
    with open(path, "w") as f:
        json.dump(tree_to_dict(tree), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_tree(path) -> AirwayTree:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise TreeError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return tree_from_dict(data)
