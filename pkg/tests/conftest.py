import numpy as np
import pytest

from bronchonav.skeleton import Airway, AirwayTree, TreeGenConfig, generate_tree


def line_airway(aid, parent, children, start, direction, length, radius=4.0, n_points=2):
    """Straight airway polyline helper for hand-built trees."""
    start = np.asarray(start, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    ts = np.linspace(0.0, 1.0, n_points)[:, None]
    pts = start + ts * (length * direction)
    return Airway(aid, parent, list(children), pts, np.full(n_points, float(radius)))


def build_tree(airways, max_rows=500):
    return AirwayTree(airways={a.id: a for a in airways}, root_id=0, max_rows=max_rows)


@pytest.fixture
def three_airway_tree():
    """Trachea along +z with two children branching in the xz-plane."""
    c, s = np.cos(0.5), np.sin(0.5)
    return build_tree(
        [
            line_airway(0, None, [1, 2], (0, 0, 0), (0, 0, 1), 30.0, radius=6.0),
            line_airway(1, 0, [], (0, 0, 30), (s, 0, c), 25.0),
            line_airway(2, 0, [], (0, 0, 30), (-s, 0, c), 25.0),
        ]
    )


@pytest.fixture
def deep_tree():
    return generate_tree(TreeGenConfig(depth=5, seed=1))
