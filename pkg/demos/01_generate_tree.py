"""Generate a synthetic airway tree and explore its structure.

Run:  python3 demos/01_generate_tree.py
"""
import numpy as np

import bronchonav as bn
from bronchonav.skeleton import tree_to_dict

# A depth-4 binary tree: trachea plus three generations of branches.
cfg = bn.TreeGenConfig(depth=4, seed=0)
tree = bn.generate_tree(cfg)
print(f"generated {len(tree)} airways (depth {cfg.depth}, seed {cfg.seed})")

# Walk the structure: every airway is a straight centerline polyline in mm.
for aid in tree.ids()[:7]:
    a = tree.airways[aid]
    length = np.linalg.norm(a.distal - a.proximal)
    print(
        f"  airway {aid:2d}: parent={a.parent!s:>4}  children={a.children}  "
        f"length={length:5.1f} mm  radius={a.radius[0]:.2f} mm"
    )

# Insertion length: distance along the centerline from the tracheal opening
# to each bifurcation, the quantity a clinician reads off the scope shaft.
print("\ninsertion length to each bifurcation:")
for bid in tree.bifurcation_ids()[:5]:
    print(f"  airway {bid}: {bn.insertion_length_to_bifurcation(tree, bid):.1f} mm")

# Generation distance counts undirected hops in the branching graph; siblings
# are two generations apart (up to the parent, down to the sibling).
print(f"\ngeneration_distance(1, 2) = {bn.generation_distance(tree, 1, 2)} (siblings)")

# Trees serialize to JSON and round-trip losslessly.
path = "/tmp/demo_tree.json"
bn.save_tree(tree, path)
back = bn.load_tree(path)
assert tree_to_dict(back) == tree_to_dict(tree)
print(f"saved and reloaded losslessly: {path}")
