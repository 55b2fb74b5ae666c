"""Drive the scope autonomously to a sequence of targets, showing the
follow / hand-off / recover behavior of the supervisor.

Run:  python3 demos/03_driving.py
"""
import bronchonav as bn
from bronchonav.control import FOLLOW, RECOVER

tree = bn.generate_tree(bn.TreeGenConfig(depth=4, seed=0))

# Two leaves in opposite subtrees: after reaching the first the supervisor
# must back out (RECOVER) before it can see the path to the second.
leaf_a = next(i for i in tree.ids() if not tree.airways[i].children and 1 in tree.path_to_root(i))
leaf_b = next(i for i in tree.ids() if not tree.airways[i].children and 2 in tree.path_to_root(i))
print(f"targets: airway {leaf_a} (left subtree), then airway {leaf_b} (right subtree)")

noise = bn.NoiseConfig(sigma_dir=0.02, sigma_pos=0.5, p_miss=0.05, seed=11)
log = bn.run_driving_episode(tree, [leaf_a, leaf_b], noise=noise)

n_follow = sum(1 for f in log.frames if f.mode == FOLLOW)
n_recover = sum(1 for f in log.frames if f.mode == RECOVER)
print(
    f"outcome: success={log.outcome.success}  "
    f"time={log.outcome.completion_time:.1f} s  "
    f"recoveries={log.outcome.recoveries}  collisions={log.outcome.collisions}"
)
print(f"frames: {n_follow} FOLLOW, {n_recover} RECOVER")

# Mode timeline, compressed to transitions (first few shown).
print("\nmode transitions:")
prev = None
shown = 0
for f in log.frames:
    if f.mode != prev:
        if shown < 10:
            print(f"  t={f.t:6.2f} s  {f.mode}")
        shown += 1
        prev = f.mode
if shown > 10:
    print(f"  ... {shown - 10} more")
