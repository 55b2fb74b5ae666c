"""Evaluate a batch of tracking episodes: per-airway F1, macro-averaged
precision-recall curve with AUC, and driving success statistics.

Run:  python3 demos/04_evaluation.py
"""
import bronchonav as bn
from bronchonav.cli import _deep_targets

tree = bn.generate_tree(bn.TreeGenConfig(depth=4, seed=0))
noise = bn.NoiseConfig(sigma_dir=0.03, sigma_pos=1.0, p_miss=0.05, seed=0)

logs = []
for k, target in enumerate(_deep_targets(tree, 3)):
    import dataclasses

    n = dataclasses.replace(noise, seed=k)
    logs.append(bn.run_tracking_episode(tree, bn.centerline_script(tree, target), noise=n))
print(f"collected {len(logs)} tracking episodes")

# Per-airway F1 at the 0.5 visibility threshold (first episode).
print("\nper-airway F1 (episode 0):")
for s in bn.per_airway_f1(logs[0])[:6]:
    print(
        f"  airway {s.airway_id:2d}: P={s.precision:.3f}  R={s.recall:.3f}  "
        f"F1={s.f1:.3f}  ({s.frames_visible} visible frames)"
    )

# Macro-averaged PR curve over all episodes; micro (pooled) shown alongside.
curve = bn.averaged_pr_curve(logs)
print(f"\nmacro PR AUC = {curve.auc:.4f}   micro PR AUC = {curve.micro_auc:.4f}")
for i in range(0, len(curve.thresholds), 25):
    print(
        f"  tau={curve.thresholds[i]:.2f}  precision={curve.precision[i]:.3f}  "
        f"recall={curve.recall[i]:.3f}"
    )

# Driving statistics over a few trials.
dlogs = [
    bn.run_driving_episode(tree, [10], noise=bn.NoiseConfig(sigma_dir=0.02, p_miss=0.05, seed=s))
    for s in range(3)
]
print(f"\ndriving summary: {bn.driving_summary(dlogs)}")
