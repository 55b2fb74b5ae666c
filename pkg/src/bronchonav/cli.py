"""Command-line interface: tree generation, tracking and driving episode
batches, metric reports, and the loop-rate benchmark.

Config files are JSON; outputs are JSON reports plus CSV curves for
external plotting. The BRONCHONAV_SEED environment variable overrides all
config seeds for CI determinism.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .control import ControllerConfig, SupervisorState, plan_trajectory, supervisor_step
from .evaluation import averaged_pr_curve, driving_summary, per_airway_f1, tracking_report
from .geometry import VisibilityConfig
from .perception import NoiseConfig, oracle_airwaynet
from .simulator import (
    SimConfig,
    airwaynet_localize,
    centerline_script,
    load_log,
    run_driving_episode,
    run_tracking_episode,
    save_log,
)
from .skeleton import TreeGenConfig, TreeError, generate_tree, load_tree, save_tree

ENV_SEED = "BRONCHONAV_SEED"


class CliError(Exception):
    pass


def _env_seed():
    v = os.environ.get(ENV_SEED)
    return int(v) if v else None


def _load_json(path, what):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} file {path}: invalid JSON ({exc.msg}, line {exc.lineno})")


def _dataclass_from(cls, data: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise CliError(f"{what}: unknown fields {sorted(unknown)}")
    try:
        obj = cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise CliError(f"{what}: {exc}")
    return obj


def cmd_gen_tree(args):
    data = _load_json(args.config, "tree config") if args.config else {}
    cfg = _dataclass_from(TreeGenConfig, data, "tree config")
    seed = _env_seed()
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    tree = generate_tree(cfg)
    save_tree(tree, args.out)
    print(f"wrote {args.out}: {len(tree)} airways, depth {max(tree._depth.values()) + 1}")


def _deep_targets(tree, n):
    leaves = sorted(
        (a.id for a in tree.airways.values() if not a.children),
        key=lambda i: (-tree.depth_of(i), i),
    )
    return leaves[:n]


def cmd_track(args):
    tree = load_tree(args.tree)
    noise_data = _load_json(args.noise, "noise config") if args.noise else {}
    base_noise = _dataclass_from(NoiseConfig, noise_data, "noise config")
    seed0 = _env_seed()
    if seed0 is None:
        seed0 = base_noise.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    targets = _deep_targets(tree, args.episodes)
    for n in range(args.episodes):
        target = targets[n % len(targets)]
        noise = dataclasses.replace(base_noise, seed=seed0 + n)
        script = centerline_script(tree, target)
        log = run_tracking_episode(tree, script, noise=noise, localizer=args.localizer)
        save_log(log, out / f"track_{n:03d}.jsonl")
    print(f"wrote {args.episodes} tracking logs to {out}")


def cmd_drive(args):
    tree = load_tree(args.tree)
    noise_data = _load_json(args.noise, "noise config") if args.noise else {}
    base_noise = _dataclass_from(NoiseConfig, noise_data, "noise config")
    try:
        targets = [int(t) for t in args.targets.split(",")]
    except ValueError:
        raise CliError(f"bad --targets value: {args.targets!r}")
    for t in targets:
        if t not in tree:
            raise CliError(f"target airway {t} not in tree")
    seed0 = _env_seed()
    if seed0 is None:
        seed0 = base_noise.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n in range(args.trials):
        noise = dataclasses.replace(base_noise, seed=seed0 + n)
        log = run_driving_episode(tree, targets, noise=noise)
        save_log(log, out / f"drive_{n:03d}.jsonl")
        status = "success" if log.outcome.success else "timeout"
        print(f"trial {n}: {status} in {log.outcome.completion_time:.1f} s, "
              f"{log.outcome.recoveries} recoveries")
    print(f"wrote {args.trials} driving logs to {out}")


def cmd_eval(args):
    paths = sorted(Path(args.logs).glob("*.jsonl"))
    if not paths:
        raise CliError(f"no .jsonl logs under {args.logs}")
    logs = [load_log(p) for p in paths]
    tracking = [l for l in logs if l.header.get("kind") == "tracking"]
    driving = [l for l in logs if l.header.get("kind") == "driving"]
    report = {"n_logs": len(logs)}
    curve = None
    if tracking or driving:
        curve = averaged_pr_curve(tracking or driving)
        report["pr_auc"] = curve.auc
    if tracking:
        f1 = [
            {"airway_id": s.airway_id, "f1": s.f1, "frames_visible": s.frames_visible}
            for s in per_airway_f1(tracking[0])
        ]
        report["per_airway_f1_first_log"] = f1
        report["tracking"] = tracking_report(tracking[0]).summary()
    if driving:
        report["driving"] = driving_summary(driving)
    with open(args.report, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    if args.csv and curve is not None:
        with open(args.csv, "w") as f:
            f.write("threshold,precision,recall\n")
            for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
                f.write(f"{t},{p},{r}\n")
    print(f"wrote {args.report}" + (f" and {args.csv}" if args.csv else ""))


def bench_loop_rate(tree, n_iters: int = 200) -> float:
    """Iterations/s of the full perception -> localization -> supervisor step."""
    vis = VisibilityConfig()
    noise = NoiseConfig(sigma_pos=0.5, sigma_dir=0.02, seed=0)
    rng = noise.rng()
    ctrl = ControllerConfig()
    # camera at the carina looking into the first bifurcation
    root = tree.airways[tree.root_id]
    from .geometry import Pose

    pose = Pose.looking(
        root.distal - 12.0 * root.distal_tangent, root.distal_tangent
    )
    trajectory = plan_trajectory(tree, _deep_targets(tree, 1)[0])
    sup = SupervisorState()
    t0 = time.perf_counter()
    for _ in range(n_iters):
        obs = oracle_airwaynet(pose, tree, vis, noise, rng)
        estimate, _ = airwaynet_localize(obs, tree)
        _, sup = supervisor_step(estimate, obs, trajectory, tree, sup, ctrl)
        sup.reached = False
    dt = time.perf_counter() - t0
    return n_iters / dt


def cmd_bench(args):
    tree = load_tree(args.tree)
    rate = bench_loop_rate(tree, args.iters)
    print(f"{rate:.1f} iterations/s on {len(tree)} airways")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bronchonav")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-tree", help="generate a synthetic airway tree")
    g.add_argument("--config", help="TreeGenConfig JSON file")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_tree)

    t = sub.add_parser("track", help="run scripted tracking episodes")
    t.add_argument("--tree", required=True)
    t.add_argument("--noise", help="NoiseConfig JSON file")
    t.add_argument("--episodes", type=int, default=5)
    t.add_argument("--localizer", choices=["airwaynet", "bifurcationnet"], default="airwaynet")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_track)

    d = sub.add_parser("drive", help="run closed-loop driving trials")
    d.add_argument("--tree", required=True)
    d.add_argument("--targets", required=True, help="comma-separated airway IDs")
    d.add_argument("--noise", help="NoiseConfig JSON file")
    d.add_argument("--trials", type=int, default=1)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_drive)

    e = sub.add_parser("eval", help="compute metrics over a log directory")
    e.add_argument("--logs", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="loop-rate benchmark")
    b.add_argument("--tree", required=True)
    b.add_argument("--iters", type=int, default=200)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, TreeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
