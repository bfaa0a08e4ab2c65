#!/usr/bin/env python3
"""Train every model variant over several seeds and summarise final goal rates.

    python scripts/run_ablation.py --out runs/ablation --seeds 1 2 3 --scale desk

Each (variant, seed) gets its own directory laid out like ``marl-nav train``.
Existing runs with a complete metrics.csv are reused unless --force is given.
"""
import argparse
import json
import statistics
import sys
import time
from pathlib import Path

from marl_nav import cli
from marl_nav.metrics import read_metrics_csv

VARIANTS = ("model1", "model2", "model3")


def run_dir(out: Path, variant: str, seed: int) -> Path:
    return out / f"{variant}_s{seed}"


def expected_rows(scale: str, variant: str) -> int:
    from marl_nav.curriculum import make_schedule

    return sum(s.iterations for s in make_schedule(variant, scale))


def ensure_run(out: Path, variant: str, seed: int, scale: str, config=None, force=False):
    d = run_dir(out, variant, seed)
    metrics = d / "metrics.csv"
    if not force and metrics.exists() and len(read_metrics_csv(metrics)) == expected_rows(scale, variant):
        return read_metrics_csv(metrics)
    argv = ["train", "--variant", variant, "--seed", str(seed), "--out", str(d), "--scale", scale]
    if config:
        argv += ["--config", str(config)]
    t0 = time.time()
    code = cli.main(argv)
    if code != 0:
        raise SystemExit(f"training {variant} seed {seed} failed with exit code {code}")
    print(f"  {variant} seed {seed}: {time.time() - t0:.0f}s", file=sys.stderr)
    return read_metrics_csv(metrics)


def summarise(runs: dict, tail: int = 30) -> dict:
    """Final ma10 goal rate and late-training goal-rate spread per run."""
    out = {}
    for (variant, seed), rows in sorted(runs.items()):
        rates = [r.goal_rate for r in rows[-tail:]]
        out.setdefault(variant, {})[seed] = {
            "final_ma10": rows[-1].ma10_goal_rate,
            "max_ma10": max(r.ma10_goal_rate for r in rows),
            "late_std": statistics.pstdev(rates),
        }
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("runs/ablation"))
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--scale", choices=("paper", "desk"), default="desk")
    p.add_argument("--config", type=Path)
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    p.add_argument("--force", action="store_true")
    args = p.parse_args(argv)

    runs = {}
    for seed in args.seeds:
        for variant in args.variants:
            runs[(variant, seed)] = ensure_run(args.out, variant, seed, args.scale, args.config, args.force)
    summary = summarise(runs)
    for variant, per_seed in summary.items():
        finals = [v["final_ma10"] for v in per_seed.values()]
        stds = [v["late_std"] for v in per_seed.values()]
        print(f"{variant}: median final ma10 {statistics.median(finals):.3f} "
              f"(per seed {', '.join(f'{x:.3f}' for x in finals)}); late std {', '.join(f'{s:.3f}' for s in stds)}")
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
