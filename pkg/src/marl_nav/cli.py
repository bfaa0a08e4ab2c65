"""``marl-nav`` command line: train, eval, replay, map-validate.

Exit codes: 0 success, 1 usage, 2 config/map, 3 runtime/divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .curriculum import (
    VARIANTS,
    CheckpointError,
    TrainingRun,
    evaluate,
    load_checkpoint,
    run_training,
    write_eval,
)
from .metrics import TrajectoryParseError, read_trajectory_csv, render_trajectory_svg
from .ppo import DivergenceError
from .worldmap import MapError, load_map

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("marl_nav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="marl-nav", description="Two-UAV curriculum PPO simulator and trainer.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model variant")
    t.add_argument("--variant", required=True, choices=sorted(VARIANTS))
    t.add_argument("--config", type=Path, help="JSON run config (layered over built-in defaults)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--scale", choices=cfgmod.SCALES)
    t.add_argument("--workers", type=_positive_int)
    t.add_argument("--eval-episodes", type=int, default=20,
                   help="greedy episodes on the final map after training (0 to skip)")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--map", required=True)
    e.add_argument("--episodes", type=_positive_int, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--variant", choices=sorted(VARIANTS),
                   help="observation layout to request (defaults to the checkpoint's variant)")

    r = sub.add_parser("replay", help="render a trajectory CSV to SVG")
    r.add_argument("--trajectory", type=Path, required=True)
    r.add_argument("--map", required=True)
    r.add_argument("--svg", type=Path, required=True)

    m = sub.add_parser("map-validate", help="check a map file")
    m.add_argument("--map", required=True)
    return p


def cmd_train(args) -> int:
    file_doc = cfgmod.read_config_file(args.config) if args.config else {}
    flags: dict = {"variant": args.variant}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.workers is not None:
        flags["workers"] = args.workers
    if args.scale is not None:
        flags["curriculum"] = {"scale": args.scale}
    cfg = cfgmod.resolve(file_doc, flags)
    args.out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfg, args.out / "config.resolved.json")
    run = TrainingRun.from_config(cfg, args.out)
    result = run_training(run)
    print(f"trained {cfg.variant} for {run.total_iterations} iterations; "
          f"final ma10 goal rate {result.rows[-1].ma10_goal_rate:.3f}; checkpoint {result.checkpoint}")
    if args.eval_episodes > 0:
        ckpt = load_checkpoint(result.checkpoint)
        world = load_map(run.schedule[-1].map_ref)
        ev = evaluate(ckpt, world, args.eval_episodes, np.random.default_rng(cfg.seed), cfg.reward)
        write_eval(ev, args.out / "eval")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint, variant=args.variant)
    world = load_map(args.map)
    result = evaluate(ckpt, world, args.episodes, np.random.default_rng(args.seed))
    write_eval(result, args.out)
    print(f"goal rate {result.goal_rate:.4f} over {result.episodes} episodes")
    return EXIT_OK


def cmd_replay(args) -> int:
    world = load_map(args.map)
    rows = read_trajectory_csv(args.trajectory)
    render_trajectory_svg(rows, world, args.svg)
    print(f"wrote {args.svg}")
    return EXIT_OK


def cmd_map_validate(args) -> int:
    world = load_map(args.map)
    print(f"{world.width:g}x{world.height:g}, {len(world.obstacles)} obstacles, {len(world.spawn_cells)} spawn cells")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "replay": cmd_replay, "map-validate": cmd_map_validate}


def _setup_logging():
    level = os.environ.get("MARL_NAV_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, MapError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajectoryParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
