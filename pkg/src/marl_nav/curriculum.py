"""Stage schedules for the three model variants, the training driver and greedy evaluation."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import neural
from .config import CurriculumConfig, MapsConfig, RunConfig
from .metrics import (
    IterationMetricsRow,
    TrajectoryRow,
    append_metrics_row,
    goal_rate,
    moving_average,
    write_trajectory_csv,
)
from .ppo import ActorCritic, DivergenceError, EnvPool, PpoConfig, TrainerState, train_iteration
from .uavenv import EV_GOAL, EV_NONE, N_AGENTS, EnvConfig, RewardConfig, UavEnv
from .worldmap import LidarConfig, WorldMap, load_map

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class VariantConfig:
    name: str
    use_curriculum: bool
    opponent_features: bool


VARIANTS = {
    "model1": VariantConfig("model1", use_curriculum=False, opponent_features=True),
    "model2": VariantConfig("model2", use_curriculum=True, opponent_features=False),
    "model3": VariantConfig("model3", use_curriculum=True, opponent_features=True),
}


def get_variant(name: str) -> VariantConfig:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class Stage:
    label: str  # "free" or "obstacles"
    map_ref: str
    iterations: int

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("stage iterations must be >= 1")


PAPER_COUNTS = CurriculumConfig()
DESK_COUNTS = CurriculumConfig("desk", 40, 80, 120)


def make_schedule(variant: str, scale: str = "paper", counts: Optional[CurriculumConfig] = None,
                  maps: Optional[MapsConfig] = None) -> list[Stage]:
    v = get_variant(variant)
    if counts is None:
        if scale not in ("paper", "desk"):
            raise ValueError(f"unknown scale {scale!r}")
        counts = PAPER_COUNTS if scale == "paper" else DESK_COUNTS
    if maps is None:
        maps = MapsConfig() if scale == "paper" else MapsConfig("desk_free", "desk_obstacles")
    if not v.use_curriculum:
        return [Stage("obstacles", maps.obstacles, counts.direct_iterations)]
    return [Stage("free", maps.free, counts.free_iterations), Stage("obstacles", maps.obstacles, counts.obstacle_iterations)]


@dataclass
class TrainingRun:
    variant: str
    schedule: list
    seed: int
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    out_dir: Path = Path("runs/default")
    checkpoint_every: int = 25
    workers: int = 1

    @classmethod
    def from_config(cls, cfg: RunConfig, out_dir) -> "TrainingRun":
        schedule = make_schedule(cfg.variant, cfg.curriculum.scale, cfg.curriculum, cfg.maps)
        return cls(cfg.variant, schedule, cfg.seed, cfg.ppo, cfg.env, cfg.reward, Path(out_dir),
                   cfg.curriculum.checkpoint_every, cfg.workers)

    @property
    def total_iterations(self) -> int:
        return sum(s.iterations for s in self.schedule)

    def env_config(self) -> EnvConfig:
        """The env config with the opponent block forced to match the variant."""
        return _with_opponent(self.env, get_variant(self.variant).opponent_features)


def _with_opponent(env: EnvConfig, on: bool) -> EnvConfig:
    d = asdict(env)
    d["lidar"] = env.lidar
    d["opponent_features"] = on
    return EnvConfig(**d)


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ActorCritic, variant: str, env: EnvConfig, rng: np.random.Generator,
                    iteration: int, hidden) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "variant": variant,
        "obs_dim": model.obs_dim,
        "hidden": list(hidden),
        "iteration": iteration,
        "env": {**asdict(env)},
        "policy_params": neural.params_to_json(model.policy),
        "value_params": neural.params_to_json(model.value),
        "optimizer_state": {
            "policy": neural.optimizer_to_json(model.policy_opt),
            "value": neural.optimizer_to_json(model.value_opt),
        },
        "rng_state": rng.bit_generator.state,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


@dataclass
class Checkpoint:
    variant: str
    obs_dim: int
    hidden: list
    iteration: int
    env: EnvConfig
    model: ActorCritic
    rng_state: dict


def load_checkpoint(path, variant: Optional[str] = None) -> Checkpoint:
    """Load and check dimensions; ``variant`` requests a specific observation layout."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        env_d = dict(doc["env"])
        env_d["lidar"] = LidarConfig(**env_d["lidar"])
        env = EnvConfig(**env_d)
        policy = neural.params_from_json(doc["policy_params"])
        value = neural.params_from_json(doc["value_params"])
        opt = doc["optimizer_state"]
        model = ActorCritic(policy, value, neural.optimizer_from_json(opt["policy"]),
                            neural.optimizer_from_json(opt["value"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    obs_dim = int(doc["obs_dim"])
    if model.obs_dim != obs_dim or neural.input_dim(value) != obs_dim:
        raise CheckpointError(f"checkpoint networks take {model.obs_dim} inputs but declare obs_dim {obs_dim}")
    requested = doc["variant"] if variant is None else variant
    want = _with_opponent(env, get_variant(requested).opponent_features).obs_dim
    if want != obs_dim:
        raise CheckpointError(
            f"dimension mismatch: {requested} expects {want} observation inputs, "
            f"checkpoint ({doc['variant']}) has {obs_dim}"
        )
    return Checkpoint(requested, obs_dim, list(doc["hidden"]), int(doc.get("iteration", 0)), env, model,
                      doc["rng_state"])


def _checkpoint_path(out_dir: Path, iteration: int) -> Path:
    return out_dir / "checkpoints" / f"iter_{iteration}.json"


@dataclass
class TrainingResult:
    checkpoint: Path
    rows: list
    model: ActorCritic


def run_training(run: TrainingRun, on_stage_start: Optional[Callable] = None) -> TrainingResult:
    """Train through every stage, carrying model and optimizer state across map switches."""
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()
    worlds = [load_map(s.map_ref) for s in run.schedule]
    env_cfg = run.env_config()

    ss = np.random.SeedSequence(run.seed)
    model_ss, trainer_ss, *pool_ss = ss.spawn(2 + len(run.schedule))
    model = ActorCritic.create(env_cfg.obs_dim, run.ppo.hidden, np.random.default_rng(model_ss),
                               lr=run.ppo.learning_rate)
    rng = np.random.default_rng(trainer_ss)
    rows: list = []
    rates: list = []
    state = TrainerState(model, None)
    last_ckpt = None

    def checkpoint(model):
        nonlocal last_ckpt
        last_ckpt = _checkpoint_path(out, state.iteration)
        save_checkpoint(last_ckpt, model, run.variant, env_cfg, rng, state.iteration, run.ppo.hidden)

    for si, (stage, world) in enumerate(zip(run.schedule, worlds)):
        pool = EnvPool(world, env_cfg, run.reward, run.ppo.num_envs, pool_ss[si], workers=run.workers)
        state.pool = pool
        if on_stage_start is not None:
            on_stage_start(si, stage, state.model)
        log.info("stage %d (%s, %s): %d iterations", si + 1, stage.label, world.name, stage.iterations)
        try:
            for _ in range(stage.iterations):
                good = state.model
                try:
                    rep = train_iteration(state, run.ppo, rng)
                except DivergenceError:
                    state.model = good
                    checkpoint(good)
                    log.error("diverged at iteration %d; kept %s", state.iteration + 1, last_ckpt)
                    raise
                rates.append(rep.goal_rate)
                row = IterationMetricsRow(
                    rep.iteration, stage.label, rep.episodes, rep.agent_goals, rep.goal_rate,
                    moving_average(rates[-10:], 10)[-1], rep.mean_episode_reward,
                    rep.policy_loss, rep.value_loss, rep.entropy,
                )
                rows.append(row)
                append_metrics_row(row, metrics_path)
                log.info("iter %d [%s] goal_rate %.3f ma10 %.3f episodes %d (%.1fs)", rep.iteration, stage.label,
                         rep.goal_rate, row.ma10_goal_rate, rep.episodes, rep.seconds)
                if state.iteration % run.checkpoint_every == 0:
                    checkpoint(state.model)
        finally:
            pool.close()
        if last_ckpt != _checkpoint_path(out, state.iteration):
            checkpoint(state.model)
    return TrainingResult(last_ckpt, rows, state.model)


@dataclass
class EvalResult:
    goal_rate: float
    episodes: int
    agent_goals: int
    outcomes: list  # per episode: [event of agent 0, event of agent 1]
    trajectory: list


def greedy_actions(model: ActorCritic, obs_list):
    idx = [j for j, o in enumerate(obs_list) if o is not None]
    acts = [None] * len(obs_list)
    if idx:
        logits = neural.policy_forward(model.policy, np.stack([obs_list[j] for j in idx]))
        for j, a in zip(idx, np.argmax(logits, axis=1)):
            acts[j] = int(a)
    return acts


def evaluate(checkpoint: Checkpoint, world: WorldMap, episodes: int, rng: np.random.Generator,
             reward_cfg: RewardConfig = RewardConfig(), env_cfg: Optional[EnvConfig] = None) -> EvalResult:
    """Greedy (argmax) rollouts of a checkpointed policy."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env_cfg = env_cfg or checkpoint.env
    env_cfg = _with_opponent(env_cfg, get_variant(checkpoint.variant).opponent_features)
    if env_cfg.obs_dim != checkpoint.obs_dim:
        raise CheckpointError(f"dimension mismatch: env produces {env_cfg.obs_dim}, policy takes {checkpoint.obs_dim}")
    env = UavEnv(world, env_cfg, reward_cfg, seed=rng)
    outcomes, traj = [], []
    goals = 0
    for ep in range(episodes):
        obs = env.reset()
        for j, a in enumerate(env.agents):
            traj.append(TrajectoryRow(ep, 0, j, a.pose.x, a.pose.y, a.pose.yaw, -1, 0.0, EV_NONE))
        final = [EV_NONE] * N_AGENTS
        while not env.done:
            acts = greedy_actions(checkpoint.model, obs)
            out = env.step(acts)
            for j, a in enumerate(acts):
                if a is None:
                    continue
                ag = env.agents[j]
                traj.append(TrajectoryRow(ep, env.steps, j, ag.pose.x, ag.pose.y, ag.pose.yaw, a,
                                          out.rewards[j], out.events[j]))
                if out.terminated[j]:
                    final[j] = out.events[j]
            obs = out.observations
        goals += sum(e == EV_GOAL for e in final)
        outcomes.append(final)
    return EvalResult(goal_rate(episodes, goals), episodes, goals, outcomes, traj)


def write_eval(result: EvalResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(result.trajectory, out / "trajectories.csv")
    summary = {"goal_rate": result.goal_rate, "episodes": result.episodes, "agent_goals": result.agent_goals,
               "outcomes": result.outcomes}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
