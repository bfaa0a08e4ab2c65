"""Clipped-surrogate PPO with GAE for the shared two-UAV policy."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .uavenv import EV_GOAL, N_AGENTS, EnvConfig, RewardConfig, UavEnv
from .worldmap import WorldMap

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The update produced non-finite ratios or losses."""


@dataclass(frozen=True)
class PpoConfig:
    train_batch_size: int = 20_000
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs: int = 10
    minibatch_size: int = 2_000
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_clip_norm: float = 0.5
    learning_rate: float = 3e-4
    num_envs: int = 16
    hidden: tuple = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if not self.train_batch_size >= self.minibatch_size >= 1:
            raise ValueError("need train_batch_size >= minibatch_size >= 1")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if self.epochs < 1 or self.num_envs < 1:
            raise ValueError("epochs and num_envs must be >= 1")


@dataclass
class ActorCritic:
    """Separate policy and value MLPs plus their Adam states."""

    policy: neural.Params
    value: neural.Params
    policy_opt: neural.OptimizerState
    value_opt: neural.OptimizerState

    @classmethod
    def create(cls, obs_dim: int, hidden, rng: np.random.Generator, lr: float = 3e-4, n_actions: int = 15):
        policy = neural.init_mlp([obs_dim, *hidden, n_actions], rng, out_gain=0.01)
        value = neural.init_mlp([obs_dim, *hidden, 1], rng, out_gain=1.0)
        return cls(
            policy,
            value,
            neural.OptimizerState.for_params(policy, lr=lr),
            neural.OptimizerState.for_params(value, lr=lr),
        )

    @property
    def obs_dim(self) -> int:
        return neural.input_dim(self.policy)


@dataclass
class TransitionBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    truncated: np.ndarray
    bootstrap: np.ndarray
    episode_id: np.ndarray
    agent_id: np.ndarray

    def __len__(self):
        return len(self.actions)

    def validate(self) -> None:
        n = len(self.actions)
        for name in ("obs", "logp", "values", "rewards", "terminal", "truncated", "bootstrap", "episode_id", "agent_id"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"batch field {name} has length {len(getattr(self, name))}, expected {n}")
        if n and not (self.terminal[-1] or self.truncated[-1]):
            raise ValueError("batch ends inside an unterminated segment")
        if np.any(self.terminal & self.truncated):
            raise ValueError("a transition cannot be both terminal and truncated")

    @classmethod
    def from_segments(cls, segments, obs_dim: int) -> "TransitionBatch":
        rows = [t for seg in segments for t in seg]
        if not rows:
            return cls(np.zeros((0, obs_dim)), *(np.zeros(0) for _ in range(9)))
        cols = list(zip(*rows))
        return cls(
            np.array(cols[0], dtype=np.float64).reshape(len(rows), obs_dim),
            np.array(cols[1], dtype=np.int64),
            np.array(cols[2], dtype=np.float64),
            np.array(cols[3], dtype=np.float64),
            np.array(cols[4], dtype=np.float64),
            np.array(cols[5], dtype=bool),
            np.array(cols[6], dtype=bool),
            np.array(cols[7], dtype=np.float64),
            np.array(cols[8], dtype=np.int64),
            np.array(cols[9], dtype=np.int64),
        )


@dataclass
class EpisodeStats:
    episodes: int = 0
    agent_goals: int = 0
    agent_returns: list = field(default_factory=list)


class EnvPool:
    """Independent environments stepped in lockstep; one shared policy acts for all agents."""

    def __init__(self, world: WorldMap, env_cfg: EnvConfig, reward_cfg: RewardConfig, n_envs: int, seed, workers: int = 1):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        seeds = ss.spawn(n_envs)
        self.envs = [UavEnv(world, env_cfg, reward_cfg, seed=np.random.default_rng(s)) for s in seeds]
        self.obs = [env.reset() for env in self.envs]
        self.returns = [[0.0] * N_AGENTS for _ in self.envs]
        self.goals = [0] * n_envs
        self.episode_ids = list(range(n_envs))
        self._next_episode = n_envs
        self.workers = workers
        self._executor = ThreadPoolExecutor(workers) if workers > 1 else None

    @property
    def obs_dim(self) -> int:
        return self.envs[0].obs_dim

    def step_envs(self, env_ids, actions):
        if self._executor is None:
            return [self.envs[i].step(a) for i, a in zip(env_ids, actions)]
        # results come back in submission order, independent of worker count
        return list(self._executor.map(lambda ia: self.envs[ia[0]].step(ia[1]), zip(env_ids, actions)))

    def finish_episode(self, i: int) -> None:
        self.obs[i] = self.envs[i].reset()
        self.returns[i] = [0.0] * N_AGENTS
        self.goals[i] = 0
        self.episode_ids[i] = self._next_episode
        self._next_episode += 1

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()


def collect_rollout(model: ActorCritic, pool: EnvPool, n: int, rng: np.random.Generator):
    """Step the pool until exactly ``n`` agent-transitions are stored.

    Returns ``(TransitionBatch, EpisodeStats)`` where the stats cover episodes
    that finished during this call.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    obs_dim = pool.obs_dim
    open_segs: dict = {}
    closed: list = []
    stats = EpisodeStats()
    stored = 0
    while stored < n:
        pairs = [(i, j) for i, o in enumerate(pool.obs) for j in range(N_AGENTS) if o[j] is not None]
        X = np.stack([pool.obs[i][j] for i, j in pairs])
        logits = neural.policy_forward(model.policy, X)
        values = neural.value_forward(model.value, X)
        acts, logps = neural.sample_actions(logits, rng)

        # only step as many environments as the remaining budget touches
        remaining = n - stored
        env_ids: list = []
        for k, (i, _) in enumerate(pairs):
            if k >= remaining:
                break
            if not env_ids or env_ids[-1] != i:
                env_ids.append(i)
        per_env = {i: [None] * N_AGENTS for i in env_ids}
        slot = {}
        for k, (i, j) in enumerate(pairs):
            if i in per_env:
                per_env[i][j] = int(acts[k])
            slot[(i, j)] = k
        outcomes = pool.step_envs(env_ids, [per_env[i] for i in env_ids])

        cut_values = {}
        for i, out in zip(env_ids, outcomes):
            for j in range(N_AGENTS):
                if per_env[i][j] is None:
                    continue
                k = slot[(i, j)]
                pool.returns[i][j] += out.rewards[j]
                if out.events[j] == EV_GOAL:
                    pool.goals[i] += 1
                if stored >= n:
                    # dropped by the budget; its open segment is cut before this step
                    cut_values[(i, j)] = float(values[k])
                    continue
                seg = open_segs.setdefault((i, j), [])
                seg.append([pool.obs[i][j], acts[k], logps[k], values[k], out.rewards[j],
                            out.terminated[j], False, 0.0, pool.episode_ids[i], j])
                stored += 1
                if out.terminated[j]:
                    closed.append(open_segs.pop((i, j)))
            if out.episode_done:
                # episode-level accounting keeps goals <= 2 * episodes per iteration
                stats.episodes += 1
                stats.agent_goals += pool.goals[i]
                stats.agent_returns.extend(pool.returns[i])
                pool.finish_episode(i)
            else:
                pool.obs[i] = out.observations

        if stored >= n:
            tails = []
            need = []
            for key in sorted(open_segs):
                seg = open_segs[key]
                i, j = key
                if key in cut_values:
                    seg[-1][7] = cut_values[key]
                elif key in slot and i not in per_env:
                    seg[-1][7] = float(values[slot[key]])
                else:
                    need.append((key, pool.obs[i][j]))
                seg[-1][6] = True
                tails.append(seg)
            if need:
                boot = neural.value_forward(model.value, np.stack([o for _, o in need]))
                for (key, _), v in zip(need, np.atleast_1d(boot)):
                    open_segs[key][-1][7] = float(v)
            closed.extend(tails)
    batch = TransitionBatch.from_segments(closed, obs_dim)
    batch.validate()
    return batch, stats


def compute_gae(batch: TransitionBatch, gamma: float, lam: float):
    """Per-segment backward GAE recursion; returns (advantages, value targets)."""
    batch.validate()
    n = len(batch)
    adv = np.zeros(n)
    ends = batch.terminal | batch.truncated
    last = 0.0
    for t in range(n - 1, -1, -1):
        if ends[t]:
            next_v = batch.bootstrap[t] if batch.truncated[t] else 0.0
            carry = 0.0
        else:
            next_v = batch.values[t + 1]
            carry = last
        nonterm = 0.0 if batch.terminal[t] else 1.0
        delta = batch.rewards[t] + gamma * next_v * nonterm - batch.values[t]
        last = delta + gamma * lam * nonterm * carry
        adv[t] = last
    return adv, adv + batch.values


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def clipped_surrogate(ratio, adv, clip_epsilon):
    """Per-sample min(rho*A, clip(rho)*A) and whether the unclipped branch is active."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * adv
    return np.minimum(unclipped, clipped), unclipped <= clipped


def ppo_losses(model: ActorCritic, obs, actions, old_logp, adv, targets, cfg: PpoConfig, clip_grads: bool = True):
    """Losses and gradients for one minibatch.

    Returns ``(losses, policy_grads, value_grads)``; ``losses`` holds policy,
    value, entropy and total.
    """
    B = len(actions)
    rows = np.arange(B)
    pcache: list = []
    logits = neural.forward(model.policy, obs, pcache)
    logp_all = neural.log_softmax(logits)
    p = np.exp(logp_all)
    new_logp = logp_all[rows, actions]
    with np.errstate(over="ignore"):
        ratio = np.exp(new_logp - old_logp)
    if not np.isfinite(ratio).all():
        raise DivergenceError("non-finite probability ratio")
    surr, active = clipped_surrogate(ratio, adv, cfg.clip_epsilon)
    policy_loss = -surr.mean()
    ent_each = -(p * logp_all).sum(axis=1)
    entropy = ent_each.mean()

    # d(policy_loss)/d(new_logp), then through log-softmax
    d_logp = np.where(active, -ratio * adv, 0.0) / B
    d_logits = -p * d_logp[:, None]
    d_logits[rows, actions] += d_logp
    d_logits += cfg.entropy_coef * p * (logp_all + ent_each[:, None]) / B
    policy_grads = neural.backward(model.policy, pcache, d_logits)

    vcache: list = []
    v = neural.forward(model.value, obs, vcache)[:, 0]
    err = v - targets
    value_loss = (err * err).mean()
    value_grads = neural.backward(model.value, vcache, (cfg.value_coef * 2.0 * err / B)[:, None])

    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not np.isfinite(total):
        raise DivergenceError("non-finite loss")
    if clip_grads:
        # clipped per network; the value loss scale would otherwise swamp the policy gradient
        policy_grads, _ = neural.clip_by_global_norm(policy_grads, cfg.grad_clip_norm)
        value_grads, _ = neural.clip_by_global_norm(value_grads, cfg.grad_clip_norm)
    losses = {"policy": float(policy_loss), "value": float(value_loss), "entropy": float(entropy), "total": float(total)}
    return losses, policy_grads, value_grads


@dataclass
class IterationReport:
    iteration: int
    episodes: int
    agent_goals: int
    goal_rate: float
    mean_episode_reward: float
    policy_loss: float
    value_loss: float
    entropy: float
    seconds: float
    transitions: int = 0


@dataclass
class TrainerState:
    model: ActorCritic
    pool: EnvPool
    iteration: int = 0


def ppo_update(model: ActorCritic, batch: TransitionBatch, cfg: PpoConfig, rng: np.random.Generator):
    """GAE, per-iteration advantage normalisation, then epochs of minibatch Adam steps.

    Returns the updated model and mean losses; the input model is not mutated.
    """
    adv, targets = compute_gae(batch, cfg.gamma, cfg.gae_lambda)
    adv = normalize_advantages(adv)
    policy, value = model.policy, model.value
    popt, vopt = model.policy_opt, model.value_opt
    sums = {"policy": 0.0, "value": 0.0, "entropy": 0.0}
    count = 0
    n = len(batch)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            current = ActorCritic(policy, value, popt, vopt)
            losses, pg, vg = ppo_losses(
                current, batch.obs[idx], batch.actions[idx], batch.logp[idx], adv[idx], targets[idx], cfg
            )
            policy, popt = neural.adam_update(policy, pg, popt)
            value, vopt = neural.adam_update(value, vg, vopt)
            for k in sums:
                sums[k] += losses[k]
            count += 1
    for params in (policy, value):
        for W, b in params:
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise DivergenceError("non-finite parameters after update")
    return ActorCritic(policy, value, popt, vopt), {k: s / count for k, s in sums.items()}


def train_iteration(state: TrainerState, cfg: PpoConfig, rng: np.random.Generator) -> IterationReport:
    from .metrics import goal_rate

    t0 = time.perf_counter()
    batch, stats = collect_rollout(state.model, state.pool, cfg.train_batch_size, rng)
    model, losses = ppo_update(state.model, batch, cfg, rng)
    state.model = model
    state.iteration += 1
    mean_ret = float(np.mean(stats.agent_returns)) if stats.agent_returns else 0.0
    report = IterationReport(
        iteration=state.iteration,
        episodes=stats.episodes,
        agent_goals=stats.agent_goals,
        goal_rate=goal_rate(stats.episodes, stats.agent_goals),
        mean_episode_reward=mean_ret,
        policy_loss=losses["policy"],
        value_loss=losses["value"],
        entropy=losses["entropy"],
        seconds=time.perf_counter() - t0,
        transitions=len(batch),
    )
    log.debug("iteration %d: %s", report.iteration, report)
    return report
