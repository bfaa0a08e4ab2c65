"""Two-UAV episodic navigation environment.

Each agent flies a kinematic unicycle in the plane, steering with one of 15
discrete (forward speed, yaw rate) commands. Yaw is counterclockwise-positive
while commanded yaw rates are clockwise-positive, so a positive command turns
the vehicle to the right.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .worldmap import LidarConfig, Point2, WorldMap, beam_angles, cast_rays, disc_collides, sample_tasks

N_AGENTS = 2
N_ACTIONS = 15
STATIONARY_ACTION = 2

ACTIVE, REACHED_GOAL, COLLIDED, TIMED_OUT = "active", "reached_goal", "collided", "timed_out"
EV_NONE, EV_GOAL, EV_COLLISION, EV_TIMEOUT = "none", "goal", "collision", "timeout"
EVENTS = (EV_NONE, EV_GOAL, EV_COLLISION, EV_TIMEOUT)
_STATUS_FOR_EVENT = {EV_GOAL: REACHED_GOAL, EV_COLLISION: COLLIDED, EV_TIMEOUT: TIMED_OUT}


def wrap_angle(a: float) -> float:
    """Wrap into [-pi, pi)."""
    r = (a + math.pi) % (2 * math.pi) - math.pi
    if r >= math.pi:
        r -= 2 * math.pi
    return r


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)


@dataclass(frozen=True)
class ActionSpec:
    base_speed: float = 0.5
    speed_multipliers: tuple = (0, 1, 2)
    base_yaw_rate: float = math.pi / 12
    yaw_multipliers: tuple = (-2, -1, 0, 1, 2)
    vertical_velocity: float = 0.0

    @property
    def n_actions(self) -> int:
        return len(self.speed_multipliers) * len(self.yaw_multipliers)


DEFAULT_ACTIONS = ActionSpec()


def decode_action(index: int, spec: ActionSpec = DEFAULT_ACTIONS) -> tuple[float, float]:
    """Action index -> (forward speed m/s, yaw rate rad/s), speed-major ordering."""
    n_yaw = len(spec.yaw_multipliers)
    if not 0 <= index < spec.n_actions:
        raise ValueError(f"action index {index} out of range [0, {spec.n_actions})")
    s, w = divmod(int(index), n_yaw)
    return spec.base_speed * spec.speed_multipliers[s], spec.base_yaw_rate * spec.yaw_multipliers[w]


def _xy(p):
    if isinstance(p, (Pose, Point2)):
        return p.x, p.y
    return float(p[0]), float(p[1])


def heading_to(pose: Pose, target) -> float:
    """Counterclockwise rotation needed to face ``target``; 0 if coincident."""
    tx, ty = _xy(target)
    dx, dy = tx - pose.x, ty - pose.y
    if dx == 0 and dy == 0:
        return 0.0
    return wrap_angle(math.atan2(dy, dx) - pose.yaw)


def distance_to(pose, target) -> float:
    px, py = _xy(pose)
    tx, ty = _xy(target)
    return math.hypot(tx - px, ty - py)


def integrate(pose: Pose, speed: float, yaw_rate: float, dt: float) -> Pose:
    """Rotate, then translate along the new heading."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    yaw = wrap_angle(pose.yaw - yaw_rate * dt)
    return Pose(pose.x + speed * math.cos(yaw) * dt, pose.y + speed * math.sin(yaw) * dt, yaw)


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.5
    max_steps: int = 400
    goal_radius: float = 0.5
    uav_radius: float = 0.3
    lidar: LidarConfig = field(default_factory=LidarConfig)
    opponent_features: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not (self.goal_radius > 0 and self.uav_radius > 0):
            raise ValueError("goal_radius and uav_radius must be positive")

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.lidar.n_beams, self.opponent_features)


def obs_dim(n_beams: int, opponent_features: bool) -> int:
    return 2 + n_beams + (3 + N_ACTIONS if opponent_features else 0)


@dataclass(frozen=True)
class RewardConfig:
    r_success: float = 100.0
    r_collision: float = -100.0
    r_step: float = -0.05
    k_progress: float = 5.0
    k_heading: float = 0.05

    def __post_init__(self):
        if not (self.r_success > 0 and self.r_collision < 0 and self.r_step < 0):
            raise ValueError("need r_success > 0, r_collision < 0, r_step < 0")
        if self.k_progress < 0 or self.k_heading < 0:
            raise ValueError("shaping weights must be non-negative")


def compute_reward(prev_dist: float, new_dist: float, new_heading: float, event: str, rc: RewardConfig) -> float:
    if event not in EVENTS:
        raise ValueError(f"unknown event {event!r}")
    r = rc.r_step + rc.k_progress * (prev_dist - new_dist) + rc.k_heading * math.cos(new_heading)
    if event == EV_GOAL:
        r += rc.r_success
    elif event == EV_COLLISION:
        r += rc.r_collision
    return r


@dataclass
class AgentState:
    pose: Pose
    goal: Point2
    status: str = ACTIVE
    last_action: int = STATIONARY_ACTION
    prev_goal_distance: float = 0.0

    @property
    def active(self) -> bool:
        return self.status == ACTIVE


def build_observation(world: WorldMap, agents: Sequence[AgentState], self_id: int, cfg: EnvConfig) -> np.ndarray:
    me = agents[self_id]
    diag = world.diagonal
    lidar = cast_rays(world, me.pose.x, me.pose.y, beam_angles(me.pose.yaw, cfg.lidar), cfg.lidar.max_range)
    head = [heading_to(me.pose, me.goal) / math.pi, min(distance_to(me.pose, me.goal) / diag, 1.0)]
    parts = [np.array(head), lidar / cfg.lidar.max_range]
    if cfg.opponent_features:
        other = agents[1 - self_id]
        opp = np.zeros(3 + N_ACTIONS)
        opp[0] = heading_to(me.pose, other.pose) / math.pi
        opp[1] = min(distance_to(me.pose, other.pose) / diag, 1.0)
        opp[2] = wrap_angle(other.pose.yaw - me.pose.yaw) / math.pi
        opp[3 + other.last_action] = 1.0
        parts.append(opp)
    return np.concatenate(parts)


@dataclass
class StepOutcome:
    observations: list  # per agent; None once the agent is no longer active
    rewards: list
    terminated: list
    events: list
    episode_done: bool


class EpisodeOver(RuntimeError):
    pass


class UavEnv:
    """Two agents sharing one map; a single-threaded state machine."""

    def __init__(
        self,
        world: WorldMap,
        cfg: EnvConfig = EnvConfig(),
        reward_cfg: RewardConfig = RewardConfig(),
        seed=None,
        action_spec: ActionSpec = DEFAULT_ACTIONS,
    ):
        self.world = world
        self.cfg = cfg
        self.reward_cfg = reward_cfg
        self.action_spec = action_spec
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.agents: list[AgentState] = []
        self.steps = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.cfg.obs_dim

    def observe(self, agent_id: int) -> np.ndarray:
        return build_observation(self.world, self.agents, agent_id, self.cfg)

    def reset(self, rng: Optional[np.random.Generator] = None) -> list:
        rng = self.rng if rng is None else rng
        tasks = sample_tasks(self.world, rng)
        yaws = rng.uniform(-math.pi, math.pi, size=N_AGENTS)
        self.agents = []
        for (start, goal), yaw in zip(tasks, yaws):
            pose = Pose(start.x, start.y, float(yaw))
            self.agents.append(AgentState(pose, goal, ACTIVE, STATIONARY_ACTION, distance_to(pose, goal)))
        self.steps = 0
        self.done = False
        return [self.observe(i) for i in range(N_AGENTS)]

    def step(self, actions: Sequence[Optional[int]]) -> StepOutcome:
        if self.done:
            raise EpisodeOver("episode is finished; call reset()")
        if len(actions) != N_AGENTS:
            raise ValueError(f"expected {N_AGENTS} action slots, got {len(actions)}")
        was_active = [a.active for a in self.agents]
        for i, (agent, act) in enumerate(zip(self.agents, actions)):
            if agent.active and act is None:
                raise ValueError(f"agent {i} is active but no action was supplied")
            if not agent.active and act is not None:
                raise ValueError(f"agent {i} is {agent.status}; it cannot act")

        cfg = self.cfg
        for agent, act in zip(self.agents, actions):
            if agent.active:
                speed, yaw_rate = decode_action(act, self.action_spec)
                agent.pose = integrate(agent.pose, speed, yaw_rate, cfg.dt)
                agent.last_action = int(act)
        self.steps += 1

        bump = all(was_active) and distance_to(self.agents[0].pose, self.agents[1].pose) < 2 * cfg.uav_radius
        rewards = [0.0] * N_AGENTS
        events = [EV_NONE] * N_AGENTS
        for i, agent in enumerate(self.agents):
            if not was_active[i]:
                continue
            dist = distance_to(agent.pose, agent.goal)
            if bump or disc_collides(self.world, agent.pose.x, agent.pose.y, cfg.uav_radius):
                event = EV_COLLISION
            elif dist < cfg.goal_radius:
                event = EV_GOAL
            elif self.steps >= cfg.max_steps:
                event = EV_TIMEOUT
            else:
                event = EV_NONE
            rewards[i] = compute_reward(
                agent.prev_goal_distance, dist, heading_to(agent.pose, agent.goal), event, self.reward_cfg
            )
            agent.prev_goal_distance = dist
            if event != EV_NONE:
                agent.status = _STATUS_FOR_EVENT[event]
            events[i] = event

        self.done = not any(a.active for a in self.agents) or self.steps >= cfg.max_steps
        obs = [self.observe(i) if a.active else None for i, a in enumerate(self.agents)]
        terminated = [was_active[i] and not a.active for i, a in enumerate(self.agents)]
        return StepOutcome(obs, rewards, terminated, events, self.done)
