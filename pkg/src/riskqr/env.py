"""Kinematic reach-avoid arena for a differential-drive robot.

The robot starts at the origin facing +x. Hazard discs can be driven through
but cost ``U[0, 1]`` per step inside them; obstacle squares block motion and
cost ``U[0, 1]`` per attempted entry. Reaching the goal earns a bonus and
moves the goal somewhere else.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

# (v_L, v_R) wheel speed pairs, scaled by EnvConfig.wheel_speed
ACTIONS = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 0.0), (0.0, 1.0))
N_ACTIONS = len(ACTIONS)
OBS_DIM = 4 + 3 * 16
MAX_PLACEMENT_DRAWS = 1000
TRACE_FIELDS = ("t", "x", "y", "theta", "action", "g", "c_s", "c_h", "goal_reached")


class ConfigurationInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 1000
    wheel_radius: float = 0.02
    half_axle: float = 0.05
    robot_radius: float = 0.05
    hazard_radius: float = 0.1
    obstacle_half_width: float = 0.075
    goal_radius: float = 0.15
    lidar_range: float = 3.0
    lidar_bins: int = 16
    step_cost: float = 0.001
    goal_bonus: float = 1.0
    wheel_speed: float = 1.0
    pose_noise: float = 0.0
    n_hazards: int = 10
    n_obstacles: int = 10
    arena: float = 1.25
    spawn: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("wheel_radius", "half_axle", "robot_radius", "hazard_radius",
                     "obstacle_half_width", "goal_radius", "lidar_range", "arena", "spawn"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.lidar_bins < 1:
            raise ValueError("lidar_bins must be >= 1")
        if self.pose_noise < 0.0:
            raise ValueError("pose_noise must be non-negative")

    @property
    def obs_dim(self):
        return 4 + 3 * self.lidar_bins


@dataclass
class RobotState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    @property
    def position(self):
        return np.array([self.x, self.y])


@dataclass
class WorldState:
    robot: RobotState
    hazards: np.ndarray
    obstacles: np.ndarray
    goal: np.ndarray
    step_count: int = 0
    goals_reached: int = 0


@dataclass
class StepOutcome:
    obs: np.ndarray
    g: float
    c_s: float
    c_h: float
    done: bool
    info: dict = field(default_factory=dict)

    @property
    def cost(self):
        return self.c_s + self.c_h


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def kinematics(robot, v_left, v_right, cfg):
    """One Euler step of the differential-drive model, before any collision checks."""
    r = cfg.wheel_radius
    lin = 0.5 * r * (v_right + v_left)
    x = robot.x + lin * math.cos(robot.theta)
    y = robot.y + lin * math.sin(robot.theta)
    theta = robot.theta + r / (2.0 * cfg.half_axle) * (v_right - v_left)
    return RobotState(x, y, wrap_angle(theta))


def square_distance(point, centers, half_width):
    """Distance from ``point`` to each axis-aligned square (0 inside)."""
    if len(centers) == 0:
        return np.empty(0)
    d = np.abs(np.asarray(centers) - np.asarray(point)) - half_width
    outside = np.maximum(d, 0.0)
    return np.sqrt((outside * outside).sum(axis=1))


def in_hazard(point, world, cfg):
    if len(world.hazards) == 0:
        return False
    d = np.hypot(*(world.hazards - np.asarray(point)).T)
    return bool(np.any(d < cfg.hazard_radius))


def hits_obstacle(point, world, cfg):
    return bool(np.any(square_distance(point, world.obstacles, cfg.obstacle_half_width) < cfg.robot_radius))


def episode_rng(episode_seed):
    """Counter-based generator keyed by the episode seed."""
    return np.random.Generator(np.random.Philox(key=int(episode_seed) & ((1 << 64) - 1)))


def _sample_positions(rng, count, spawn, ok, budget):
    out = []
    while len(out) < count:
        if budget[0] >= MAX_PLACEMENT_DRAWS:
            raise ConfigurationInfeasible(
                f"could not place entities within {MAX_PLACEMENT_DRAWS} draws"
            )
        budget[0] += 1
        p = rng.uniform(-spawn, spawn, size=2)
        if ok(p):
            out.append(p)
    return np.array(out).reshape(count, 2)


def _goal_ok(p, robot_pos, obstacles, cfg):
    if np.hypot(*(p - robot_pos)) <= cfg.goal_radius + cfg.robot_radius:
        return False
    if len(obstacles) and np.any(square_distance(p, obstacles, cfg.obstacle_half_width) < cfg.robot_radius):
        return False
    return True


def reset(cfg, episode_seed):
    """Fresh world for ``episode_seed``; returns ``(world, obs, rng)``."""
    rng = episode_rng(episode_seed)
    budget = [0]
    origin = np.zeros(2)
    hazards = _sample_positions(
        rng, cfg.n_hazards, cfg.spawn,
        lambda p: np.hypot(*p) > cfg.hazard_radius + cfg.robot_radius, budget,
    )
    obstacles = _sample_positions(
        rng, cfg.n_obstacles, cfg.spawn,
        lambda p: square_distance(origin, p[None, :], cfg.obstacle_half_width)[0] > cfg.robot_radius,
        budget,
    )
    goal = _sample_positions(
        rng, 1, cfg.spawn, lambda p: _goal_ok(p, origin, obstacles, cfg), budget,
    )[0]
    world = WorldState(RobotState(), hazards, obstacles, goal)
    return world, observe(world, cfg), rng


def stage_cost(before, after, goal, cfg, reached=False):
    """Change in goal distance plus the step penalty, minus the bonus on arrival."""
    d_before = math.hypot(before.x - goal[0], before.y - goal[1])
    d_after = math.hypot(after.x - goal[0], after.y - goal[1])
    g = (d_after - d_before) + cfg.step_cost
    if reached:
        g -= cfg.goal_bonus
    return g


def lidar(world, cfg):
    """Goal, hazard and obstacle intensities, ``lidar_bins`` each, in [0, 1]."""
    r = world.robot
    parts = [
        kernels.lidar_scan(r.x, r.y, r.theta, world.goal[None, :], cfg.lidar_bins, cfg.lidar_range),
        kernels.lidar_scan(r.x, r.y, r.theta, world.hazards, cfg.lidar_bins, cfg.lidar_range),
        kernels.lidar_scan(r.x, r.y, r.theta, world.obstacles, cfg.lidar_bins, cfg.lidar_range),
    ]
    return np.concatenate(parts)


def observe(world, cfg):
    r = world.robot
    head = np.array([math.cos(r.theta), math.sin(r.theta), r.x, r.y])
    return np.concatenate([head, lidar(world, cfg)])


def step(world, action, cfg, rng):
    """Advance ``world`` in place by one action."""
    if not isinstance(action, (int, np.integer)) or not 0 <= action < N_ACTIONS:
        raise ValueError(f"invalid action index {action!r}")
    v_l, v_r = ACTIONS[action]
    before = world.robot
    proposal = kinematics(before, v_l * cfg.wheel_speed, v_r * cfg.wheel_speed, cfg)
    if cfg.pose_noise > 0.0:
        nx, ny = rng.normal(0.0, cfg.pose_noise, size=2)
        proposal = RobotState(proposal.x + nx, proposal.y + ny, proposal.theta)
    proposal.x = min(max(proposal.x, -cfg.arena), cfg.arena)
    proposal.y = min(max(proposal.y, -cfg.arena), cfg.arena)

    # draw both violation costs every step so the stream does not depend on contacts
    u_s, u_h = rng.uniform(0.0, 1.0, size=2)
    collided = hits_obstacle((proposal.x, proposal.y), world, cfg)
    if collided:
        after = RobotState(before.x, before.y, proposal.theta)
        c_h = float(u_h)
    else:
        after = proposal
        c_h = 0.0
    c_s = float(u_s) if in_hazard((after.x, after.y), world, cfg) else 0.0

    goal = world.goal
    reached = math.hypot(after.x - goal[0], after.y - goal[1]) <= cfg.goal_radius
    g = stage_cost(before, after, goal, cfg, reached=reached)
    world.robot = after
    if reached:
        world.goals_reached += 1
        world.goal = _relocate_goal(world, cfg, rng)
    world.step_count += 1
    done = world.step_count >= cfg.horizon
    info = {"goal_reached": reached, "collision": collided}
    return StepOutcome(observe(world, cfg), g, c_s, c_h, done, info)


def _relocate_goal(world, cfg, rng):
    pos = world.robot.position
    for _ in range(MAX_PLACEMENT_DRAWS):
        p = rng.uniform(-cfg.spawn, cfg.spawn, size=2)
        if _goal_ok(p, pos, world.obstacles, cfg):
            return p
    raise ConfigurationInfeasible("could not relocate goal")


class ReachAvoidEnv:
    """Stateful wrapper around :func:`reset` / :func:`step` with optional tracing."""

    def __init__(self, cfg=None, trace=False):
        self.cfg = cfg or EnvConfig()
        self.world = None
        self.rng = None
        self.trace = [] if trace else None

    def reset(self, episode_seed):
        self.world, obs, self.rng = reset(self.cfg, episode_seed)
        if self.trace is not None:
            self.trace = []
        return obs

    def step(self, action):
        if self.world is None:
            raise RuntimeError("call reset() before step()")
        out = step(self.world, action, self.cfg, self.rng)
        if self.trace is not None:
            r = self.world.robot
            self.trace.append((self.world.step_count, r.x, r.y, r.theta, int(action),
                               out.g, out.c_s, out.c_h, int(out.info["goal_reached"])))
        return out


def write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
