"""Risk-sensitive quantile-regression action-value iteration.

Four loss variants share one training loop:

* ``avi``       -- squared TD error on a scalar action value
* ``qr_avi``    -- quantile Huber regression
* ``e_qravi``   -- ``(1 - lam) * L_QR + lam * max(0, mean(C) - c_max) ** 2``
* ``rho_qravi`` -- same with the KDE-estimated CVaR of the batch costs

Everything minimizes cost: greedy actions are argmins.
"""
import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import env as envmod
from . import qnet
from .replay import ReplayBuffer, Transition
from .risk import (RiskConfig, cvar_with_flag, expected_cost, kde_fit,
                   make_tau_grid, qr_loss_batch, risk_penalty)

VARIANTS = ("avi", "qr_avi", "e_qravi", "rho_qravi")
TRAIN_LOG_FIELDS = ("step", "quantile_loss", "risk_loss", "total_loss", "epsilon", "rho_hat",
                    "degenerate_tail")
EPISODE_FIELDS = ("episode", "cum_stage_cost", "cum_violation_cost", "goals")
RUNNING_MEAN_WINDOW = 50


class TrainingDiverged(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class AgentConfig:
    variant: str = "rho_qravi"
    risk: RiskConfig = field(default_factory=RiskConfig)
    gamma: float = 0.99
    kappa: float = 1.0
    n_tau: int = 32
    batch_size: int = 128
    train_freq: int = 10
    target_freq: int = 500
    eta: float = 1.0
    eps0: float = 1.0
    eps_final: float = 0.05
    eps_decay_steps: int | None = None
    total_env_steps: int = 1_000_000
    buffer_size: int = 50_000
    seed: int = 0
    hidden: tuple = qnet.HIDDEN_SIZES
    optimizer: str = "adam"
    lr: float = 2.5e-4
    k_alpha: float | None = None
    qr_normalization: str = "mean"
    bandwidth: object = "scott"
    kde_grid_size: int = 512
    risk_shaped_targets: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.train_freq < 1 or self.target_freq < 1:
            raise ValueError("train_freq and target_freq must be >= 1")
        if not self.eps0 >= self.eps_final > 0.0 or self.eps0 > 1.0:
            raise ValueError("need 1 >= eps0 >= eps_final > 0")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.kappa <= 0.0 or self.n_tau < 1 or self.batch_size < 1:
            raise ValueError("kappa, n_tau and batch_size must be positive")
        if self.total_env_steps < 0:
            raise ValueError("total_env_steps must be >= 0")
        if self.qr_normalization not in ("mean", "literal"):
            raise ValueError("qr_normalization must be 'mean' or 'literal'")

    @property
    def effective_n_tau(self):
        return 1 if self.variant == "avi" else self.n_tau

    @property
    def decay_steps(self):
        if self.eps_decay_steps is not None:
            return self.eps_decay_steps
        return self.total_env_steps // 2


def epsilon(t, cfg):
    """Linear ramp from ``eps0`` to ``eps_final`` over ``decay_steps``, then flat."""
    decay = cfg.decay_steps
    if t >= decay:
        return cfg.eps_final
    return cfg.eps0 + t * (cfg.eps_final - cfg.eps0) / decay


def greedy_action(quantiles):
    """Argmin over actions of the quantile mean; ties go to the lowest index."""
    return int(np.argmin(np.asarray(quantiles).mean(axis=-1)))


def select_action(params, obs, eps, rng):
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(params.n_actions))
    return greedy_action(qnet.forward(params, obs))


def compute_targets(target_params, batch, gamma):
    """Bootstrapped target quantiles, shape (B, n_tau).

    The next action is the target network's greedy (argmin-mean) choice.
    With one quantile this is the scalar ``g + gamma * min_u Q'``.
    """
    nxt = qnet.forward(target_params, batch.next_obs)
    if nxt.ndim == 2:
        nxt = nxt[None]
    best = np.argmin(nxt.mean(axis=2), axis=1)
    boot = nxt[np.arange(nxt.shape[0]), best]
    keep = gamma * (1.0 - batch.done.astype(np.float64))
    return batch.g[:, None] + keep[:, None] * boot


@dataclass
class LossResult:
    total: float
    quantile: float
    risk: float
    rho_hat: float
    degenerate_tail: bool
    grads: qnet.Gradients


def risk_statistic(costs, cfg):
    """``(rho_hat, degenerate)`` for the variant: CVaR for rho_qravi, mean otherwise."""
    if cfg.variant == "rho_qravi":
        est = kde_fit(costs, cfg.bandwidth, cfg.kde_grid_size)
        return cvar_with_flag(est, cfg.risk.beta)
    return expected_cost(costs), False


def compute_loss(online, batch, targets, cfg, taus=None):
    """Composite loss and parameter gradients on one batch.

    The risk term depends only on the batch costs, so it adds to the loss value
    but contributes nothing to the gradient.
    """
    n = len(batch)
    pred_all, cache = qnet.forward(online, batch.obs, return_cache=True)
    rows = np.arange(n)
    pred = pred_all[rows, batch.actions]
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != pred.shape:
        raise ValueError(f"targets {targets.shape} do not align with predictions {pred.shape}")

    if cfg.variant == "avi":
        diff = targets[:, 0] - pred[:, 0]
        quantile = float(np.mean(diff * diff))
        dpred = (-2.0 / n * diff)[:, None]
    else:
        if taus is None:
            taus = make_tau_grid(pred.shape[1])
        losses, g = qr_loss_batch(pred, targets, taus, cfg.kappa, cfg.qr_normalization)
        quantile = float(np.mean(losses))
        dpred = g / n

    out_grad = np.zeros_like(pred_all)
    out_grad[rows, batch.actions] = dpred
    grads = qnet.backward(online, batch.obs, out_grad, cache=cache)

    rho_hat, degenerate = risk_statistic(batch.costs, cfg)
    if cfg.variant in ("e_qravi", "rho_qravi"):
        lam = cfg.risk.lam
        risk = lam * risk_penalty(rho_hat, cfg.risk.c_max)
        total = (1.0 - lam) * quantile + risk
        grads = grads.scaled(1.0 - lam)
    else:
        risk = 0.0
        total = quantile
    return LossResult(total, quantile, risk, rho_hat, degenerate, grads)


def episode_seed(base_seed, stream, index):
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(stream), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class TrainLog:
    updates: list = field(default_factory=list)
    episodes: list = field(default_factory=list)

    def quantile_losses(self):
        return np.array([u[1] for u in self.updates])

    def running_mean(self, column=1, window=RUNNING_MEAN_WINDOW):
        vals = np.array([u[column] for u in self.updates], dtype=np.float64)
        if vals.size == 0:
            return vals
        c = np.concatenate(([0.0], np.cumsum(vals)))
        idx = np.arange(1, vals.size + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)

    def summary(self):
        """Mean quantile loss over all updates and mean total loss over the final 10%."""
        if not self.updates:
            return {"quantile_loss_avg": 0.0, "total_loss_final": 0.0, "risk_loss_final": 0.0,
                    "quantile_loss_final": 0.0, "updates": 0}
        u = np.array([r[1:4] for r in self.updates], dtype=np.float64)
        tail = u[-max(1, len(u) // 10):]
        return {
            "quantile_loss_avg": float(u[:, 0].mean()),
            "quantile_loss_final": float(tail[:, 0].mean()),
            "risk_loss_final": float(tail[:, 1].mean()),
            "total_loss_final": float(tail[:, 2].mean()),
            "updates": len(u),
        }


@dataclass
class TrainResult:
    params: qnet.NetworkParams
    target: qnet.NetworkParams
    opt: qnet.OptimizerState
    log: TrainLog
    checkpoints: list


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def config_meta(cfg, env_cfg):
    a = asdict(cfg)
    a["risk"] = asdict(cfg.risk)
    a["hidden"] = list(cfg.hidden)
    return {"agent": a, "env": asdict(env_cfg)}


def train(cfg, env_cfg=None, out_dir=None):
    """Run the full interaction/update loop for ``cfg.total_env_steps`` steps.

    With ``out_dir`` set, writes ``train_log.csv``, ``episodes.csv`` and
    checkpoints (every ``checkpoint_every`` steps and at the end).
    """
    env_cfg = env_cfg or envmod.EnvConfig()
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, act_ss, replay_ss = ss.spawn(3)
    n_tau = cfg.effective_n_tau
    params = qnet.init(env_cfg.obs_dim, envmod.N_ACTIONS, n_tau,
                       int(init_ss.generate_state(1)[0]), hidden=cfg.hidden)
    target = params.copy()
    opt = qnet.OptimizerState(mode=cfg.optimizer, lr=cfg.lr, k_alpha=cfg.k_alpha)
    act_rng = np.random.default_rng(act_ss)
    replay_rng = np.random.default_rng(replay_ss)
    taus = make_tau_grid(n_tau)
    buf = ReplayBuffer(cfg.buffer_size)
    log = TrainLog()
    checkpoints = []
    meta = config_meta(cfg, env_cfg)

    def checkpoint(step, name):
        if out_dir is None:
            return
        path = os.path.join(out_dir, name)
        m = dict(meta, summary=log.summary())
        qnet.save_checkpoint(path, params, opt, step, m)
        checkpoints.append(path)

    if cfg.total_env_steps > 0:
        sim = envmod.ReachAvoidEnv(env_cfg)
        ep = 0
        obs = sim.reset(episode_seed(cfg.seed, 0, ep))
        ep_g = ep_c = 0.0
        for t in range(cfg.total_env_steps):
            eps = epsilon(t, cfg)
            a = select_action(params, obs, eps, act_rng)
            out = sim.step(a)
            buf.push(Transition(obs, a, out.g, out.cost, out.obs, out.done))
            ep_g += out.g
            ep_c += out.cost
            obs = out.obs
            if out.done:
                log.episodes.append((ep, ep_g, ep_c, sim.world.goals_reached))
                ep += 1
                obs = sim.reset(episode_seed(cfg.seed, 0, ep))
                ep_g = ep_c = 0.0

            step_no = t + 1
            if step_no % cfg.train_freq == 0 and len(buf) >= cfg.batch_size:
                batch = buf.sample(cfg.batch_size, replay_rng)
                y = compute_targets(target, batch, cfg.gamma)
                if cfg.risk_shaped_targets and cfg.variant in ("e_qravi", "rho_qravi"):
                    rho, _ = risk_statistic(batch.costs, cfg)
                    y = y + cfg.risk.lam * risk_penalty(rho, cfg.risk.c_max)
                res = compute_loss(params, batch, y, cfg, taus)
                record = (step_no, res.quantile, res.risk, res.total, eps, res.rho_hat,
                          res.degenerate_tail)
                if not all(math.isfinite(v) for v in (res.quantile, res.risk, res.total)):
                    if out_dir is not None:
                        write_csv(os.path.join(out_dir, "diagnostic.csv"), TRAIN_LOG_FIELDS, [record])
                    raise TrainingDiverged(f"non-finite loss at step {step_no}", record)
                params = qnet.step(params, res.grads, opt)
                log.updates.append(record)
            if step_no % cfg.target_freq == 0:
                target = qnet.soft_update(target, params, cfg.eta)
            if cfg.checkpoint_every and step_no % cfg.checkpoint_every == 0:
                checkpoint(step_no, f"checkpoint_{step_no:09d}.rqck")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "train_log.csv"), TRAIN_LOG_FIELDS, log.updates)
        write_csv(os.path.join(out_dir, "episodes.csv"), EPISODE_FIELDS, log.episodes)
        checkpoint(cfg.total_env_steps, "checkpoint_final.rqck")
    return TrainResult(params, target, opt, log, checkpoints)


@dataclass
class EpisodeMetrics:
    seed: int
    episode: int
    steps: int
    cost_to_go: float  # mean stage cost per step
    violation: float  # mean c_s + c_h per step
    goals: int


@dataclass
class EvalMetrics:
    episodes: list
    traces: dict

    @property
    def total_goals(self):
        return sum(e.goals for e in self.episodes)

    @property
    def avg_cost_to_go(self):
        return float(np.mean([e.cost_to_go for e in self.episodes]))

    @property
    def violation_mean(self):
        return float(np.mean([e.violation for e in self.episodes]))

    @property
    def violation_std(self):
        return float(np.std([e.violation for e in self.episodes]))


def run_episode(params, env_cfg, ep_seed, eps=0.0, rng=None, trace=False):
    sim = envmod.ReachAvoidEnv(env_cfg, trace=trace)
    obs = sim.reset(ep_seed)
    g_sum = c_sum = 0.0
    steps = 0
    while True:
        if eps > 0.0:
            a = select_action(params, obs, eps, rng)
        else:
            a = greedy_action(qnet.forward(params, obs))
        out = sim.step(a)
        g_sum += out.g
        c_sum += out.cost
        steps += 1
        obs = out.obs
        if out.done:
            break
    return steps, g_sum, c_sum, sim.world.goals_reached, sim.trace


def evaluate(params, seeds=(0, 5, 10, 15, 20), episodes_per_seed=20, env_cfg=None,
             eps=0.0, keep_traces=False):
    """Roll out ``episodes_per_seed`` episodes per seed with an epsilon-greedy policy.

    ``eps=0`` is the greedy evaluation policy; ``eps=1`` is uniformly random.
    """
    env_cfg = env_cfg or envmod.EnvConfig()
    episodes = []
    traces = {}
    for s in seeds:
        rng = np.random.default_rng(np.random.SeedSequence(int(s), spawn_key=(2,)))
        for i in range(episodes_per_seed):
            steps, g_sum, c_sum, goals, tr = run_episode(
                params, env_cfg, episode_seed(s, 1, i), eps, rng, keep_traces)
            episodes.append(EpisodeMetrics(int(s), i, steps, g_sum / steps, c_sum / steps, goals))
            if keep_traces:
                traces[(int(s), i)] = tr
    return EvalMetrics(episodes, traces)
