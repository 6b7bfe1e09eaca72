"""Experiment workflows behind the CLI: evaluation tables, Pareto sweep,
KDE convergence demo and the tabular operator campaign."""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import agent, qnet, tabular
from .env import EnvConfig
from .risk import RiskConfig, cvar_beta, kde_fit, var_beta

EVAL_FIELDS = ("label", "variant", "avg_eval_cost_to_go", "violation_cost_mean",
               "violation_cost_std", "quantile_loss_avg", "total_loss_final10pct",
               "total_goals", "normalized_success_rate", "episodes")
EVAL_EPISODE_FIELDS = ("label", "seed", "episode", "steps", "cost_to_go", "violation_cost", "goals")
PARETO_FIELDS = ("beta", "lambda", "status", "quantile_loss", "risk_loss", "total_loss", "on_front")
KDE_DEMO_FIELDS = ("B", "beta", "bandwidth", "resamples", "true_cvar", "mean_estimate",
                   "mean_abs_error", "std_abs_error")
KDE_TAIL_FIELDS = ("beta", "B", "var_kde", "tail_kde", "tail_normal", "delta_tail")
VERIFY_FIELDS = ("seed", "beta", "gamma", "n_states", "n_actions", "ratio", "ratio_winf",
                 "pass", "skipped")
SUMMARY_FIELDS = ("section", "beta", "metric", "value")


def pmap(fn, items, workers=1):
    """Ordered map, fanned out over processes when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- evaluation

def normalized_success(goals):
    best = max(goals) if goals else 0
    return [100.0 if g == best else 100.0 * g / best for g in goals]


def _eval_one(args):
    path, seeds, episodes, keep_traces = args
    params, _, _, meta = qnet.load_checkpoint(path)
    env_cfg = EnvConfig(**meta["env"]) if "env" in meta else EnvConfig()
    return agent.evaluate(params, seeds, episodes, env_cfg, keep_traces=keep_traces), meta


def evaluate_checkpoints(paths, labels=None, seeds=(0, 5, 10, 15, 20), episodes=20,
                         keep_traces=False, workers=1):
    """Rows of the evaluation table, one per checkpoint, plus per-episode rows and traces."""
    results = pmap(_eval_one, [(p, tuple(seeds), episodes, keep_traces) for p in paths], workers)
    labels = labels or [None] * len(paths)
    goals = [m.total_goals for m, _ in results]
    rates = normalized_success(goals)
    rows, ep_rows, traces = [], [], []
    for (metrics, meta), label, rate in zip(results, labels, rates):
        variant = meta.get("agent", {}).get("variant", "unknown")
        label = label or variant
        summary = meta.get("summary", {})
        rows.append((label, variant, metrics.avg_cost_to_go, metrics.violation_mean,
                     metrics.violation_std, summary.get("quantile_loss_avg", float("nan")),
                     summary.get("total_loss_final", float("nan")), metrics.total_goals,
                     rate, len(metrics.episodes)))
        for e in metrics.episodes:
            ep_rows.append((label, e.seed, e.episode, e.steps, e.cost_to_go, e.violation, e.goals))
        for (s, i), tr in sorted(metrics.traces.items()):
            traces.extend((label, s, i) + row for row in tr)
    return rows, ep_rows, traces


# ------------------------------------------------------------------- pareto

def dominates(a, b):
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def pareto_front(points):
    """Indices of non-dominated points (both coordinates minimized)."""
    return [i for i, p in enumerate(points)
            if not any(dominates(q, p) for j, q in enumerate(points) if j != i)]


def _pareto_cell(args):
    base_cfg, env_cfg, beta, lam = args
    try:
        cfg = replace(base_cfg, risk=replace(base_cfg.risk, beta=beta, lam=lam))
        s = agent.train(cfg, env_cfg).log.summary()
        return "ok", s["quantile_loss_final"], s["risk_loss_final"], s["total_loss_final"]
    except (agent.TrainingDiverged, ValueError, FloatingPointError) as exc:
        return f"failed: {exc}", float("nan"), float("nan"), float("nan")


def pareto_sweep(base_cfg, env_cfg, betas, lambdas, workers=1):
    if not betas or not lambdas:
        raise ValueError("beta and lambda grids must be non-empty")
    cells = [(b, l) for b in betas for l in lambdas]
    results = pmap(_pareto_cell, [(base_cfg, env_cfg, b, l) for b, l in cells], workers)
    ok = [i for i, r in enumerate(results) if r[0] == "ok"]
    front = {ok[k] for k in pareto_front([(results[i][1], results[i][2]) for i in ok])}
    return [(b, l, r[0], r[1], r[2], r[3], int(i in front))
            for i, ((b, l), r) in enumerate(zip(cells, results))]


# ----------------------------------------------------------------- kde demo

@dataclass(frozen=True)
class TruncatedPareto:
    """Pareto(shape, scale) conditioned on ``x <= 1``; support ``[scale, 1]``."""

    shape: float = 1.5
    scale: float = 0.05

    def _c(self):
        return 1.0 - self.scale ** self.shape

    def ppf(self, q):
        return self.scale * (1.0 - np.asarray(q) * self._c()) ** (-1.0 / self.shape)

    def sample(self, rng, n):
        return self.ppf(rng.uniform(size=n))

    def cvar(self, beta):
        c, a, xm = self._c(), self.shape, self.scale
        s_hi, s_lo = 1.0 - beta * c, 1.0 - c
        if a == 1.0:
            integral = math.log(s_hi / s_lo)
        else:
            e = 1.0 - 1.0 / a
            integral = (s_hi ** e - s_lo ** e) / e
        return xm * integral / (c * (1.0 - beta))


def kde_demo(b_list=(100, 1000, 10000), betas=(0.9,), bandwidth=0.3, resamples=20, seed=0,
             dist=None):
    """Mean absolute CVaR error of the KDE estimate per sample size."""
    dist = dist or TruncatedPareto()
    rows = []
    for B in b_list:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(B),)))
        ests = {beta: [] for beta in betas}
        for _ in range(resamples):
            est = kde_fit(dist.sample(rng, int(B)), bandwidth)
            for beta in betas:
                ests[beta].append(cvar_beta(est, beta))
        for beta in betas:
            truth = dist.cvar(beta)
            err = np.abs(np.array(ests[beta]) - truth)
            rows.append((int(B), beta, est.bandwidth, resamples, truth,
                         float(np.mean(ests[beta])), float(err.mean()), float(err.std())))
    return rows


def tail_comparison(betas=(0.9, 0.95, 0.99), n=1000, mean=0.06, std=0.1, seed=0):
    """Tail mass beyond the KDE VaR: KDE versus a normal fitted to the same samples.

    Samples come from ``N(mean, std**2)`` truncated to ``[0, inf)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        draw = rng.normal(mean, std, size=n)
        out.extend(draw[draw >= 0.0].tolist())
    samples = np.array(out[:n])
    est = kde_fit(samples)
    mu, sigma = float(samples.mean()), float(samples.std(ddof=1))
    rows = []
    for beta in betas:
        v = var_beta(est, beta)
        tail_kde = 1.0 - float(np.interp(v, est.grid, est.cdf))
        tail_norm = 0.5 * math.erfc((v - mu) / (sigma * math.sqrt(2.0)))
        rows.append((beta, n, v, tail_kde, tail_norm, abs(tail_kde - tail_norm)))
    return rows


# ------------------------------------------------------------------- verify

def trial_dims(seed):
    return 2 + seed % 4, 1 + (seed // 4) % 3


def _trial(args):
    seed, beta, gamma, c_bound = args
    n_s, n_a = trial_dims(seed)
    return tabular.contraction_trial(seed, beta, gamma, n_s, n_a, tabular.CostMap(c_bound))


def contraction_campaign(trials, betas, gamma, seed=0, c_bound=1.0, workers=1):
    jobs = [(seed + i, beta, gamma, c_bound) for beta in betas for i in range(trials)]
    return pmap(_trial, jobs, workers)


def fixed_point_checks(n_mdps, gamma, beta, seed=0, tol=1e-6, max_iter=500, burn_in=3):
    """Convergence, decay ratio and two-start agreement on random 5-state MDPs."""
    out = []
    for k in range(n_mdps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        mdp = tabular.random_mdp(rng, 5, 3, gamma)
        a = tabular.fixed_point_iterate(mdp, beta, tol=tol, max_iter=max_iter)
        b = tabular.fixed_point_iterate(mdp, beta, tol=tol, max_iter=max_iter,
                                        init=tabular.random_z(rng, 5, 3))
        tr = np.array(a.trace)
        num, den = tr[burn_in + 1:], tr[burn_in:-1]
        ratios = num[den > 0.0] / den[den > 0.0]
        out.append({
            "mdp": k, "converged": a.converged and b.converged,
            "iterations": max(a.iterations, b.iterations),
            "max_ratio": float(ratios.max()) if ratios.size else 0.0,
            "agreement": tabular.sup_w1(a.z, b.z),
            "monotone": bool(np.all(np.diff(tr[1:]) <= 1e-15)),
        })
    return out
