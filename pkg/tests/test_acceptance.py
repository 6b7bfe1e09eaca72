"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or ``python tests/test_acceptance.py``.
"""
import csv
import sys
import time

import numpy as np
import pytest

from riskqr import agent, cli, qnet, workflows
from riskqr.agent import AgentConfig
from riskqr.env import EnvConfig
from riskqr.replay import Batch
from riskqr.risk import (RiskConfig, cvar_beta, kde_fit, make_tau_grid, qr_loss_batch,
                         wasserstein1_atoms)
from riskqr.tabular import FiniteDistribution, cvar_finite, nonexpansiveness_probe

RESULTS = {}


def report(number, ok, detail, elapsed, limit=None):
    within = limit is None or elapsed < limit
    verdict = "PASS" if ok and within else "FAIL"
    budget = f"{elapsed:.1f}s" + (f" (limit {limit:.0f}s)" if limit else "")
    line = f"criterion {number:2d}: {verdict}  {detail}  [{budget}]"
    RESULTS[number] = line
    print(line)
    return ok and within


# 1 -------------------------------------------------------------------------

BANDIT_ATOMS = np.array([0.0, 0.2, 0.5, 1.0])
BANDIT_PROBS = np.array([0.3, 0.3, 0.3, 0.1])


def bandit_quantiles(n_updates=50_000, n_tau=32, batch=16, kappa=0.01, lr=1e-3, seed=0):
    taus = make_tau_grid(n_tau)
    params = qnet.init(1, 1, n_tau, seed, hidden=(16,))
    opt = qnet.OptimizerState(mode="adam", lr=lr)
    rng = np.random.default_rng(seed)
    obs = np.ones((batch, 1))
    for _ in range(n_updates):
        y = rng.choice(BANDIT_ATOMS, p=BANDIT_PROBS, size=(batch, n_tau))
        pred, cache = qnet.forward(params, obs, return_cache=True)
        _, g = qr_loss_batch(pred[:, 0], y, taus, kappa)
        out = np.zeros_like(pred)
        out[:, 0] = g / batch
        params = qnet.step(params, qnet.backward(params, obs, out, cache), opt)
    learned = qnet.forward(params, np.ones(1))[0]
    truth = BANDIT_ATOMS[np.searchsorted(np.cumsum(BANDIT_PROBS), taus)]
    return learned, truth


def test_c01_quantile_fixed_point():
    t0 = time.perf_counter()
    learned, truth = bandit_quantiles()
    w1 = wasserstein1_atoms(learned, truth)
    assert report(1, w1 < 0.05, f"bandit W1(learned, analytic quantiles) = {w1:.4f} < 0.05",
                  time.perf_counter() - t0, 60)


# 2 -------------------------------------------------------------------------

def test_c02_kde_cvar_convergence():
    t0 = time.perf_counter()
    rows = workflows.kde_demo((100, 1000, 10_000), (0.9, 0.95), bandwidth=0.3, resamples=20)
    err = {(r[0], r[1]): r[6] for r in rows}
    mean = {(r[0], r[1]): r[5] for r in rows}
    truth = {r[1]: r[4] for r in rows}
    ok = all(err[10_000, b] < err[100, b] for b in (0.9, 0.95))
    # the errors are mostly smoothing bias at h = 0.3, so show the estimate next to the truth
    detail = ", ".join(f"beta={b}: err(100)={err[100, b]:.4f} err(1e4)={err[10_000, b]:.4f} "
                       f"(est(1e4)={mean[10_000, b]:.3f} vs true {truth[b]:.3f})"
                       for b in (0.9, 0.95))
    assert report(2, ok, detail, time.perf_counter() - t0, 30)


# 3 -------------------------------------------------------------------------

def tail_enumeration(d, beta):
    order = np.argsort(d.atoms)[::-1]
    acc = total = 0.0
    for i in order:
        take = min(d.probs[i], (1.0 - beta) - acc)
        if take <= 0.0:
            break
        acc += take
        total += take * d.atoms[i]
    return total / (1.0 - beta)


def test_c03_analytic_cvar():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    est = kde_fit(rng.uniform(size=10_000))
    kde_err = max(abs(cvar_beta(est, b) - (1 + b) / 2) for b in (0.5, 0.9, 0.95))
    worst = 0.0
    for _ in range(100):
        d = FiniteDistribution(rng.uniform(size=8), rng.dirichlet(np.ones(8)))
        for b in (0.5, 0.9, 0.95):
            worst = max(worst, abs(cvar_finite(d, b) - tail_enumeration(d, b)))
    ok = kde_err < 0.05 and worst <= 1e-12
    assert report(3, ok, f"KDE max err {kde_err:.4f} < 0.05; finite vs enumeration max diff "
                  f"{worst:.1e}", time.perf_counter() - t0, 10)


# 4 -------------------------------------------------------------------------

def test_c04_contraction_campaign(tmp_path):
    t0 = time.perf_counter()
    betas = (0.9, 0.95)
    trials = workflows.contraction_campaign(1000, betas, 0.99, seed=0)
    bad = [t for t in trials if not t.passed]
    path = tmp_path / "counterexamples.csv"
    agent.write_csv(path, workflows.VERIFY_FIELDS,
                    [(t.seed, t.beta, t.gamma, t.n_states, t.n_actions, t.ratio, t.ratio_winf,
                      int(t.passed), int(t.skipped)) for t in bad])
    with open(path) as fh:
        serialized = list(csv.DictReader(fh))
    replay_ok = all(
        workflows._trial((int(r["seed"]), float(r["beta"]), 0.99, 1.0)).ratio == float(r["ratio"])
        for r in serialized)
    rates = {}
    for b in betas:
        sub = [t for t in trials if t.beta == b and not t.skipped]
        rates[b] = sum(t.passed for t in sub) / len(sub)
    probe = nonexpansiveness_probe(0.9, 10_000, seed=0)
    ok = probe.max_winf_ratio <= 1 + 1e-9 and len(serialized) == len(bad) and replay_ok
    detail = (f"W1 pass rate {', '.join(f'beta={b}: {r:.3f}' for b, r in rates.items())}; "
              f"{len(bad)} counterexample(s) serialized; probe max W-inf ratio "
              f"{probe.max_winf_ratio:.12f} <= 1+1e-9 (max W1 ratio {probe.max_w1_ratio:.3f})")
    assert report(4, ok, detail, time.perf_counter() - t0, 60)


# 5 -------------------------------------------------------------------------

FP_GAMMA = 0.95


def test_c05_fixed_point():
    t0 = time.perf_counter()
    tol = 1e-6
    checks = workflows.fixed_point_checks(20, FP_GAMMA, 0.9, seed=0, tol=tol, max_iter=500)
    conv = all(c["converged"] for c in checks)
    ratio = max(c["max_ratio"] for c in checks)
    gap = max(c["agreement"] for c in checks)
    ok = conv and ratio <= FP_GAMMA + 0.01 and gap < 2 * tol
    detail = (f"gamma={FP_GAMMA}: converged {sum(c['converged'] for c in checks)}/20 within "
              f"{max(c['iterations'] for c in checks)} <= 500 iters; max decay ratio "
              f"{ratio:.4f} <= {FP_GAMMA + 0.01}; two-start gap {gap:.2e} < {2 * tol:.0e}")
    assert report(5, ok, detail, time.perf_counter() - t0, 30)


# 6 / 7 ---------------------------------------------------------------------

def random_batch(rng, n, obs_dim, n_actions, cost_scale=1.0):
    return Batch(rng.normal(size=(n, obs_dim)), rng.integers(0, n_actions, size=n),
                 rng.normal(size=n), cost_scale * rng.uniform(size=n),
                 rng.normal(size=(n, obs_dim)), rng.random(n) < 0.2)


def random_net(seed, n_tau):
    p = qnet.init(6, 3, n_tau, seed, hidden=(8, 8))
    # random biases keep pre-activations off the rectifier kink, where FD is meaningless
    rng = np.random.default_rng(seed + 10_000)
    p.biases = [rng.normal(scale=0.1, size=b.shape) for b in p.biases]
    return p


def fd_max_rel_error(params, batch, targets, cfg, h=1e-6):
    res = agent.compute_loss(params, batch, targets, cfg)
    worst = 0.0
    for arr, garr in zip(params.arrays(), res.grads.arrays()):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = agent.compute_loss(params, batch, targets, cfg).total
            arr[idx] = old - h
            dn = agent.compute_loss(params, batch, targets, cfg).total
            arr[idx] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - garr[idx]) / max(abs(fd), abs(garr[idx]), 1e-6))
    return worst


def test_c06_gradient_correctness():
    t0 = time.perf_counter()
    worst = {}
    for variant in agent.VARIANTS:
        cfg = AgentConfig(variant=variant, n_tau=4)
        n_tau = cfg.effective_n_tau
        for k in range(20):
            rng = np.random.default_rng(1000 * k + 7)
            online = random_net(k, n_tau)
            target = random_net(k + 500, n_tau)
            batch = random_batch(rng, 8, 6, 3)
            y = agent.compute_targets(target, batch, 0.9)
            worst[variant] = max(worst.get(variant, 0.0), fd_max_rel_error(online, batch, y, cfg))
    ok = all(v < 1e-4 for v in worst.values())
    detail = "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " < 1e-4"
    assert report(6, ok, detail, time.perf_counter() - t0, 30)


def test_c07_composite_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_diff = 0.0
    risk_ok = True
    n_zero = n_pos = 0
    for k in range(40):
        online = qnet.init(6, 3, 8, k, hidden=(8, 8))
        batch = random_batch(rng, 64, 6, 3, cost_scale=rng.choice([0.05, 0.1, 0.5, 1.0]))
        y = agent.compute_targets(online, batch, 0.99)
        lam = float(rng.uniform(0.05, 0.95))
        base = agent.compute_loss(online, batch, y, AgentConfig(variant="qr_avi", n_tau=8))
        res = agent.compute_loss(online, batch, y, AgentConfig(
            variant="rho_qravi", n_tau=8, risk=RiskConfig(beta=0.9, c_max=0.1, lam=lam)))
        for a, g in zip(res.grads.arrays(), base.grads.arrays()):
            worst_diff = max(worst_diff, float(np.max(np.abs(a - (1 - lam) * g))))
        zero = res.risk == 0.0
        n_zero += zero
        n_pos += not zero
        risk_ok &= res.risk >= 0.0 and zero == (res.rho_hat <= 0.1)
    ok = worst_diff <= 1e-12 and risk_ok
    detail = (f"max |grad(rho) - (1-lam) grad(qr)| = {worst_diff:.1e} <= 1e-12; risk_loss >= 0 "
              f"and zero iff rho_hat <= 0.1 on {n_zero} zero / {n_pos} positive batches")
    assert report(7, ok, detail, time.perf_counter() - t0)


# 8 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_smoke_training():
    t0 = time.perf_counter()
    cfg = AgentConfig(variant="rho_qravi", risk=RiskConfig(beta=0.9, lam=0.5),
                      total_env_steps=20_000, buffer_size=50_000, seed=0)
    env_cfg = EnvConfig(horizon=200)
    try:
        res = agent.train(cfg, env_cfg)
        finite = res.params.is_finite()
    except agent.TrainingDiverged as exc:
        report(8, False, f"numeric failure: {exc}", time.perf_counter() - t0, 600)
        raise
    rm = res.log.running_mean(1)
    ratio = float(rm[-1] / rm.max())
    greedy = agent.evaluate(res.params, env_cfg=env_cfg).total_goals
    random = agent.evaluate(res.params, env_cfg=env_cfg, eps=1.0).total_goals
    ok = finite and ratio <= 0.5 and greedy > random
    detail = (f"finite={finite}; running-mean quantile loss final/peak = {ratio:.3f} "
              f"(need <= 0.5); goals greedy {greedy} vs random {random}")
    assert report(8, ok, detail, time.perf_counter() - t0, 600)


# 9 -------------------------------------------------------------------------

def _run_twice(tmp_path, name, argv, files):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{name}_{tag}"
        assert cli.main(argv + ["--out", str(out)]) == 0
        outs.append(out)
    return all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)


def test_c09_determinism(tmp_path):
    t0 = time.perf_counter()
    fast = ["--seed", "4", "--agent.total_env_steps", "1500", "--env.horizon", "100",
            "--agent.batch_size", "64", "--agent.target_freq", "200"]
    run = "rho_qravi_beta0.9_seed4"
    same = {}
    same["train"] = _run_twice(tmp_path, "train", ["train", *fast],
                               [f"{run}/train_log.csv", f"{run}/episodes.csv",
                                f"{run}/checkpoint_final.rqck"])
    ck = str(tmp_path / "train_a" / run / "checkpoint_final.rqck")
    same["eval"] = _run_twice(tmp_path, "eval", ["eval", ck, "--episodes", "2", "--traces"],
                              ["eval_summary.csv", "eval_episodes.csv", "eval_traces.csv"])
    same["verify"] = _run_twice(tmp_path, "verify",
                                ["verify", "--trials", "20", "--probe-pairs", "200",
                                 "--fixed-point-mdps", "1"],
                                ["verify.csv", "verify_counterexamples.csv", "verify_summary.csv"])
    ok = all(same.values())
    detail = "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items())
    assert report(9, ok, detail, time.perf_counter() - t0)


# 10 ------------------------------------------------------------------------

def test_c10_schedules_and_grids():
    t0 = time.perf_counter()
    cfg = AgentConfig(total_env_steps=20_000)
    e0, e_end, e_late = (agent.epsilon(t, cfg) for t in (0, cfg.decay_steps, 10 * cfg.decay_steps))
    g = make_tau_grid(32)
    ok = e0 == 1.0 and e_end == 0.05 and e_late == 0.05 and g[0] == 0.015625 and g[-1] == 0.984375
    assert report(10, ok, f"epsilon(0)={e0}, epsilon(decay)={e_end}, epsilon(10*decay)={e_late}; "
                  f"tau grid ends {g[0]} / {g[-1]}", time.perf_counter() - t0)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_c")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    print()
    for k in sorted(RESULTS):
        print(RESULTS[k])
    sys.exit(1 if failed else 0)
