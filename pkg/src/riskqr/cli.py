"""Command-line entry point: ``riskqr {train,eval,pareto,kde-demo,verify}``.

Any ``--section.key value`` flag overrides the matching config key, e.g.
``riskqr train --variant rho_qravi --risk.beta 0.9 --seed 0``.
"""
import argparse
import logging
import os
import sys
from dataclasses import replace

from . import agent, qnet, workflows
from .config import ConfigError, read_file, resolve
from .env import TRACE_FIELDS
from .kernels import BACKEND
from .tabular import nonexpansiveness_probe

log = logging.getLogger("riskqr")

OUTPUT_ROOT_ENV = "RISKQR_OUTPUT_ROOT"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _split_overrides(extra):
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into a dict."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for {tok}") from None
        out[key] = value
    return out


def _output_root(arg, rc=None):
    if arg:
        return arg
    if rc is not None and rc["run.output_dir"]:
        return rc["run.output_dir"]
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _run_config(args, extra):
    overrides = _split_overrides(extra)
    for flag, key in (("variant", "agent.variant"), ("seed", "run.seed"), ("scale", "run.scale"),
                      ("steps", "agent.total_env_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    file_raw = read_file(args.config) if getattr(args, "config", None) else None
    return resolve(file_raw, overrides)


def cmd_train(args, extra):
    rc = _run_config(args, extra)
    out_dir = os.path.join(_output_root(args.out, rc), args.run_id or rc.run_id)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.txt"), "w") as fh:
        fh.write(rc.dump())
    log.info("training %s for %d steps into %s (kernels: %s)", rc["agent.variant"],
             rc["agent.total_env_steps"], out_dir, BACKEND)
    try:
        res = agent.train(rc.agent, rc.env, out_dir)
    except agent.TrainingDiverged as exc:
        log.error("%s; diagnostic written to %s", exc, os.path.join(out_dir, "diagnostic.csv"))
        return EXIT_FAILURE
    s = res.log.summary()
    print(f"{out_dir}: {s['updates']} updates, quantile_loss_avg={s['quantile_loss_avg']:.6g}, "
          f"total_loss_final={s['total_loss_final']:.6g}")
    return EXIT_OK


def cmd_eval(args, extra):
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    out_dir = _output_root(args.out)
    os.makedirs(out_dir, exist_ok=True)
    labels = args.label if args.label else None
    if labels and len(labels) != len(args.checkpoints):
        raise ConfigError("--label must be given once per checkpoint")
    try:
        rows, ep_rows, traces = workflows.evaluate_checkpoints(
            args.checkpoints, labels, args.seeds, args.episodes, args.traces, args.workers)
    except qnet.CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    agent.write_csv(os.path.join(out_dir, "eval_summary.csv"), workflows.EVAL_FIELDS, rows)
    agent.write_csv(os.path.join(out_dir, "eval_episodes.csv"), workflows.EVAL_EPISODE_FIELDS, ep_rows)
    if args.traces:
        agent.write_csv(os.path.join(out_dir, "eval_traces.csv"),
                        ("label", "seed", "episode") + TRACE_FIELDS, traces)
    for r in rows:
        print(f"{r[0]}: goals={r[7]} success={r[8]:.1f}% violation={r[3]:.4f}+-{r[4]:.4f}")
    return EXIT_OK


def cmd_pareto(args, extra):
    rc = _run_config(args, extra)
    out_dir = _output_root(args.out, rc)
    os.makedirs(out_dir, exist_ok=True)
    base = replace(rc.agent, variant=args.variant)
    rows = workflows.pareto_sweep(base, rc.env, args.betas, args.lambdas, args.workers)
    agent.write_csv(os.path.join(out_dir, "pareto.csv"), workflows.PARETO_FIELDS, rows)
    with open(os.path.join(out_dir, "pareto_config.txt"), "w") as fh:
        fh.write(rc.dump())
    failed = [r for r in rows if r[2] != "ok"]
    print(f"{len(rows)} cells, {sum(r[6] for r in rows)} on front, {len(failed)} failed")
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_kde_demo(args, extra):
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    out_dir = _output_root(args.out)
    os.makedirs(out_dir, exist_ok=True)
    bw = args.bandwidth if args.bandwidth in ("scott", "paper_literal") else float(args.bandwidth)
    rows = workflows.kde_demo(args.b_list, args.beta, bw, args.resamples, args.seed)
    agent.write_csv(os.path.join(out_dir, "kde_demo.csv"), workflows.KDE_DEMO_FIELDS, rows)
    tail = workflows.tail_comparison(seed=args.seed)
    agent.write_csv(os.path.join(out_dir, "kde_tail.csv"), workflows.KDE_TAIL_FIELDS, tail)
    for r in rows:
        print(f"B={r[0]:>6} beta={r[1]}: |cvar_hat - cvar| = {r[6]:.4f} +- {r[7]:.4f}")
    return EXIT_OK


def cmd_verify(args, extra):
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    out_dir = _output_root(args.out)
    os.makedirs(out_dir, exist_ok=True)
    trials = workflows.contraction_campaign(args.trials, args.betas, args.gamma, args.seed,
                                            args.c_bound, args.workers)
    rows = [(t.seed, t.beta, t.gamma, t.n_states, t.n_actions, t.ratio, t.ratio_winf,
             int(t.passed), int(t.skipped)) for t in trials]
    agent.write_csv(os.path.join(out_dir, "verify.csv"), workflows.VERIFY_FIELDS, rows)
    bad = [r for r in rows if not r[7]]
    agent.write_csv(os.path.join(out_dir, "verify_counterexamples.csv"), workflows.VERIFY_FIELDS, bad)

    summary = []
    for beta in args.betas:
        sub = [t for t in trials if t.beta == beta and not t.skipped]
        rate = sum(t.passed for t in sub) / len(sub) if sub else float("nan")
        summary += [
            ("contraction", beta, "trials", len(sub)),
            ("contraction", beta, "pass_rate", rate),
            ("contraction", beta, "max_ratio", max((t.ratio for t in sub), default=float("nan"))),
            ("contraction", beta, "max_ratio_winf", max((t.ratio_winf for t in sub), default=float("nan"))),
        ]
        probe = nonexpansiveness_probe(beta, args.probe_pairs, args.seed)
        for name in ("evaluated", "max_w1_ratio", "mean_w1_ratio", "frac_w1_le_1",
                     "max_winf_ratio", "mean_winf_ratio", "frac_winf_le_1"):
            summary.append(("probe", beta, name, getattr(probe, name)))
        fps = workflows.fixed_point_checks(args.fixed_point_mdps, args.fp_gamma, beta, args.seed)
        if fps:
            summary += [
                ("fixed_point", beta, "gamma", args.fp_gamma),
                ("fixed_point", beta, "all_converged", int(all(f["converged"] for f in fps))),
                ("fixed_point", beta, "max_iterations", max(f["iterations"] for f in fps)),
                ("fixed_point", beta, "max_decay_ratio", max(f["max_ratio"] for f in fps)),
                ("fixed_point", beta, "max_two_start_gap", max(f["agreement"] for f in fps)),
            ]
    agent.write_csv(os.path.join(out_dir, "verify_summary.csv"), workflows.SUMMARY_FIELDS, summary)
    for section, beta, metric, value in summary:
        print(f"{section:12s} beta={beta:<5} {metric:18s} {value}")
    print(f"{len(bad)} W1 counterexample trial(s) written to verify_counterexamples.csv")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="riskqr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("--config")
    t.add_argument("--variant", choices=agent.VARIANTS)
    t.add_argument("--seed", type=int)
    t.add_argument("--scale", choices=("smoke", "paper"))
    t.add_argument("--steps", type=int, help="shortcut for agent.total_env_steps")
    t.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    t.add_argument("--run-id")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of checkpoints")
    e.add_argument("checkpoints", nargs="+")
    e.add_argument("--label", action="append")
    e.add_argument("--seeds", type=_ints, default=[0, 5, 10, 15, 20])
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--traces", action="store_true", help="also write eval_traces.csv")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("pareto", help="sweep (beta, lambda) and mark the Pareto front")
    s.add_argument("--config")
    s.add_argument("--variant", choices=agent.VARIANTS, default="rho_qravi")
    s.add_argument("--betas", type=_floats, default=[0.9, 0.95])
    s.add_argument("--lambdas", type=_floats, default=[0.25, 0.5, 0.75])
    s.add_argument("--seed", type=int)
    s.add_argument("--scale", choices=("smoke", "paper"))
    s.add_argument("--steps", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_pareto)

    k = sub.add_parser("kde-demo", help="CVaR error of the KDE estimate versus sample size")
    k.add_argument("--b-list", type=_ints, default=[100, 1000, 10000])
    k.add_argument("--beta", type=_floats, default=[0.9, 0.95])
    k.add_argument("--bandwidth", default="0.3")
    k.add_argument("--resamples", type=int, default=20)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kde_demo)

    v = sub.add_parser("verify", help="tabular contraction / fixed-point campaign")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--betas", type=_floats, default=[0.9, 0.95])
    v.add_argument("--gamma", type=float, default=0.99)
    v.add_argument("--c-bound", type=float, default=1.0)
    v.add_argument("--probe-pairs", type=int, default=10_000)
    v.add_argument("--fixed-point-mdps", type=int, default=5)
    v.add_argument("--fp-gamma", type=float, default=0.95)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if getattr(args, "trials", 1) < 1:
            raise ConfigError("--trials must be >= 1")
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"riskqr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
