"""Command-line driver: ``run``, ``sweep``, ``validate-network``, ``gradient-check`` and ``report``.

Exit statuses: 0 success, 1 validation or acceptance failure, 2 config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dsmo.algorithms.baselines import dbsa_eta, run_dbsa, run_dsgd
from dsmo.algorithms.dsmo import default_eval_every, run_dsmo
from dsmo.algorithms.schedule import schedule_at
from dsmo.config import (
    ExperimentConfig,
    build_gossip,
    build_problem,
    build_schedule,
    load_config,
    parse_network,
    resolved,
)
from dsmo.errors import ConfigError, DSMOError, InsufficientData, NoExactOracle, SchemaError
from dsmo.metrics import loglog_slope, read_csv, speedup_table, write_csv
from dsmo.network import validate_gossip
from dsmo.problems.base import exact_hypergradient, finite_difference_gradient, objective, relative_error

log = logging.getLogger("dsmo")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
SLOPE_WINDOW = (-1.3, -0.7)


# -- runs --------------------------------------------------------------------

def run_records(cfg: ExperimentConfig, problem, gossip, seed, threads=1, eval_every=None, run_id="0"):
    """Execute one run of ``cfg`` and return its records."""
    schedule = build_schedule(cfg, problem)
    kw = dict(seed=seed, eval_every=eval_every or cfg.eval_every, threads=threads, run_id=run_id)
    if cfg.algo == "dsmo":
        it = run_dsmo(problem, gossip, schedule, cfg.T, independent_outer_draws=cfg.independent_outer_draws, **kw)
    elif cfg.algo == "dbsa":
        it = run_dbsa(problem, gossip, schedule, cfg.T, eta=dbsa_eta(problem, cfg.schedule.eta_c), **kw)
    else:
        it = run_dsgd(problem, gossip, schedule, cfg.T, **kw)
    return list(it)


def execute(cfg: ExperimentConfig, out_dir, threads=1, eval_every=None):
    """Run ``cfg.reps`` repetitions into ``out_dir``; returns the list of record lists."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, gossip = build_gossip(cfg.network)
    problem = build_problem(cfg.problem, cfg.network.K)
    manifest = resolved(cfg, mu=problem.pl_mu)
    manifest["eval_every"] = eval_every or cfg.eval_every or default_eval_every(cfg.T)
    manifest["output_path"] = str(out)
    if cfg.T > 0:
        _, _, gamma = schedule_at(build_schedule(cfg, problem), 0, cfg.network.K)
        L_max = max(problem.meta.L_g)
        if gamma * L_max >= 2.0:
            log.warning("inner step gamma=%.3g exceeds the stability limit 2/L_g=%.3g; inner iterates may diverge",
                        gamma, 2.0 / L_max)
    runs = []
    for r in range(cfg.reps):
        seed = cfg.base_seed + r
        records = run_records(cfg, problem, gossip, seed, threads, eval_every, run_id=str(r))
        write_csv(records, out / f"run_{r:03d}.csv")
        log.info("run %d (seed %d): %d records", r, seed, len(records))
        runs.append(records)
    with open(out / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return runs


def cmd_run(args):
    cfg = load_config(args.config)
    out = args.out or cfg.output_path
    runs = execute(cfg, out, args.threads, args.eval_every)
    print(f"{len(runs)} run(s) written to {out}")
    return EXIT_OK


def _k_list(text):
    try:
        ks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("/network/K", f"--k-list must be comma-separated integers, got {text!r}") from None
    if not ks:
        raise ConfigError("/network/K", "--k-list is empty")
    if len(set(ks)) != len(ks):
        raise ConfigError("/network/K", f"--k-list has duplicate entries: {text}")
    if min(ks) < 1:
        raise ConfigError("/network/K", "every K must be positive")
    return ks


def default_epsilon(runs):
    """Four times the median final ``mse_to_opt`` of ``runs``."""
    finals = [r[-1].mse_to_opt for r in runs if r]
    if not finals:
        raise InsufficientData("no runs to derive epsilon from")
    return 4.0 * float(np.median(finals))


def format_speedup(rows, epsilon):
    lines = [f"# epsilon = {epsilon:.6g} (log10 of total samples)", "K,reps,reached,median,q12.5,q87.5"]
    for r in rows:
        lines.append(f"{r.K},{r.reps},{r.reached},{r.median_log10:.6g},{r.q125_log10:.6g},{r.q875_log10:.6g}")
    return "\n".join(lines)


def cmd_sweep(args):
    cfg = load_config(args.config)
    ks = _k_list(args.k_list)
    out = Path(args.out or cfg.output_path)
    grouped = {}
    for K in ks:
        cell = dataclasses.replace(cfg, network=parse_network({**dataclasses.asdict(cfg.network), "K": K}))
        grouped[K] = execute(cell, out / f"K{K}", args.threads, args.eval_every)
    eps = args.epsilon if args.epsilon is not None else default_epsilon(grouped[ks[0]])
    table = format_speedup(speedup_table([r for K in ks for r in grouped[K]], eps), eps)
    (out / "speedup.csv").write_text(table + "\n")
    print(table)
    return EXIT_OK


# -- validation utilities ----------------------------------------------------

def _read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from None


def cmd_validate_network(args):
    data = _read_json(args.config)
    if not isinstance(data, dict) or "network" not in data:
        raise ConfigError("/network", "missing required key")
    net = parse_network(data["network"])
    topo, G = build_gossip(net)
    rep = validate_gossip(G, topo)
    print(f"K={rep['K']} scheme={rep['scheme']} rho={rep['rho']:.12g}")
    print(f"max_row_dev={rep['max_row_dev']:.3e} max_col_dev={rep['max_col_dev']:.3e} "
          f"max_asym={rep['max_asym']:.3e} min_entry={rep['min_entry']:.3e}")
    print(f"connected={rep['connected']} support_ok={rep['support_ok']} -> {'OK' if rep['ok'] else 'FAIL'}")
    return EXIT_OK if rep["ok"] else EXIT_FAIL


def cmd_gradient_check(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg.problem, cfg.network.K)
    if not problem.has_exact:
        raise NoExactOracle(f"{problem.tag} has no exact oracle")
    rng = np.random.default_rng(cfg.base_seed)
    worst = 0.0
    for i in range(args.points):
        x = rng.uniform(-1.0, 1.0, problem.dims.d_x)
        if problem.tag == "hyperparam":
            x = np.abs(x)  # regularization weights stay non-negative
        exact = exact_hypergradient(problem, x)
        fd = finite_difference_gradient(lambda z: objective(problem, z), x, args.fd_step)
        err = relative_error(exact, fd)
        worst = max(worst, err)
        log.info("point %d: relative error %.3e", i, err)
    ok = worst <= args.tol
    print(f"{problem.tag}: max relative error {worst:.3e} over {args.points} points "
          f"(h={args.fd_step:g}, tol={args.tol:g}) -> {'OK' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# -- reports -----------------------------------------------------------------

def _load_runs(pattern):
    paths = sorted(glob.glob(pattern, recursive=True))
    if not paths:
        raise InsufficientData(f"no files match {pattern!r}")
    return paths, [read_csv(p) for p in paths]


def cmd_report(args):
    paths, runs = _load_runs(args.glob)
    if args.kind == "slope":
        print("file,slope,residual,verdict")
        all_ok = True
        for path, recs in zip(paths, runs):
            slope, resid = loglog_slope(recs, args.t_min, args.t_max, args.field)
            ok = SLOPE_WINDOW[0] <= slope <= SLOPE_WINDOW[1]
            all_ok &= ok
            print(f"{path},{slope:.6g},{resid:.6g},{'PASS' if ok else 'FAIL'}")
        return EXIT_OK if all_ok else EXIT_FAIL
    if args.kind == "speedup":
        eps = args.epsilon
        if eps is None:
            k_min = min(r[0].K for r in runs if r)
            eps = default_epsilon([r for r in runs if r and r[0].K == k_min])
        print(format_speedup(speedup_table(runs, eps, args.field), eps))
        return EXIT_OK
    print("file,K,t_first,consensus_first,t_last,consensus_last,late_mean")
    for path, recs in zip(paths, runs):
        if not recs:
            raise InsufficientData(f"{path} has no records")
        late = [r.consensus_x for r in recs if r.t >= 0.5 * recs[-1].t]
        print(f"{path},{recs[0].K},{recs[0].t},{recs[0].consensus_x:.6g},{recs[-1].t},"
              f"{recs[-1].consensus_x:.6g},{float(np.mean(late)):.6g}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="dsmo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: config output_path)")
        sp.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads per run")
        sp.add_argument("--eval-every", type=int, default=None, metavar="N", help="evaluation cadence in rounds")
        sp.add_argument("--epsilon", type=float, default=None, metavar="X", help="target accuracy")

    sp = sub.add_parser("run", help="execute reps runs of a config")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a config for several K and tabulate the speedup")
    common(sp)
    sp.add_argument("--k-list", required=True, help="comma-separated agent counts, e.g. 5,10,20")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate-network", help="check the gossip matrix of a network block")
    sp.add_argument("--config", required=True, metavar="PATH")
    sp.set_defaults(func=cmd_validate_network)

    sp = sub.add_parser("gradient-check", help="exact hypergradient vs central finite differences")
    sp.add_argument("--config", required=True, metavar="PATH")
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--fd-step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradient_check)

    sp = sub.add_parser("report", help="summarize run CSVs")
    sp.add_argument("--glob", required=True, help="glob pattern of run CSVs")
    sp.add_argument("--kind", choices=("slope", "speedup", "consensus"), required=True)
    sp.add_argument("--field", default="mse_to_opt")
    sp.add_argument("--t-min", type=int, default=None)
    sp.add_argument("--t-max", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=None, metavar="X")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SchemaError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DSMOError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
