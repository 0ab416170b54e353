"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The summary lines are printed at the end of the pytest session.
"""

import io
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from helpers import oracle_checks, random_point, small_problems
from dsmo.algorithms.baselines import dbsa_eta, run_dbsa, run_dsgd
from dsmo.algorithms.dsmo import run_dsmo
from dsmo.algorithms.neumann import neumann_matrix
from dsmo.algorithms.schedule import StepSchedule
from dsmo.cli import main
from dsmo.errors import ParseError
from dsmo.metrics import loglog_slope, samples_to_epsilon
from dsmo.network import KINDS, build_topology, mixing_matrix, validate_gossip
from dsmo.problems.base import exact_hypergradient, finite_difference_gradient, objective, relative_error
from dsmo.problems.libsvm import Dataset, parse_libsvm, write_libsvm
from dsmo.problems.policy_eval import policy_eval_problem
from dsmo.problems.synthetic import synthetic_quadratic


def record(number, ok, detail, started):
    ACCEPTANCE[number] = (bool(ok), f"{detail} [{time.perf_counter() - started:.1f} s]")
    return ok


# -- 1. hypergradient correctness ---------------------------------------------

def test_c01_hypergradient_matches_finite_differences():
    start = time.perf_counter()
    worst = {}
    for M, dims in ((1, (6, 4)), (2, (6, 4, 3)), (3, (6, 4, 3, 2))):
        for seed in range(2):
            problem = synthetic_quadratic(dims, K=4, seed=seed)
            rng = np.random.default_rng(100 + M)
            for _ in range(10):
                x = rng.uniform(-2, 2, dims[0])
                fd = finite_difference_gradient(lambda z: objective(problem, z), x, 1e-5)
                err = relative_error(exact_hypergradient(problem, x), fd)
                worst[M] = max(worst.get(M, 0.0), err)
    ok = max(worst.values()) <= 1e-4
    record(1, ok, "max rel err " + ", ".join(f"M={m}: {e:.1e}" for m, e in worst.items()), start)
    assert ok, worst


# -- 2. Neumann estimator -------------------------------------------------------

def test_c02_neumann_geometric_decay():
    start = time.perf_counter()
    mu, L, d = 0.5, 1.0, 6
    kappa = mu / L
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((d, d)))
    A = Q @ np.diag(np.linspace(mu, L, d)) @ Q.T
    A_inv = np.linalg.inv(A)
    bs = (5, 10, 20, 40)
    errs = [np.linalg.norm(neumann_matrix(np.broadcast_to(A, (b, d, d)), L) - A_inv, 2) for b in bs]
    bounds = [(1 - kappa) ** (b + 1) / (kappa * L) / kappa for b in bs]
    ratios = [(errs[i + 1] / errs[i]) ** (1.0 / (bs[i + 1] - bs[i])) for i in range(len(bs) - 1)]
    # the decay is exactly 1 - kappa in exact arithmetic; allow for accumulated round-off
    floor = [64 * np.finfo(float).eps * np.linalg.norm(A_inv, 2) * b for b in bs]
    decays = all(errs[i + 1] <= (1 - kappa) ** (bs[i + 1] - bs[i]) * errs[i] + floor[i + 1]
                 for i in range(len(bs) - 1))
    ok = all(e <= bd + fl for e, bd, fl in zip(errs, bounds, floor)) and decays
    record(2, ok, "errors " + ", ".join(f"{e:.1e}" for e in errs)
           + "; per-step ratios " + ", ".join(f"{r:.6f}" for r in ratios), start)
    assert ok


# -- 3. gossip matrices -------------------------------------------------------

def test_c03_gossip_invariants():
    start = time.perf_counter()
    failures = []
    checked = 0
    for kind in KINDS:
        schemes = ["metropolis"] + (["uniform_ring"] if kind == "ring" else []) \
            + (["mean_matrix"] if kind == "complete" else [])
        for K in range(2, 51):
            topo = build_topology(kind, K, edge_prob=0.3, seed=K)
            for scheme in schemes:
                rep = validate_gossip(mixing_matrix(topo, scheme), topo, tol=1e-12)
                checked += 1
                if not rep["ok"]:
                    failures.append((kind, K, scheme))
    lam = [(1 + 2 * math.cos(2 * math.pi * j / 5)) / 3 for j in range(1, 5)]
    oracle = max(v * v for v in lam)
    rho = mixing_matrix(build_topology("ring", 5), "uniform_ring").rho
    ok = not failures and abs(rho - oracle) <= 1e-10
    record(3, ok, f"{checked} matrices, {len(failures)} failures; ring5 rho {rho:.12f} vs {oracle:.12f}", start)
    assert ok, failures


# -- 4 and 5. PL rate and linear speedup ---------------------------------------

PL_DIMS = (64, 16, 8)
PL_T = 20_000
REPS = 5
_pl_cache = {}


def pl_runs(K):
    """Diminishing-schedule runs on the shared quadratic; the total sample budget is fixed across K."""
    if K not in _pl_cache:
        problem = synthetic_quadratic(PL_DIMS, K=K, seed=0)
        G = mixing_matrix(build_topology("ring", K), "uniform_ring")
        schedule = StepSchedule(regime="diminishing", C1=50.0, mu=problem.pl_mu, b_rule="fixed", b=20)
        T = PL_T * 5 // K
        _pl_cache[K] = [list(run_dsmo(problem, G, schedule, T, seed=s, eval_every=20)) for s in range(REPS)]
    return _pl_cache[K]


@pytest.mark.slow
def test_c04_pl_rate():
    start = time.perf_counter()
    slopes = sorted(loglog_slope(r, t_min=2_000, t_max=PL_T)[0] for r in pl_runs(5))
    median = slopes[len(slopes) // 2]
    ok = -1.3 <= median <= -0.7
    record(4, ok, f"median slope {median:.3f} (runs " + ", ".join(f"{s:.2f}" for s in slopes) + ")", start)
    assert ok


@pytest.mark.slow
def test_c05_linear_speedup():
    start = time.perf_counter()
    eps = 4.0 * float(np.median([r[-1].mse_to_opt for r in pl_runs(5)]))
    medians = {}
    for K in (5, 10, 20):
        hits = [samples_to_epsilon(r, eps) for r in pl_runs(K)]
        medians[K] = float(np.median([math.inf if h is None else h for h in hits]))
    spread = max(medians.values()) / min(medians.values())
    ok = spread <= 1.5
    record(5, ok, f"eps {eps:.2e}; median samples " + ", ".join(f"K={k}: {v:.3g}" for k, v in medians.items())
           + f"; spread x{spread:.2f}", start)
    assert ok


# -- 6. consensus scaling -----------------------------------------------------

@pytest.mark.slow
def test_c06_consensus_scaling():
    start = time.perf_counter()
    problem = synthetic_quadratic((16, 12, 8), K=5, seed=0)
    G = mixing_matrix(build_topology("ring", 5), "uniform_ring")
    T = 4000
    late = {}
    for C0 in (0.1, 0.05):
        schedule = StepSchedule(regime="constant", C0=C0, T=T, b=10)
        vals = []
        for seed in range(3):
            vals += [r.consensus_x for r in run_dsmo(problem, G, schedule, T, seed=seed, eval_every=10)
                     if r.t >= T // 2]
        late[C0] = float(np.mean(vals))
    ratio = late[0.1] / late[0.05]
    ok = 3.0 <= ratio <= 5.33
    record(6, ok, f"late consensus ratio {ratio:.3f}", start)
    assert ok


# -- 7. baseline ordering -----------------------------------------------------

@pytest.mark.slow
def test_c07_baseline_ordering():
    start = time.perf_counter()
    problem = policy_eval_problem(20, 5, 0.9, 1.0, K=5, seed=0)
    G = mixing_matrix(build_topology("ring", 5), "uniform_ring")
    # 300 baseline rounds cost 228,750 samples; 11,400 DSMO rounds cost 228,000
    T_base, T_ours = 300, 11_400
    schedule = StepSchedule(regime="diminishing", C1=50.0, mu=problem.pl_mu, b_rule="theory", T=T_ours)
    wins = {"dbsa": 0, "dsgd": 0}
    for seed in range(5):
        ours = list(run_dsmo(problem, G, schedule, T_ours, seed=seed, eval_every=20))
        for name, runner, extra in (("dbsa", run_dbsa, {"eta": dbsa_eta(problem)}), ("dsgd", run_dsgd, {})):
            base = list(runner(problem, G, schedule, T_base, seed=seed, eval_every=5, **extra))
            eps = base[-1].mse_to_opt
            hit = samples_to_epsilon(ours, eps)
            wins[name] += hit is not None and hit < base[-1].samples_total
    ok = wins["dbsa"] >= 4 and wins["dsgd"] >= 4
    record(7, ok, f"seeds won vs DBSA {wins['dbsa']}/5, vs DSGD {wins['dsgd']}/5", start)
    assert ok


# -- 8. determinism -----------------------------------------------------------

def test_c08_determinism(tmp_path):
    start = time.perf_counter()
    cfg = {
        "problem": {"tag": "synthetic", "dims": [6, 4, 3]},
        "network": {"kind": "ring", "K": 8},
        "schedule": {"regime": "constant", "beta_scale": 1.0},
        "T": 300, "reps": 2, "eval_every": 10,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for i, threads in enumerate((1, 8, 1, 8)):
        out = tmp_path / f"o{i}"
        assert main(["run", "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
        outs.append([(out / f"run_{r:03d}.csv").read_bytes() for r in range(2)])
    ok = all(o == outs[0] for o in outs)
    record(8, ok, "4 invocations (threads 1, 8, 1, 8) byte-identical" if ok else "CSV bytes differ", start)
    assert ok


# -- 9. LIBSVM parser -----------------------------------------------------------

MALFORMED = [
    ("+1 1:0.5\n-1 2:x\n", 2),
    ("+1 1:1\n\n\n-1 b:2\n", 4),
    ("+1 2:1 1:1\n", 1),
    ("+1 1:1\n+1 1:1 1:2\n", 2),
    ("+1 1:1\n-1 0:1\n", 2),
    ("+1 1:1\nfoo 1:1\n", 2),
]


def test_c09_libsvm_parser():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    lossless = 0
    for _ in range(100):
        n, d = rng.integers(1, 40), rng.integers(1, 30)
        X = np.where(rng.random((n, d)) < 0.3, rng.standard_normal((n, d)) * 10.0 ** rng.integers(-6, 6, (n, d)), 0.0)
        ds = Dataset(rng.integers(0, 2, n), X)
        buf = io.StringIO()
        write_libsvm(ds, buf)
        back = parse_libsvm(buf.getvalue(), n_features=d)
        lossless += np.array_equal(back.labels, ds.labels) and np.array_equal(back.features, ds.features)
    lines_ok = 0
    for text, line in MALFORMED:
        try:
            parse_libsvm(text)
        except ParseError as exc:
            lines_ok += exc.line == line
    ok = lossless == 100 and lines_ok == len(MALFORMED)
    record(9, ok, f"{lossless}/100 lossless round trips, {lines_ok}/{len(MALFORMED)} malformed lines located", start)
    assert ok


# -- 10. unbiasedness ---------------------------------------------------------

def test_c10_oracles_unbiased():
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    checked, bad = 0, []
    for name, problem in small_problems(K=3).items():
        for _ in range(5):
            x = random_point(problem, rng)
            for oracle, mean, se, exact in oracle_checks(problem, x, rng, 100_000):
                exact = np.ravel(exact)
                slack = 5 * se + 1e-10 * (1 + np.abs(exact))
                checked += 1
                if np.any(np.abs(mean - exact) > slack):
                    bad.append((name, oracle, float(np.max(np.abs(mean - exact) / np.maximum(se, 1e-300)))))
    ok = not bad
    record(10, ok, f"{checked} oracle checks at 1e5 draws, {len(bad)} outside 5 SE", start)
    assert ok, bad
