"""Double-loop decentralized baselines.

DBSA (bilevel stochastic approximation, ``M = 1``): each round ``t`` re-solves
the inner problem from ``y = 0`` with ``t`` gossip-SGD steps, then takes one
outer gossip step along a stochastic hypergradient
``grad1_f - grad12_g Q grad2_f`` (``Q`` a Neumann inverse from ``b`` Hessian samples).

DSGD (compositional SGD): each round ``t`` estimates the inner value
``y ~ E[g(x)]`` with ``t`` gossip-averaging steps
``y <- (1 - eta) W y + eta * sample``, then steps along
``grad1_f + J' grad2_f`` with a sampled inner Jacobian ``J``.

Both spend ``O(t)`` samples per agent in round ``t``, so totals grow
quadratically in the horizon.
"""

from __future__ import annotations

import time

import numpy as np

from dsmo.algorithms.dsmo import AgentPool, default_eval_every, gossip_matrix
from dsmo.algorithms.neumann import neumann_apply
from dsmo.algorithms.schedule import StepSchedule, schedule_at
from dsmo.algorithms.streams import agent_streams
from dsmo.errors import DimensionMismatch, NotBilevel, NotCompositional
from dsmo.metrics import evaluate
from dsmo.network import gossip_mix


def dbsa_eta(problem, c=1.0):
    """Inner step ``min(1/L_g, c / (mu_g (i + 1)))``."""
    L, mu = problem.meta.L_g[0], problem.meta.mu_g[0]
    return lambda t, i: min(1.0 / L, c / (mu * (i + 1)))


def dsgd_eta(t, i):
    """Running-mean weights ``1/(i + 1)``."""
    return 1.0 / (i + 1)


def _run(algo, problem, gossip, schedule, T, seed, eval_every, hooks, threads, run_id, timing, round_fn):
    W, rho = gossip_matrix(gossip)
    if W.shape[0] != problem.K:
        raise DimensionMismatch(f"gossip matrix is for K={W.shape[0]}, problem has K={problem.K}")
    eval_every = eval_every or default_eval_every(T)
    streams = agent_streams(seed, problem.K, problem.M + 1)
    pool = AgentPool(problem.K, threads)
    x = np.zeros((problem.K, problem.dims.d_x))
    y = np.zeros((problem.K, problem.dims.d(problem.M)))
    samples = 0
    start = time.perf_counter()

    def record(t):
        rec = evaluate(problem, x, [y], run_id=run_id, algo=algo, rho=rho, t=t, samples_total=samples,
                       wall_ms=(time.perf_counter() - start) * 1e3 if timing else 0.0)
        for hook in hooks:
            hook(rec, (x, y))
        return rec

    try:
        yield record(0)
        for t in range(T):
            alpha = schedule_at(schedule, t, problem.K)[0]
            x, y, used = round_fn(t, x, W, alpha, streams, pool)
            samples += used
            if (t + 1) % eval_every == 0 or t + 1 == T:
                yield record(t + 1)
    finally:
        pool.close()


def run_dbsa(problem, gossip, schedule: StepSchedule, T, seed=0, eval_every=None, hooks=(), threads=1,
             run_id="0", eta=None, timing=False):
    """Decentralized bilevel stochastic approximation; yields :class:`RunRecord` rows."""
    if problem.M != 1:
        raise NotBilevel(f"DBSA needs a bilevel problem, got M={problem.M}")
    eta = eta or dbsa_eta(problem)
    b = schedule.b_levels(problem.meta.kappa_g, T)[0]
    L = problem.meta.L_g[0]
    K = problem.K
    d_y = problem.dims.d(1)

    def round_fn(t, x, W, alpha, streams, pool):
        rng = lambda p, agents: [streams[p][k] for k in agents]  # noqa: E731
        y = np.zeros((K, d_y))
        for i in range(t):
            g = pool.gather(lambda a: (problem.sample_g(1, a, x[a], y[a], rng(1, a), b=0, cross=False)[0],))[0]
            y = gossip_mix(y, W) - eta(t, i) * g

        def outer(a):
            g1, g2 = problem.sample_f(a, x[a], y[a], rng(0, a))
            _, g12, H = problem.sample_g(1, a, x[a], y[a], rng(1, a), b=b)
            return (g1 - (g12 @ neumann_apply(H, L, g2)[..., None])[..., 0],)

        d = pool.gather(outer)[0]
        return gossip_mix(x, W) - alpha * d, y, K * (t + 3 + b)

    return _run("dbsa", problem, gossip, schedule, T, seed, eval_every, hooks, threads, run_id, timing, round_fn)


def run_dsgd(problem, gossip, schedule: StepSchedule, T, seed=0, eval_every=None, hooks=(), threads=1,
             run_id="0", eta=dsgd_eta, timing=False):
    """Decentralized compositional SGD; yields :class:`RunRecord` rows."""
    if not problem.compositional or problem.M != 1:
        raise NotCompositional(f"{problem.tag} does not expose an inner-value/outer split")
    K = problem.K
    d_y = problem.dims.d(1)

    def round_fn(t, x, W, alpha, streams, pool):
        rng = lambda p, agents: [streams[p][k] for k in agents]  # noqa: E731
        y = np.zeros((K, d_y))
        for i in range(t):
            g = pool.gather(lambda a: (problem.sample_inner_value(a, x[a], rng(1, a)),))[0]
            w = eta(t, i)
            y = (1.0 - w) * gossip_mix(y, W) + w * g

        def outer(a):
            g1, g2 = problem.sample_f(a, x[a], y[a], rng(0, a))
            J = problem.sample_inner_jacobian(a, x[a], rng(1, a))
            return (g1 + (J @ g2[..., None])[..., 0],)

        d = pool.gather(outer)[0]
        return gossip_mix(x, W) - alpha * d, y, K * (t + 3)

    return _run("dsgd", problem, gossip, schedule, T, seed, eval_every, hooks, threads, run_id, timing, round_fn)
