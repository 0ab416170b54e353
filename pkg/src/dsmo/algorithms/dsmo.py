"""Gossip-based decentralized stochastic multi-level optimization.

Per round, every agent ``k``

1. samples ``grad1_f`` and ``grad2_f`` at ``(x_t^k, y_{M,t}^k)``;
2. moves ``x_{t+1}^k = sum_j w_kj x_t^j - alpha_t d_t^k`` with
   ``d_t^k = s_t^k + (-1)^M u_1 q_1 ... u_M q_M h_t^k``;
3. tracks ``s`` and ``h`` by ``(1 - beta) * gossip + beta * sample``;
4. for every level ``m`` samples ``grad2_g``, ``grad12_g`` and ``b_m`` Hessians at
   ``(y_{m-1,t}^k, y_{m,t}^k)``, takes ``y_{m,t+1}^k = gossip - gamma * grad2_g`` and
   tracks ``u_m`` and each Hessian estimate ``v_{m,i}`` like ``s``.

``q_m`` is the truncated Neumann inverse built from the ``v_{m,i}`` and is only
ever applied to vectors.  At ``t = 0`` every ``q_m`` is zero, so the first
direction is ``s_0 = 0``.  All reads use the time-``t`` state.

Agents are stored stacked (leading axis ``K``).  Gossip and the deterministic
updates run on the whole stack; oracle sampling is split into agent chunks that
may run on worker threads.  Each agent draws only from its own streams, so the
results do not depend on the thread count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from dsmo.algorithms.neumann import neumann_apply, neumann_matrix
from dsmo.algorithms.schedule import StepSchedule, schedule_at
from dsmo.algorithms.streams import agent_streams
from dsmo.errors import DimensionMismatch, InvariantViolation
from dsmo.metrics import evaluate
from dsmo.network import GossipMatrix, consensus_rho, gossip_mix


@dataclass
class AgentState:
    """One agent's view of the algorithm state (``q`` materialized)."""

    x: np.ndarray
    s: np.ndarray
    h: np.ndarray
    y: list
    u: list
    q: list
    v: list


@dataclass
class NetworkState:
    """Stacked state of all agents at round ``t``."""

    t: int
    x: np.ndarray  # (K, d_x)
    s: np.ndarray  # (K, d_x)
    h: np.ndarray  # (K, d_M)
    y: list  # [m] -> (K, d_m)
    u: list  # [m] -> (K, d_{m-1}, d_m)
    v: list  # [m] -> (K, b_m, d_m, d_m)

    @property
    def K(self):
        return self.x.shape[0]

    def agent(self, k, L_g) -> AgentState:
        q = []
        for m, v in enumerate(self.v):
            d = v.shape[-1]
            q.append(np.zeros((d, d)) if self.t == 0 else neumann_matrix(v[k], L_g[m]))
        return AgentState(
            x=self.x[k].copy(), s=self.s[k].copy(), h=self.h[k].copy(),
            y=[y[k].copy() for y in self.y], u=[u[k].copy() for u in self.u],
            q=q, v=[list(v[k].copy()) for v in self.v],
        )


def init_state(problem, b_levels) -> NetworkState:
    dims, K = problem.dims, problem.K
    if len(b_levels) != dims.M:
        raise DimensionMismatch(f"need one b per level, got {len(b_levels)} for M={dims.M}")
    d = [dims.d(m) for m in range(dims.M + 1)]
    return NetworkState(
        t=0,
        x=np.zeros((K, d[0])),
        s=np.zeros((K, d[0])),
        h=np.zeros((K, d[-1])),
        y=[np.zeros((K, d[m])) for m in range(1, dims.M + 1)],
        u=[np.zeros((K, d[m - 1], d[m])) for m in range(1, dims.M + 1)],
        v=[
            np.broadcast_to(mu * np.eye(d[m]), (K, b, d[m], d[m])).copy()
            for m, (mu, b) in enumerate(zip(problem.meta.mu_g, b_levels), start=1)
        ],
    )


def samples_per_agent(b_levels) -> int:
    """Oracle queries per agent per round: two outer plus ``2 + b_m`` per level."""
    return 2 + sum(2 + b for b in b_levels)


def direction(state: NetworkState, L_g) -> np.ndarray:
    """``s + (-1)^M u_1 q_1 ... u_M q_M h`` for every agent, applied right to left."""
    if state.t == 0:
        return state.s.copy()
    w = state.h
    for m in range(len(state.y) - 1, -1, -1):
        w = neumann_apply(state.v[m], L_g[m], w)
        w = (state.u[m] @ w[..., None])[..., 0]
    sign = -1.0 if len(state.y) % 2 else 1.0
    return state.s + sign * w


@dataclass
class RoundOutput:
    xbar: np.ndarray
    direction_norms: np.ndarray
    samples: int


class AgentPool:
    """Maps a per-chunk function over contiguous agent chunks, optionally on threads.

    ``fn(agents)`` returns a tuple whose entries are arrays with a leading agent
    axis (or ``None``, or nested tuples of such); chunk results are
    concatenated back in agent order.
    """

    def __init__(self, K, threads=1):
        n = max(1, min(int(threads), K))
        self.chunks = [c for c in np.array_split(np.arange(K), n) if len(c)]
        self.pool = ThreadPoolExecutor(len(self.chunks)) if len(self.chunks) > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def gather(self, fn):
        if self.pool is None:
            return fn(self.chunks[0])
        return _concat(list(self.pool.map(fn, self.chunks)))


def _concat(parts):
    first = parts[0]
    if first is None:
        return None
    if isinstance(first, (tuple, list)):
        return type(first)(_concat([p[j] for p in parts]) for j in range(len(first)))
    return np.concatenate(parts, axis=0)


class _Sampler:
    """Draws all oracle samples of one round."""

    def __init__(self, problem, streams, b_levels, pool, independent=False):
        self.problem = problem
        self.streams = streams
        self.b = list(b_levels)
        self.pool = pool
        self.independent = independent

    def _chunk(self, agents, state):
        p = self.problem
        rng = lambda purpose: [self.streams[purpose][k] for k in agents]  # noqa: E731
        g1, g2 = p.sample_f(agents, state.x[agents], state.y[-1][agents], rng(0), independent=self.independent)
        levels = []
        for m in range(1, p.M + 1):
            prev = state.x if m == 1 else state.y[m - 2]
            levels.append(p.sample_g(m, agents, prev[agents], state.y[m - 1][agents], rng(m), b=self.b[m - 1]))
        return g1, g2, tuple(levels)

    def __call__(self, state):
        return self.pool.gather(lambda agents: self._chunk(agents, state))


def dsmo_round(state, problem, W, alpha, beta, gamma, sampler, check_invariants=False):
    """Advance ``state`` by one round; returns ``(new_state, RoundOutput)``."""
    L_g = problem.meta.L_g
    d = direction(state, L_g)
    g1, g2, levels = sampler(state)

    def track(old, sample):
        return (1.0 - beta) * gossip_mix(old, W) + beta * sample

    x_new = gossip_mix(state.x, W) - alpha * d
    if check_invariants:
        lhs = x_new.mean(axis=0)
        rhs = state.x.mean(axis=0) - alpha * d.mean(axis=0)
        if np.max(np.abs(lhs - rhs)) > 1e-10 * (1.0 + np.max(np.abs(rhs))):
            raise InvariantViolation(f"round {state.t}: gossip-average identity violated")
    new = NetworkState(
        t=state.t + 1,
        x=x_new,
        s=track(state.s, g1),
        h=track(state.h, g2),
        y=[gossip_mix(y, W) - gamma * lv[0] for y, lv in zip(state.y, levels)],
        u=[track(u, lv[1]) for u, lv in zip(state.u, levels)],
        v=[track(v, lv[2]) for v, lv in zip(state.v, levels)],
    )
    out = RoundOutput(
        xbar=x_new.mean(axis=0),
        direction_norms=np.linalg.norm(d, axis=1),
        samples=state.K * samples_per_agent(sampler.b),
    )
    return new, out


def gossip_matrix(gossip):
    """``(W, rho)`` from a :class:`GossipMatrix` or a raw array."""
    if isinstance(gossip, GossipMatrix):
        return gossip.W, gossip.rho
    W = np.asarray(gossip, dtype=float)
    return W, consensus_rho(W)


def default_eval_every(T):
    return max(1, T // 500)


def run_dsmo(problem, gossip, schedule: StepSchedule, T, seed=0, eval_every=None, hooks=(),
             threads=1, run_id="0", independent_outer_draws=False, check_invariants=False,
             timing=False):
    """Run ``T`` rounds and yield a :class:`RunRecord` every ``eval_every`` rounds.

    Records are produced at ``t = 0``, every multiple of ``eval_every`` and at
    ``t = T``.  Each hook is called as ``hook(record, state)``.  ``wall_ms`` is
    only measured when ``timing`` is true (otherwise 0, keeping output
    byte-reproducible).
    """
    W, rho = gossip_matrix(gossip)
    if W.shape[0] != problem.K:
        raise DimensionMismatch(f"gossip matrix is for K={W.shape[0]}, problem has K={problem.K}")
    eval_every = eval_every or default_eval_every(T)
    b_levels = schedule.b_levels(problem.meta.kappa_g, T)
    state = init_state(problem, b_levels)
    streams = agent_streams(seed, problem.K, problem.M + 1)
    pool = AgentPool(problem.K, threads)
    sampler = _Sampler(problem, streams, b_levels, pool, independent_outer_draws)
    start = time.perf_counter()
    samples = 0

    def record():
        rec = evaluate(problem, state.x, state.y, run_id=run_id, algo="dsmo", rho=rho, t=state.t,
                       samples_total=samples,
                       wall_ms=(time.perf_counter() - start) * 1e3 if timing else 0.0)
        for hook in hooks:
            hook(rec, state)
        return rec

    try:
        yield record()
        for t in range(T):
            alpha, beta, gamma = schedule_at(schedule, t, problem.K)
            state, out = dsmo_round(state, problem, W, alpha, beta, gamma, sampler, check_invariants)
            samples += out.samples
            if state.t % eval_every == 0 or state.t == T:
                yield record()
    finally:
        pool.close()
