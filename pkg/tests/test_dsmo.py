import numpy as np
import pytest

from dsmo.algorithms.dsmo import (
    AgentPool,
    _Sampler,
    direction,
    dsmo_round,
    init_state,
    run_dsmo,
    samples_per_agent,
)
from dsmo.algorithms.neumann import neumann_matrix
from dsmo.algorithms.schedule import StepSchedule
from dsmo.algorithms.streams import agent_streams, stream
from dsmo.errors import DimensionMismatch
from dsmo.metrics import consensus_error, write_csv
from dsmo.network import build_topology, mixing_matrix
from dsmo.problems.base import best_responses
from dsmo.problems.synthetic import SyntheticQuadratic, synthetic_quadratic
from helpers import small_problems


def ring(K):
    return mixing_matrix(build_topology("ring", K), "uniform_ring")


def reference_round(problem, W, agents_state, t, alpha, beta, gamma, streams, b):
    """Literal per-agent transcription with materialized q matrices (independent oracle)."""
    K, M = problem.K, problem.M
    L = problem.meta.L_g
    new = []
    for k in range(K):
        st = agents_state[k]
        mix = lambda get: sum(W[k, j] * get(agents_state[j]) for j in range(K))  # noqa: E731
        g1, g2 = problem.sample_f(np.array([k]), st["x"][None], st["y"][M - 1][None], [streams[0][k]])
        chain = st["h"]
        for m in range(M - 1, -1, -1):
            q = np.zeros_like(st["v"][m][0]) if t == 0 else neumann_matrix(st["v"][m], L[m])
            chain = st["u"][m] @ (q @ chain)
        d = st["s"] + (-1.0) ** M * chain
        nx = {
            "x": mix(lambda a: a["x"]) - alpha * d,
            "s": (1 - beta) * mix(lambda a: a["s"]) + beta * g1[0],
            "h": (1 - beta) * mix(lambda a: a["h"]) + beta * g2[0],
            "y": [], "u": [], "v": [],
        }
        for m in range(M):
            prev = st["x"] if m == 0 else st["y"][m - 1]
            gy, g12, H = problem.sample_g(m + 1, np.array([k]), prev[None], st["y"][m][None], [streams[m + 1][k]],
                                          b=b[m])
            nx["y"].append(mix(lambda a: a["y"][m]) - gamma * gy[0])
            nx["u"].append((1 - beta) * mix(lambda a: a["u"][m]) + beta * g12[0])
            nx["v"].append((1 - beta) * mix(lambda a: a["v"][m]) + beta * H[0])
        new.append(nx)
    return new


def as_agents(state):
    return [
        {"x": state.x[k], "s": state.s[k], "h": state.h[k], "y": [y[k] for y in state.y],
         "u": [u[k] for u in state.u], "v": [v[k] for v in state.v]}
        for k in range(state.K)
    ]


@pytest.mark.parametrize("dims", [(3, 2), (3, 4, 2), (2, 3, 2, 2)])
def test_round_matches_per_agent_reference(dims):
    problem = synthetic_quadratic(dims, K=4, seed=3, noise=0.3)
    W = ring(4).W
    b = [3] * problem.M
    state = init_state(problem, b)
    streams_a = agent_streams(11, 4, problem.M + 1)
    streams_b = agent_streams(11, 4, problem.M + 1)
    sampler = _Sampler(problem, streams_a, b, AgentPool(4, 1))
    ref = as_agents(state)
    for t in range(6):
        alpha, beta, gamma = 0.3, 0.4, 0.5
        ref = reference_round(problem, W, ref, t, alpha, beta, gamma, streams_b, b)
        state, _ = dsmo_round(state, problem, W, alpha, beta, gamma, sampler, check_invariants=True)
        for k in range(4):
            np.testing.assert_allclose(state.x[k], ref[k]["x"], atol=1e-12)
            np.testing.assert_allclose(state.h[k], ref[k]["h"], atol=1e-12)
            for m in range(problem.M):
                np.testing.assert_allclose(state.y[m][k], ref[k]["y"][m], atol=1e-12)
                np.testing.assert_allclose(state.v[m][k], ref[k]["v"][m], atol=1e-12)


def test_initial_state_and_first_direction():
    problem = synthetic_quadratic((3, 4, 2), K=3, seed=0)
    state = init_state(problem, [2, 5])
    assert state.v[0].shape == (3, 2, 4, 4) and state.v[1].shape == (3, 5, 2, 2)
    np.testing.assert_allclose(state.v[1][0, 4], problem.meta.mu_g[1] * np.eye(2))
    for arr in (state.x, state.s, state.h, *state.y, *state.u):
        assert not arr.any()
    agent = state.agent(1, problem.meta.L_g)
    assert all(not q.any() for q in agent.q)
    np.testing.assert_array_equal(direction(state, problem.meta.L_g), state.s)
    with pytest.raises(DimensionMismatch):
        init_state(problem, [1])


def test_direction_equals_materialized_chain():
    problem = synthetic_quadratic((3, 4, 2), K=2, seed=0, noise=0.5)
    W = ring(2).W
    sched = StepSchedule(regime="diminishing", C1=5, mu=1.0, b=4)
    captured = []
    list(run_dsmo(problem, W, sched, 5, seed=1, eval_every=1, hooks=[lambda r, s: captured.append(s)]))
    state = captured[-1]
    d = direction(state, problem.meta.L_g)
    for k in range(2):
        a = state.agent(k, problem.meta.L_g)
        chain = a.u[0] @ a.q[0] @ a.u[1] @ a.q[1] @ a.h
        np.testing.assert_allclose(d[k], a.s + chain, atol=1e-12)


def test_T0_single_record():
    problem = synthetic_quadratic((3, 2), K=3)
    recs = list(run_dsmo(problem, ring(3), StepSchedule(regime="constant", T=1), 0))
    assert len(recs) == 1
    assert recs[0].t == 0 and recs[0].samples_total == 0
    assert recs[0].mse_to_opt == pytest.approx(float(problem.x_star @ problem.x_star))


def test_sample_count_is_exact():
    problem = synthetic_quadratic((3, 4, 2), K=5)
    sched = StepSchedule(regime="constant", T=40, b=7)
    recs = list(run_dsmo(problem, ring(5), sched, 40, eval_every=10))
    assert samples_per_agent([7, 7]) == 2 + 9 + 9
    assert [r.t for r in recs] == [0, 10, 20, 30, 40]
    for r in recs:
        assert r.samples_total == 5 * 20 * r.t


def test_theory_b_rule_levels():
    problem = synthetic_quadratic((3, 2), K=2, mu_g=0.5, L_g=1.0)
    sched = StepSchedule(regime="constant", T=1024, b_rule="theory")
    recs = list(run_dsmo(problem, ring(2), sched, 1024, eval_every=1024))
    assert recs[-1].samples_total == 2 * 1024 * (2 + 2 + 30)


@pytest.mark.parametrize("name", ["synthetic", "policy_eval", "hyperparam", "risk_averse"])
def test_thread_count_does_not_change_results(name, tmp_path):
    problem = small_problems(K=6)[name]
    mu = problem.pl_mu or 1.0
    sched = StepSchedule(regime="diminishing", C1=20, mu=mu, b=3)
    paths = []
    for threads in (1, 3, 8):
        recs = list(run_dsmo(problem, ring(6), sched, 30, seed=4, eval_every=5, threads=threads))
        paths.append(tmp_path / f"t{threads}.csv")
        write_csv(recs, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes() == paths[2].read_bytes()


def test_streams_are_per_agent_and_stable():
    a = stream(5, 2, 1).standard_normal(4)
    b = agent_streams(5, 10, 3)[1][2].standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(stream(5, 2, 1).standard_normal(4), stream(5, 3, 1).standard_normal(4))


def test_frozen_x_lets_inner_levels_converge():
    """alpha = 0 with exact oracles: every level settles on its best response to the frozen x."""
    problem = synthetic_quadratic((3, 4, 2), K=4, seed=2, noise=0.0, heterogeneity=0.0)
    W = ring(4).W
    b = [2, 2]
    state = init_state(problem, b)
    state.x[:] = np.array([1.0, -0.5, 0.25])
    sampler = _Sampler(problem, agent_streams(0, 4, 3), b, AgentPool(4))
    target = best_responses(problem, state.x[0])
    errs = []
    for t in range(400):
        state, _ = dsmo_round(state, problem, W, 0.0, 0.5, 0.5, sampler)
        errs.append(sum(np.linalg.norm(y.mean(axis=0) - ys) for y, ys in zip(state.y, target)))
    np.testing.assert_allclose(state.x[0], [1.0, -0.5, 0.25])
    assert errs[-1] < 1e-10
    late = errs[50:]
    assert all(b_ <= a + 1e-15 for a, b_ in zip(late, late[1:]))


def test_beta_one_gives_exact_outer_gradient():
    """beta = 1 without noise: s_{t+1} is exactly grad1_f at the queried point."""
    A = [np.eye(2) * 0.8]
    B = [np.eye(2) * 0.3]
    problem = SyntheticQuadratic(A, B, np.ones((3, 2)), lam=2.0, K=3, mu_g=0.5, L_g=1.0)
    state = init_state(problem, [1])
    state.x[:] = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    sampler = _Sampler(problem, agent_streams(0, 3, 2), [1], AgentPool(3))
    new, _ = dsmo_round(state, problem, ring(3).W, 0.1, 1.0, 0.1, sampler)
    np.testing.assert_allclose(new.s, 2.0 * state.x, atol=1e-15)


def test_tracking_error_decays_geometrically_on_complete_graph():
    A = [np.eye(2) * 0.8]
    B = [np.eye(2) * 0.3]
    problem = SyntheticQuadratic(A, B, np.zeros((4, 2)), lam=1.5, K=4, mu_g=0.5, L_g=1.0)
    W = mixing_matrix(build_topology("complete", 4), "mean_matrix").W
    state = init_state(problem, [1])
    state.x[:] = np.array([0.7, -0.2])
    sampler = _Sampler(problem, agent_streams(0, 4, 2), [1], AgentPool(4))
    beta = 0.3
    target = 1.5 * state.x
    prev = np.linalg.norm(state.s - target)
    for _ in range(20):
        state, _ = dsmo_round(state, problem, W, 0.0, beta, 0.1, sampler)
        err = np.linalg.norm(state.s - target)
        assert err == pytest.approx((1 - beta) * prev, rel=1e-9)
        prev = err


def test_single_agent_noise_free_converges():
    problem = synthetic_quadratic((3, 3), K=1, seed=5, noise=0.0)
    sched = StepSchedule(regime="diminishing", C1=50, mu=problem.pl_mu, b=20)
    recs = list(run_dsmo(problem, np.eye(1), sched, 3000, eval_every=100))
    mse = [r.mse_to_opt for r in recs]
    assert mse[-1] < 1e-8 * mse[0]
    assert all(b <= a for a, b in zip(mse[5:], mse[6:]))
    assert all(r.consensus_x == 0.0 for r in recs)


def test_hooks_see_every_record():
    problem = synthetic_quadratic((3, 2), K=3)
    seen = []
    recs = list(run_dsmo(problem, ring(3), StepSchedule(regime="constant", T=30), 30, eval_every=7,
                         hooks=[lambda r, s: seen.append((r.t, s.t, consensus_error(s.x), r.consensus_x))]))
    assert [s[0] for s in seen] == [r.t for r in recs] == [0, 7, 14, 21, 28, 30]
    assert all(a == b for _, _, a, b in seen)


def test_wrong_gossip_size():
    problem = synthetic_quadratic((3, 2), K=3)
    with pytest.raises(DimensionMismatch):
        list(run_dsmo(problem, np.eye(4), StepSchedule(regime="constant", T=10), 10))
