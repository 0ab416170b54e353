"""Shared fixtures and independent oracles for the test-suite."""

import numpy as np

from dsmo.problems.hyperparam import hyperparam_problem
from dsmo.problems.libsvm import synthetic_classification
from dsmo.problems.policy_eval import policy_eval_problem
from dsmo.problems.risk_averse import risk_averse_problem
from dsmo.problems.synthetic import synthetic_quadratic


def small_problems(K=3):
    """One small instance of every shipped problem."""
    return {
        "synthetic": synthetic_quadratic((4, 3, 2), K=K, seed=1),
        "policy_eval": policy_eval_problem(10, 3, 0.9, 1.0, K=K, seed=1),
        "hyperparam": hyperparam_problem(synthetic_classification(60, 5, seed=1),
                                         synthetic_classification(40, 5, seed=2), K=K, seed=1),
        "risk_averse": risk_averse_problem(3, K=K, n_data=200, seed=1),
    }


def random_point(problem, rng, scale=1.0):
    x = scale * rng.uniform(-1, 1, problem.dims.d_x)
    return np.abs(x) if problem.tag == "hyperparam" else x


def mc_mean(draw, n, chunk=10_000):
    """Monte Carlo mean and standard error of ``draw(m)`` (rows are samples)."""
    total = sq = None
    done = 0
    while done < n:
        m = min(chunk, n - done)
        a = np.asarray(draw(m), dtype=float).reshape(m, -1)
        s, s2 = a.sum(axis=0), (a**2).sum(axis=0)
        total = s if total is None else total + s
        sq = s2 if sq is None else sq + s2
        done += m
    mean = total / n
    var = np.maximum(sq / n - mean**2, 0.0)
    return mean, np.sqrt(var / n)


def oracle_checks(problem, x, rng, n):
    """Yield ``(name, empirical mean, standard error, exact)`` for every stochastic oracle at ``x``.

    Agents are drawn uniformly, so the target is the agent-averaged exact oracle.
    """
    from dsmo.problems.base import best_responses

    ys = best_responses(problem, x)
    prevs = [x] + ys[:-1]
    K = problem.K

    def agents(m):
        return rng.integers(0, K, m)

    def tile(v, m):
        return np.tile(v, (m, 1))

    yield ("grad1_f", *mc_mean(lambda m: problem.sample_f(agents(m), tile(x, m), tile(ys[-1], m), rng)[0], n),
           problem.grad1_f(x, ys[-1]))
    yield ("grad2_f", *mc_mean(lambda m: problem.sample_f(agents(m), tile(x, m), tile(ys[-1], m), rng)[1], n),
           problem.grad2_f(x, ys[-1]))
    for lvl in range(1, problem.M + 1):
        yp, y = prevs[lvl - 1], ys[lvl - 1]

        def g(m, j, b=0):
            out = problem.sample_g(lvl, agents(m), tile(yp, m), tile(y, m), rng, b=b, cross=j == 1)
            return out[j] if j < 2 else out[2][:, 0]

        yield (f"grad2_g[{lvl}]", *mc_mean(lambda m: g(m, 0), n), problem.grad2_g(lvl, yp, y))
        yield (f"grad12_g[{lvl}]", *mc_mean(lambda m: g(m, 1), n), problem.grad12_g(lvl, yp, y))
        yield (f"grad22_g[{lvl}]", *mc_mean(lambda m: g(m, 2, b=1), n, chunk=2000), problem.grad22_g(lvl, yp, y))
