"""Regularized Bellman-residual policy evaluation with linear value features.

Environment: features ``phi_s ~ U[0,1]^m``, a shared transition matrix with
uniform rows normalized to sum to one, and per-agent mean rewards
``rbar^k[s, s'] ~ U[0,1]``.  A query draws, for every state, one transition
``s -> s'`` and a reward ``N(rbar^k[s, s'], reward_noise^2)``.

As a bilevel problem (``y`` has one entry per state)::

    g^k(x, y) = 1/2 sum_s (target^k_s(x) - y_s)^2,
    target^k_s(x) = phi_s'x - E[r^k(s, s') + gamma phi_{s'}'x | s]
    f(x, y)   = 1/(2|S|) ||y||^2 + lam/2 ||x||^2

With ``Psi = Phi - gamma P Phi`` and mean expected reward ``rbar``,
``y*(x) = Psi x - rbar`` and ``x* = (Psi'Psi/|S| + lam I)^{-1} Psi' rbar / |S|``.
"""

from __future__ import annotations

import numpy as np

from dsmo.errors import InvalidParam
from dsmo.problems.base import MultiLevelProblem, ProblemDims, SmoothnessMeta, per_agent


class PolicyEvaluation(MultiLevelProblem):
    tag = "policy_eval"
    compositional = True

    def __init__(self, phi, P, rbar, gamma, lam, reward_noise=1.0):
        self.phi = np.asarray(phi, dtype=float)  # (S, m)
        self.P = np.asarray(P, dtype=float)  # (S, S)
        self.rbar = np.asarray(rbar, dtype=float)  # (K, S, S)
        if not (0.0 <= gamma < 1.0):
            raise InvalidParam(f"gamma must lie in [0, 1), got {gamma}")
        if lam <= 0:
            raise InvalidParam(f"lambda must be positive, got {lam}")
        self.gamma = float(gamma)
        self.lam = float(lam)
        self.reward_noise = float(reward_noise)
        S, m = self.phi.shape
        K = self.rbar.shape[0]
        self.S = S
        self.dims = ProblemDims(d_x=m, levels=(S,), K=K)
        self._cum = np.cumsum(self.P, axis=1)
        self._cum[:, -1] = 1.0

        self.Psi = self.phi - self.gamma * self.P @ self.phi
        # expected one-step reward per agent and state, then the network mean
        self.r_agent = (self.P[None] * self.rbar).sum(axis=2)
        self.r_mean = self.r_agent.mean(axis=0)
        H = self.Psi.T @ self.Psi / S + self.lam * np.eye(m)
        self.hessian_F = H
        self.x_star = np.linalg.solve(H, self.Psi.T @ self.r_mean / S)
        self.F_star = self.f_value(self.x_star, self.best_response(1, self.x_star))
        self.pl_mu = float(np.linalg.eigvalsh(H).min())

        phi_sq = float(np.max(np.sum(self.phi**2, axis=1)))
        self.meta = SmoothnessMeta(
            L_g=(1.0,), mu_g=(1.0,),
            sigma_f=0.0,
            sigma_g=(float(np.sqrt(S) * (self.reward_noise + 1.0 + (1 + self.gamma) * np.sqrt(phi_sq))),),
        )

    def _transitions(self, rngs, n):
        u = per_agent(rngs, n, lambda r, lead: r.random(lead + (self.S,)))
        nxt = (self._cum[None] < u[..., None]).sum(axis=2)
        return np.minimum(nxt, self.S - 1)

    def _draw(self, agents, x, rngs, with_reward=True):
        """Per-state transitions and rewards; returns ``(psi_hat, r)``.

        ``psi_hat[n, s] = phi_s - gamma phi_{s'}`` for the sampled ``s'``.
        """
        n = len(agents)
        nxt = self._transitions(rngs, n)
        psi_hat = self.phi[None] - self.gamma * self.phi[nxt]
        if not with_reward:
            return psi_hat, None
        states = np.arange(self.S)
        means = self.rbar[np.asarray(agents)[:, None], states[None], nxt]
        r = means + self.reward_noise * per_agent(rngs, n, lambda g, lead: g.standard_normal(lead + (self.S,)))
        return psi_hat, r

    # stochastic
    def sample_f(self, agents, x, y, rngs, independent=False):
        return self.lam * x, y / self.S

    def sample_g(self, m, agents, y_prev, y, rngs, b=0, cross=True):
        n = len(agents)
        psi_hat, r = self._draw(agents, y_prev, rngs)
        target = np.einsum("nsd,nd->ns", psi_hat, y_prev) - r
        g2 = y - target
        g12 = -np.swapaxes(psi_hat, 1, 2) if cross else None
        H = np.broadcast_to(np.eye(self.S), (n, b, self.S, self.S)).copy()
        return g2, g12, H

    def sample_inner_value(self, agents, x, rngs):
        psi_hat, r = self._draw(agents, x, rngs)
        return np.einsum("nsd,nd->ns", psi_hat, x) - r

    def sample_inner_jacobian(self, agents, x, rngs):
        psi_hat, _ = self._draw(agents, x, rngs, with_reward=False)
        return np.swapaxes(psi_hat, 1, 2)

    # exact
    def f_value(self, x, y):
        return float(0.5 * y @ y / self.S + 0.5 * self.lam * x @ x)

    def grad1_f(self, x, y):
        return self.lam * np.asarray(x, dtype=float)

    def grad2_f(self, x, y):
        return y / self.S

    def grad2_g(self, m, y_prev, y):
        return y - (self.Psi @ y_prev - self.r_mean)

    def grad12_g(self, m, y_prev, y):
        return -self.Psi.T

    def grad22_g(self, m, y_prev, y):
        return np.eye(self.S)

    def best_response(self, m, y_prev):
        return self.Psi @ y_prev - self.r_mean

    def gradient_F(self, x):
        return self.Psi.T @ (self.Psi @ x - self.r_mean) / self.S + self.lam * x


def policy_eval_problem(num_states, feat_dim, gamma, lam, K, seed=0, reward_noise=1.0, reward_scale=1.0):
    """Random environment generated as described in the module docstring.

    ``reward_scale`` multiplies the mean rewards (0 gives an all-zero reward
    model); ``reward_noise`` is the reward standard deviation.
    """
    if not (0.0 <= gamma < 1.0):
        raise InvalidParam(f"gamma must lie in [0, 1), got {gamma}")
    if lam <= 0:
        raise InvalidParam(f"lambda must be positive, got {lam}")
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, 1.0, (num_states, feat_dim))
    P = rng.uniform(0.0, 1.0, (num_states, num_states))
    P /= P.sum(axis=1, keepdims=True)
    rbar = reward_scale * rng.uniform(0.0, 1.0, (K, num_states, num_states))
    return PolicyEvaluation(phi, P, rbar, gamma, lam, reward_noise=reward_noise)
