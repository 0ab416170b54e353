"""Regularized mean-deviation risk-averse least squares as a strictly nested program.

With utilities ``U_i(x) = -(z_i - w_i'x)^2`` the (minimized) objective is

    Phi(x) = -U(x) + kappa * (E[(U(x) - U_i(x))_+^p])^(1/p) + lam/2 ||x||^2

where expectations weight each data point by ``1/(K n_k)`` (agent average of
shard means).  Each level only sees its predecessor's decision, so the pieces
of ``x`` needed downstream are carried forward through unit quadratic terms:

* level 1, ``y1 = (a, c1)``:  ``1/2 (a - U_i(x))^2 + 1/2 ||c1 - x||^2``
* level 2, ``y2 = (dev, a2, c2)``:
  ``1/2 (dev - (a - U_i(c1))_+^p)^2 + 1/2 (a2 - a)^2 + 1/2 ||c2 - c1||^2``
* outer: ``f(x, y2) = -a2 + kappa * phi(dev) + lam/2 ||x||^2``

Best responses give ``a = U(x)``, ``c1 = c2 = x`` and ``dev`` equal to the
deviation moment, so ``f(x, y2*(x)) = Phi(x)``.  ``phi(dev) = max(dev, floor)^(1/p)``
keeps the root finite while estimators are still near zero.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from dsmo.errors import InvalidParam
from dsmo.problems.base import MultiLevelProblem, ProblemDims, Shards, SmoothnessMeta


class RiskAverse(MultiLevelProblem):
    tag = "risk_averse"

    def __init__(self, W, z, K, kappa=0.5, lam=1.0, p=2, seed=0, dev_floor=1e-3):
        if not (0.0 <= kappa <= 1.0):
            raise InvalidParam(f"kappa must lie in [0, 1], got {kappa}")
        if lam <= 0:
            raise InvalidParam(f"lambda must be positive, got {lam}")
        if p < 2 or p % 2:
            raise InvalidParam(f"p must be an even integer >= 2, got {p}")
        self.W = np.asarray(W, dtype=float)
        self.z = np.asarray(z, dtype=float)
        n, d = self.W.shape
        self.kappa, self.lam, self.p = float(kappa), float(lam), int(p)
        self.dev_floor = float(dev_floor)
        self.shards = Shards(n, K, seed)
        self.omega = self.shards.weights()
        self.dims = ProblemDims(d_x=d, levels=(1 + d, 2 + d), K=K)
        self.meta = SmoothnessMeta(L_g=(1.0, 1.0), mu_g=(1.0, 1.0))
        self.pl_mu = self.lam
        self.x_star = self.solve_direct()
        self.F_star = self.batch_objective(self.x_star)

    # data-level helpers; x may be (d,) or (n, d) matched row-wise with idx
    def _utility(self, x, idx=None):
        W = self.W if idx is None else self.W[idx]
        z = self.z if idx is None else self.z[idx]
        r = z - (W @ x if x.ndim == 1 else np.einsum("nd,nd->n", W, x))
        return -(r**2), 2.0 * r[:, None] * W

    def _phi(self, dev):
        return max(dev, self.dev_floor) ** (1.0 / self.p)

    def _dphi(self, dev):
        return dev ** (1.0 / self.p - 1.0) / self.p if dev > self.dev_floor else 0.0

    # direct solve of the batch objective
    def batch_objective(self, x, with_grad=False):
        x = np.asarray(x, dtype=float)
        U, dU = self._utility(x)
        Ubar = self.omega @ U
        dUbar = self.omega @ dU
        gap = np.maximum(Ubar - U, 0.0)
        dev = self.omega @ gap**self.p
        val = -Ubar + self.kappa * self._phi(dev) + 0.5 * self.lam * x @ x
        if not with_grad:
            return float(val)
        ddev = (self.omega * self.p * gap ** (self.p - 1)) @ (dUbar[None] - dU)
        grad = -dUbar + self.kappa * self._dphi(dev) * ddev + self.lam * x
        return float(val), grad

    def solve_direct(self):
        x0 = np.linalg.lstsq(self.W, self.z, rcond=None)[0]
        res = minimize(self.batch_objective, x0, jac=True, method="BFGS",
                       args=(True,), options={"gtol": 1e-11, "maxiter": 10000})
        return res.x

    # stochastic
    def sample_f(self, agents, x, y, rngs, independent=False):
        n = len(agents)
        g2 = np.zeros((n, 2 + self.dims.d_x))
        g2[:, 0] = self.kappa * np.array([self._dphi(v) for v in y[:, 0]])
        g2[:, 1] = -1.0
        return self.lam * x, g2

    def sample_g(self, m, agents, y_prev, y, rngs, b=0, cross=True):
        n = len(agents)
        idx = self.shards.pick(agents, rngs)
        g2, g12 = self._level_terms(m, y_prev, y, idx, cross)
        D = self.dims.d(m)
        return g2, g12, np.broadcast_to(np.eye(D), (n, b, D, D)).copy()

    def _level_terms(self, m, y_prev, y, idx, cross):
        """Per-sample (rows of ``idx``) gradient and cross derivative of level ``m``."""
        d = self.dims.d_x
        n = len(idx)
        if m == 1:
            x = y_prev
            U, dU = self._utility(x, idx)
            g2 = np.concatenate([(y[:, 0] - U)[:, None], y[:, 1:] - x], axis=1)
            if not cross:
                return g2, None
            g12 = np.zeros((n, d, 1 + d))
            g12[:, :, 0] = -dU
            g12[:, :, 1:] = -np.eye(d)
            return g2, g12
        a, c1 = y_prev[:, 0], y_prev[:, 1:]
        U, dU = self._utility(c1, idx)
        gap = np.maximum(a - U, 0.0)
        g2 = np.concatenate(
            [(y[:, 0] - gap**self.p)[:, None], (y[:, 1] - a)[:, None], y[:, 2:] - c1], axis=1
        )
        if not cross:
            return g2, None
        e = self.p * gap ** (self.p - 1)
        g12 = np.zeros((n, 1 + d, 2 + d))
        g12[:, 0, 0] = -e
        g12[:, 0, 1] = -1.0
        g12[:, 1:, 0] = e[:, None] * dU
        g12[:, 1:, 2:] = -np.eye(d)
        return g2, g12

    def _exact(self, m, y_prev, y):
        n = len(self.z)
        idx = np.arange(n)
        g2, g12 = self._level_terms(m, np.tile(y_prev, (n, 1)), np.tile(y, (n, 1)), idx, True)
        return self.omega @ g2, np.tensordot(self.omega, g12, axes=1)

    # exact
    def f_value(self, x, y):
        return float(-y[1] + self.kappa * self._phi(y[0]) + 0.5 * self.lam * x @ x)

    def grad1_f(self, x, y):
        return self.lam * np.asarray(x, dtype=float)

    def grad2_f(self, x, y):
        g = np.zeros(2 + self.dims.d_x)
        g[0] = self.kappa * self._dphi(y[0])
        g[1] = -1.0
        return g

    def grad2_g(self, m, y_prev, y):
        return self._exact(m, y_prev, y)[0]

    def grad12_g(self, m, y_prev, y):
        return self._exact(m, y_prev, y)[1]

    def grad22_g(self, m, y_prev, y):
        return np.eye(self.dims.d(m))

    def best_response(self, m, y_prev):
        y_prev = np.asarray(y_prev, dtype=float)
        if m == 1:
            U, _ = self._utility(y_prev)
            return np.concatenate([[self.omega @ U], y_prev])
        a, c1 = y_prev[0], y_prev[1:]
        U, _ = self._utility(c1)
        dev = self.omega @ np.maximum(a - U, 0.0) ** self.p
        return np.concatenate([[dev, a], c1])


def risk_averse_problem(feat_dim, K, kappa=0.5, lam=1.0, p=2, n_data=10_000, seed=0, noise_var=0.2):
    """Linear-model data ``z_i = w_i'x_true + eps_i``, ``x_true ~ U[0,1]^d``, ``eps ~ N(0, noise_var)``.

    Features are standard normal scaled by ``1/sqrt(d)``.
    """
    if n_data < K:
        raise InvalidParam(f"n_data={n_data} is smaller than K={K}")
    rng = np.random.default_rng(seed)
    x_true = rng.uniform(0.0, 1.0, feat_dim)
    W = rng.standard_normal((n_data, feat_dim)) / np.sqrt(feat_dim)
    z = W @ x_true + np.sqrt(noise_var) * rng.standard_normal(n_data)
    prob = RiskAverse(W, z, K, kappa=kappa, lam=lam, p=p, seed=seed)
    prob.x_true = x_true
    return prob
