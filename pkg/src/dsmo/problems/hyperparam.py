"""Bilevel regularization tuning for a sigmoid-loss linear classifier.

Inner level (training):  ``g^k(x, y) = mean_{j in train_k} l_j(y) + sum_i (base + x_i)/2 y_i^2``
Outer level (validation): ``f^k(x, y) = mean_{i in val_k} l_i(y)``

with the sigmoid loss ``l_j(y) = 1/(1 + exp(s_j w_j'y))`` and signed label
``s_j = 2 z_j - 1``.  The loss is nonconvex with curvature at most
``|sigma''| ||w||^2 <= ||w||^2 / (6 sqrt 3)``; ``base`` defaults to one plus that
bound so the inner problem stays strongly convex for every ``x >= 0``.
Stochastic oracles draw one data point from the agent's shard per query.
"""

from __future__ import annotations

import numpy as np

from dsmo.errors import EmptyShard, InvalidParam
from dsmo.problems.base import MultiLevelProblem, ProblemDims, Shards, SmoothnessMeta

SIGMA2_MAX = 1.0 / (6.0 * np.sqrt(3.0))


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss_terms(W, s, y):
    """Loss, gradient coefficient and curvature coefficient per row.

    ``grad l_j = c1_j w_j`` and ``hess l_j = c2_j w_j w_j'``.
    """
    z = -s * (W @ y) if y.ndim == 1 else -s * np.einsum("nd,nd->n", W, y)
    p = _sig(z)
    d1 = p * (1 - p)
    return p, -s * d1, d1 * (1 - 2 * p)


class HyperparamTuning(MultiLevelProblem):
    tag = "hyperparam"

    def __init__(self, train, val, K, seed=0, base_reg=None, x_bound=10.0):
        if train.n_features != val.n_features:
            raise InvalidParam("training and validation feature dimensions differ")
        for name, ds in (("training", train), ("validation", val)):
            if len(ds) < K:
                raise EmptyShard(f"{name} set has {len(ds)} points but K={K}")
            if not np.all(np.isin(ds.labels, (0, 1))):
                raise InvalidParam(f"{name} labels must be 0/1")
        self.Wt, self.st = train.features, 2.0 * train.labels - 1.0
        self.Wv, self.sv = val.features, 2.0 * val.labels - 1.0
        self.train_shards = Shards(len(train), K, seed)
        self.val_shards = Shards(len(val), K, seed + 1)
        self.wt = self.train_shards.weights()
        self.wv = self.val_shards.weights()
        d = train.n_features
        self.dims = ProblemDims(d_x=d, levels=(d,), K=K)

        curv = SIGMA2_MAX * float(np.max(np.sum(self.Wt**2, axis=1)))
        self.base_reg = 1.0 + curv if base_reg is None else float(base_reg)
        mu = self.base_reg - curv
        L = self.base_reg + x_bound + curv
        if mu <= 0:
            # nonconvex inner level at x = 0; keep a tiny positive floor so metadata stays valid
            mu = 1e-6
        self.meta = SmoothnessMeta(L_g=(L,), mu_g=(mu,))

    def _reg(self, x):
        return self.base_reg + np.asarray(x, dtype=float)

    # stochastic
    def sample_f(self, agents, x, y, rngs, independent=False):
        idx = self.val_shards.pick(agents, rngs)
        _, c1, _ = loss_terms(self.Wv[idx], self.sv[idx], y)
        return np.zeros_like(x), c1[:, None] * self.Wv[idx]

    def sample_g(self, m, agents, y_prev, y, rngs, b=0, cross=True):
        n = len(agents)
        idx = self.train_shards.pick(agents, rngs)
        _, c1, _ = loss_terms(self.Wt[idx], self.st[idx], y)
        reg = self._reg(y_prev)
        g2 = c1[:, None] * self.Wt[idx] + reg * y
        g12 = np.einsum("ni,ij->nij", y, np.eye(self.dims.d_x)) if cross else None
        d = self.dims.d_x
        H = np.empty((n, b, d, d))
        for i in range(b):
            j = self.train_shards.pick(agents, rngs)
            Wj = self.Wt[j]
            _, _, c2 = loss_terms(Wj, self.st[j], y)
            H[:, i] = c2[:, None, None] * np.einsum("ni,nj->nij", Wj, Wj)
            H[:, i] += np.einsum("ni,ij->nij", reg, np.eye(d))
        return g2, g12, H

    # exact
    def f_value(self, x, y):
        p, _, _ = loss_terms(self.Wv, self.sv, y)
        return float(self.wv @ p)

    def grad1_f(self, x, y):
        return np.zeros(self.dims.d_x)

    def grad2_f(self, x, y):
        _, c1, _ = loss_terms(self.Wv, self.sv, y)
        return self.Wv.T @ (self.wv * c1)

    def inner_value(self, x, y):
        p, _, _ = loss_terms(self.Wt, self.st, y)
        return float(self.wt @ p + 0.5 * np.sum(self._reg(x) * y**2))

    def grad2_g(self, m, y_prev, y):
        _, c1, _ = loss_terms(self.Wt, self.st, y)
        return self.Wt.T @ (self.wt * c1) + self._reg(y_prev) * y

    def grad12_g(self, m, y_prev, y):
        return np.diag(y)

    def grad22_g(self, m, y_prev, y):
        _, _, c2 = loss_terms(self.Wt, self.st, y)
        return (self.Wt.T * (self.wt * c2)) @ self.Wt + np.diag(self._reg(y_prev))

    def best_response(self, m, y_prev, tol=1e-13, max_iter=100):
        """Damped Newton on the agent-averaged training objective."""
        x = np.asarray(y_prev, dtype=float)
        y = np.zeros(self.dims.d_x)
        for _ in range(max_iter):
            g = self.grad2_g(1, x, y)
            if np.linalg.norm(g) <= tol:
                break
            step = np.linalg.solve(self.grad22_g(1, x, y), g)
            t, f0 = 1.0, self.inner_value(x, y)
            while self.inner_value(x, y - t * step) > f0 - 1e-4 * t * (g @ step) and t > 1e-10:
                t *= 0.5
            y = y - t * step
        return y


def hyperparam_problem(dataset_train, dataset_val, K, seed=0, base_reg=None):
    return HyperparamTuning(dataset_train, dataset_val, K, seed=seed, base_reg=base_reg)
