"""Nested quadratic problem with closed-form best responses.

Agent ``k`` at level ``m`` holds

    g_m^k(y_{m-1}, y_m) = 1/2 y_m' A_m^k y_m - y_m' B_m^k y_{m-1} + noise' y_m

and the outer objective ``f^k(x, y_M) = 1/2 ||y_M - c^k||^2 + lam/2 ||x||^2``.
Averaging over agents gives ``y_m*(x) = P_m x`` with
``P_m = inv(mean A_m) (mean B_m) P_{m-1}``, so ``x*``, ``F*`` and the gradient
of ``F`` are all explicit.

Noise: gradients and cross derivatives get additive Gaussian noise of scale
``noise``; Hessian samples get a symmetric perturbation with entries
``U[-1, 1] * hess_noise / d`` whose spectral norm never exceeds
``hess_noise``.  Per-agent spectra are checked to leave that much room inside
``[mu_g, L_g]``, so every Hessian sample is ``mu_g``-strongly convex and
``L_g``-smooth without any clipping (which would bias the samples).
"""

from __future__ import annotations

import numpy as np

from dsmo.errors import InvalidParam, SpectrumViolation
from dsmo.problems.base import MultiLevelProblem, ProblemDims, SmoothnessMeta, normal, per_agent


def _per_level(arr, K, shape):
    arr = np.asarray(arr, dtype=float)
    if arr.shape == shape:
        return np.broadcast_to(arr, (K,) + shape).copy()
    if arr.shape != (K,) + shape:
        raise InvalidParam(f"expected shape {shape} or {(K,) + shape}, got {arr.shape}")
    return arr


class SyntheticQuadratic(MultiLevelProblem):
    tag = "synthetic_quadratic"

    def __init__(self, A, B, c, lam=1.0, noise=0.0, hess_noise=0.0, K=None, mu_g=None, L_g=None):
        """Build from explicit matrices.

        ``A[m]`` is ``(d_m, d_m)`` or per agent ``(K, d_m, d_m)``; ``B[m]`` is
        ``(d_m, d_{m-1})`` or per agent; ``c`` is ``(d_M,)`` or ``(K, d_M)``.
        ``mu_g``/``L_g`` default to the tightest per-level bounds implied by the
        matrices and the Hessian noise amplitude.
        """
        if len(A) != len(B) or not A:
            raise InvalidParam("A and B need one entry per level")
        c = np.asarray(c, dtype=float)
        if K is None:
            K = c.shape[0] if c.ndim == 2 else next((a.shape[0] for a in map(np.asarray, A) if a.ndim == 3), 1)
        d_x = np.asarray(B[0]).shape[-1]
        levels = tuple(np.asarray(a).shape[-1] for a in A)
        self.dims = ProblemDims(d_x=d_x, levels=levels, K=K)
        self.A = [_per_level(a, K, (d, d)) for a, d in zip(A, levels)]
        self.B = [_per_level(b, K, (levels[m], self.dims.d(m))) for m, b in enumerate(B)]
        self.c = _per_level(c, K, (levels[-1],))
        self.lam = float(lam)
        self.noise = float(noise)
        self.hess_noise = float(hess_noise)

        self.A_bar = [a.mean(axis=0) for a in self.A]
        self.B_bar = [b.mean(axis=0) for b in self.B]
        self.c_bar = self.c.mean(axis=0)

        lo = [np.linalg.eigvalsh(a).min() - self.hess_noise for a in self.A]
        hi = [
            max(np.linalg.eigvalsh(a).max() + self.hess_noise, max(np.linalg.norm(bk, 2) for bk in b))
            for a, b in zip(self.A, self.B)
        ]
        mu_g = tuple(lo) if mu_g is None else tuple(np.broadcast_to(mu_g, (self.M,)).tolist())
        L_g = tuple(hi) if L_g is None else tuple(np.broadcast_to(L_g, (self.M,)).tolist())
        for m in range(self.M):
            if lo[m] < mu_g[m] - 1e-12 or hi[m] > L_g[m] + 1e-12 or mu_g[m] <= 0:
                raise SpectrumViolation(
                    f"level {m + 1}: sample spectra within [{lo[m]:.4g}, {hi[m]:.4g}] "
                    f"exceed declared [{mu_g[m]:.4g}, {L_g[m]:.4g}]"
                )
        sig = self.noise
        self.meta = SmoothnessMeta(
            L_g=L_g,
            mu_g=mu_g,
            sigma_f=sig * np.sqrt(max(d_x, levels[-1])),
            sigma_g=tuple(sig * np.sqrt(max(d * self.dims.d(m), d)) + self.hess_noise * d
                          for m, d in enumerate(levels)),
        )

        self.P = []
        P = np.eye(d_x)
        for a, b in zip(self.A_bar, self.B_bar):
            P = np.linalg.solve(a, b @ P)
            self.P.append(P)
        H = self.P[-1].T @ self.P[-1] + self.lam * np.eye(d_x)
        self.x_star = np.linalg.solve(H, self.P[-1].T @ self.c_bar)
        self.F_star = self.f_value(self.x_star, self.P[-1] @ self.x_star)
        self.pl_mu = float(np.linalg.eigvalsh(H).min())
        self.hessian_F = H

    # stochastic
    def sample_f(self, agents, x, y, rngs, independent=False):
        n = len(agents)
        g1 = self.lam * x + self.noise * normal(rngs, n, (self.dims.d_x,))
        g2 = y - self.c[agents] + self.noise * normal(rngs, n, (self.dims.levels[-1],))
        return g1, g2

    def sample_g(self, m, agents, y_prev, y, rngs, b=0, cross=True):
        n = len(agents)
        A, B = self.A[m - 1][agents], self.B[m - 1][agents]
        d, dp = self.dims.d(m), self.dims.d(m - 1)
        g2 = (A @ y[..., None])[..., 0] - (B @ y_prev[..., None])[..., 0] + self.noise * normal(rngs, n, (d,))
        g12 = None
        if cross:
            g12 = -np.swapaxes(B, -1, -2) + self.noise * normal(rngs, n, (dp, d))
        H = np.broadcast_to(A[:, None], (n, b, d, d))
        if b and self.hess_noise:
            U = per_agent(rngs, n, lambda r, lead: r.uniform(-1.0, 1.0, lead + (b, d, d)))
            H = H + (self.hess_noise / d) * 0.5 * (U + np.swapaxes(U, -1, -2))
        return g2, g12, np.array(H)

    # exact
    def f_value(self, x, y):
        return float(0.5 * np.mean(np.sum((y - self.c) ** 2, axis=1)) + 0.5 * self.lam * x @ x)

    def grad1_f(self, x, y):
        return self.lam * np.asarray(x, dtype=float)

    def grad2_f(self, x, y):
        return y - self.c_bar

    def grad2_g(self, m, y_prev, y):
        return self.A_bar[m - 1] @ y - self.B_bar[m - 1] @ y_prev

    def grad12_g(self, m, y_prev, y):
        return -self.B_bar[m - 1].T

    def grad22_g(self, m, y_prev, y):
        return self.A_bar[m - 1]

    def best_response(self, m, y_prev):
        return np.linalg.solve(self.A_bar[m - 1], self.B_bar[m - 1] @ y_prev)

    def gradient_F(self, x):
        """Closed-form gradient ``P'(P x - c) + lam x``."""
        P = self.P[-1]
        return P.T @ (P @ x - self.c_bar) + self.lam * x


def _centered(rng, K, shape, amplitude, norm):
    """K perturbations that sum to zero with ``norm(D_k) <= amplitude``."""
    D = rng.standard_normal((K,) + shape)
    D -= D.mean(axis=0)
    biggest = max(norm(d) for d in D) if K > 1 else 0.0
    return D * (amplitude / biggest) if biggest > 0 else np.zeros_like(D)


def synthetic_quadratic(dims, K, heterogeneity=0.5, noise=0.1, seed=0, mu_g=0.5, L_g=1.0, lam=1.0,
                        b_scale=0.5, max_attempts=10) -> SyntheticQuadratic:
    """Random instance with ``dims = (d_x, d_1, ..., d_M)``.

    Mean Hessians have eigenvalues in ``[mu_g + delta, L_g - delta]`` with
    ``delta = (L_g - mu_g)/4``; agent deviations take at most
    ``heterogeneity * delta/2`` and Hessian noise at most ``min(noise, 1) * delta/2``
    of that slack.  Mean couplings ``B_m`` have spectral norm ``b_scale * L_g``.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise InvalidParam("dims must list d_x followed by at least one level dimension")
    if not (0.0 <= heterogeneity <= 1.0):
        raise InvalidParam(f"heterogeneity must lie in [0, 1], got {heterogeneity}")
    if not (0.0 < mu_g < L_g):
        raise InvalidParam(f"need 0 < mu_g < L_g, got {mu_g}, {L_g}")
    delta = (L_g - mu_g) / 4.0
    hess_noise = min(noise, 1.0) * delta / 2.0
    spectral = lambda a: np.linalg.norm(a, 2)  # noqa: E731
    for attempt in range(max_attempts):
        # the mean problem has its own stream, so x*, F* do not depend on K
        rng = np.random.default_rng([seed, attempt, 0])
        dev = np.random.default_rng([seed, attempt, 1])
        A, B = [], []
        for m in range(1, len(dims)):
            d, dp = dims[m], dims[m - 1]
            Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            eig = rng.uniform(mu_g + delta, L_g - delta, d)
            A_bar = (Q * eig) @ Q.T
            D = _centered(dev, K, (d, d), heterogeneity * delta / 2.0, spectral)
            A.append(A_bar + 0.5 * (D + np.swapaxes(D, -1, -2)))
            B_bar = rng.standard_normal((d, dp))
            B_bar *= b_scale * L_g / spectral(B_bar)
            B.append(B_bar + _centered(dev, K, (d, dp), heterogeneity * b_scale * L_g / 2.0, spectral))
        c_bar = rng.standard_normal(dims[-1])
        c = c_bar + heterogeneity * dev.standard_normal((K, dims[-1]))
        c -= c.mean(axis=0) - c_bar
        try:
            return SyntheticQuadratic(A, B, c, lam=lam, noise=noise, hess_noise=hess_noise, K=K,
                                      mu_g=mu_g, L_g=L_g)
        except SpectrumViolation:
            continue
    raise SpectrumViolation(f"could not generate a valid instance in {max_attempts} attempts")
