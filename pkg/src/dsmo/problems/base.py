"""Multi-level problem interface, exact hypergradient and finite-difference helpers.

A problem is a nested program with levels ``m = 1..M``.  Level ``m`` decides
``y_m`` given ``y_{m-1}`` (``y_0`` is the outer variable ``x``); the outer
objective ``f`` is evaluated at ``(x, y_M)``.  Every quantity is an average
over ``K`` agents, each holding its own stochastic oracle.

Matrix conventions: the cross derivative ``grad12_g(m)`` has shape
``(d_{m-1}, d_m)`` (rows index ``y_{m-1}``), so the best-response Jacobian
recursion reads ``J_m = -J_{m-1} @ grad12 @ inv(grad22)``.

Stochastic oracles are batched over agents.  ``rngs`` is either a list of
generators (one per row of the batch, used by the algorithms so that every
agent owns its stream) or a single generator used for the whole batch (handy
for Monte Carlo checks).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from dsmo.errors import DimensionMismatch, InvalidParam, NoExactOracle

TAGS = ("grad1_f", "grad2_f", "grad2_g", "grad12_g", "grad22_g")


@dataclass(frozen=True)
class ProblemDims:
    d_x: int
    levels: tuple[int, ...]
    K: int

    def __post_init__(self):
        if self.d_x < 1 or self.K < 1 or not self.levels or min(self.levels) < 1:
            raise InvalidParam(f"invalid problem dimensions {self}")

    @property
    def M(self) -> int:
        return len(self.levels)

    def d(self, m: int) -> int:
        """Dimension of level ``m``; ``d(0)`` is the outer dimension."""
        return self.d_x if m == 0 else self.levels[m - 1]


@dataclass(frozen=True)
class SmoothnessMeta:
    """Per-level smoothness constants (tuples indexed by level - 1) and noise bounds.

    Unbounded quantities (e.g. gradient norms of a quadratic over the whole
    space) are reported as ``inf``.
    """

    L_g: tuple[float, ...]
    mu_g: tuple[float, ...]
    kappa_g: tuple[float, ...] = ()
    Lt_g: tuple[float, ...] = ()
    C_f: float = float("inf")
    sigma_f: float = 0.0
    C_g: tuple[float, ...] = ()
    sigma_g: tuple[float, ...] = ()

    def __post_init__(self):
        M = len(self.L_g)
        if len(self.mu_g) != M:
            raise InvalidParam("L_g and mu_g must have one entry per level")
        if not self.kappa_g:
            object.__setattr__(self, "kappa_g", tuple(mu / L for mu, L in zip(self.mu_g, self.L_g)))
        for name, default in (("Lt_g", 0.0), ("C_g", float("inf")), ("sigma_g", 0.0)):
            if not getattr(self, name):
                object.__setattr__(self, name, (default,) * M)
        for m, (kap, mu, L) in enumerate(zip(self.kappa_g, self.mu_g, self.L_g), start=1):
            if not (0.0 < kap <= mu / L * (1 + 1e-12) and mu / L <= 1.0 + 1e-12):
                raise InvalidParam(f"level {m}: need 0 < kappa <= mu/L <= 1, got kappa={kap}, mu={mu}, L={L}")


def per_agent(rngs, n, draw):
    """Stack ``draw(rng, lead)`` over a batch of ``n`` rows.

    With a single generator ``draw`` is called once with ``lead=(n,)``;
    otherwise once per row generator with ``lead=()``.
    """
    if isinstance(rngs, np.random.Generator):
        return draw(rngs, (n,))
    if len(rngs) != n:
        raise DimensionMismatch(f"need {n} generators, got {len(rngs)}")
    return np.stack([draw(r, ()) for r in rngs])


def normal(rngs, n, shape):
    shape = tuple(shape)
    return per_agent(rngs, n, lambda r, lead: r.standard_normal(lead + shape))


class MultiLevelProblem(ABC):
    """Interface shared by all problems; see the module docstring for conventions."""

    tag = "problem"
    compositional = False

    dims: ProblemDims
    meta: SmoothnessMeta
    x_star: np.ndarray | None = None
    F_star: float | None = None
    pl_mu: float | None = None

    @property
    def M(self) -> int:
        return self.dims.M

    @property
    def K(self) -> int:
        return self.dims.K

    # -- stochastic oracles -------------------------------------------------
    @abstractmethod
    def sample_f(self, agents, x, y, rngs, independent=False):
        """Return ``(grad1_f, grad2_f)`` samples, shapes ``(n, d_x)`` and ``(n, d_M)``.

        By default both partials come from one draw; ``independent=True``
        uses separate draws for the two.
        """

    @abstractmethod
    def sample_g(self, m, agents, y_prev, y, rngs, b=0, cross=True):
        """Return ``(grad2_g, grad12_g, grad22_g)`` samples for level ``m``.

        ``grad2_g`` and ``grad12_g`` share one draw; the ``b`` Hessian samples
        (shape ``(n, b, d_m, d_m)``) use independent draws.  ``grad12_g`` is
        ``None`` when ``cross`` is false.
        """

    # -- exact (agent-averaged, noise free) oracles -------------------------
    @abstractmethod
    def f_value(self, x, y) -> float: ...

    @abstractmethod
    def grad1_f(self, x, y) -> np.ndarray: ...

    @abstractmethod
    def grad2_f(self, x, y) -> np.ndarray: ...

    @abstractmethod
    def grad2_g(self, m, y_prev, y) -> np.ndarray: ...

    @abstractmethod
    def grad12_g(self, m, y_prev, y) -> np.ndarray: ...

    @abstractmethod
    def grad22_g(self, m, y_prev, y) -> np.ndarray: ...

    def best_response(self, m, y_prev) -> np.ndarray:
        raise NoExactOracle(f"{self.tag} has no exact best-response solver")

    @property
    def has_exact(self) -> bool:
        try:
            self.best_response(1, np.zeros(self.dims.d_x))
        except NoExactOracle:
            return False
        return True

    # -- compositional split (only for problems with compositional = True) --
    def sample_inner_value(self, agents, x, rngs):
        raise NotImplementedError

    def sample_inner_jacobian(self, agents, x, rngs):
        raise NotImplementedError

    # -- convenience --------------------------------------------------------
    def sample(self, k, tag, point, rng, level=1):
        """Single-agent, single-draw oracle query.

        ``point`` is ``(x, y_M)`` for the outer tags and ``(y_{m-1}, y_m)``
        for the level tags.
        """
        if tag not in TAGS:
            raise InvalidParam(f"unknown oracle tag {tag!r}")
        a, b_ = (np.atleast_2d(np.asarray(p, dtype=float)) for p in point)
        agents = np.array([k])
        if tag in ("grad1_f", "grad2_f"):
            g1, g2 = self.sample_f(agents, a, b_, [rng])
            return (g1 if tag == "grad1_f" else g2)[0]
        if tag == "grad22_g":
            return self.sample_g(level, agents, a, b_, [rng], b=1, cross=False)[2][0, 0]
        g2, g12, _ = self.sample_g(level, agents, a, b_, [rng], b=0, cross=tag == "grad12_g")
        return (g2 if tag == "grad2_g" else g12)[0]


def best_responses(problem: MultiLevelProblem, x) -> list[np.ndarray]:
    """Exact ``[y_1*(x), ..., y_M*(x)]`` solved level by level."""
    ys = []
    prev = np.asarray(x, dtype=float)
    for m in range(1, problem.M + 1):
        prev = problem.best_response(m, prev)
        ys.append(prev)
    return ys


def objective(problem: MultiLevelProblem, x) -> float:
    """``F(x) = f(x, y_M*(x))``."""
    return problem.f_value(x, best_responses(problem, x)[-1])


def exact_hypergradient(problem: MultiLevelProblem, x) -> np.ndarray:
    """Total gradient of ``F`` through all nested best responses.

    The product of ``grad12_g(m) @ inv(grad22_g(m))`` over levels is applied
    right to left to ``grad2_f`` as matrix-vector products and linear solves.
    """
    x = np.asarray(x, dtype=float)
    ys = best_responses(problem, x)
    prevs = [x] + ys[:-1]
    z = problem.grad2_f(x, ys[-1])
    for m in range(problem.M, 0, -1):
        z = np.linalg.solve(problem.grad22_g(m, prevs[m - 1], ys[m - 1]), z)
        z = problem.grad12_g(m, prevs[m - 1], ys[m - 1]) @ z
    sign = -1.0 if problem.M % 2 else 1.0
    return problem.grad1_f(x, ys[-1]) + sign * z


def finite_difference_gradient(fn, x, h=1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def relative_error(a, b, floor=1e-12) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


@dataclass
class Shards:
    """Deterministic split of ``n`` items across ``K`` agents (shuffle, then round-robin)."""

    n: int
    K: int
    seed: int = 0
    index: list = field(init=False)

    def __post_init__(self):
        perm = np.random.default_rng(self.seed).permutation(self.n)
        self.index = [perm[k :: self.K] for k in range(self.K)]

    def sizes(self):
        return np.array([len(ix) for ix in self.index])

    def weights(self):
        """Per-item weight ``1/(K n_k)`` so that weighted sums are agent averages of shard means."""
        w = np.empty(self.n)
        for ix in self.index:
            w[ix] = 1.0 / (self.K * len(ix))
        return w

    def pick(self, agents, rngs):
        """One uniformly drawn item index from each listed agent's shard."""
        agents = np.asarray(agents)
        sizes = self.sizes()[agents]
        if isinstance(rngs, np.random.Generator):
            u = rngs.integers(0, sizes)
        else:
            u = np.array([r.integers(0, s) for r, s in zip(rngs, sizes)])
        return np.array([self.index[a][j] for a, j in zip(agents, u)], dtype=int)
