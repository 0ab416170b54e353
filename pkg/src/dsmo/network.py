"""Gossip topologies, doubly stochastic mixing matrices and neighbor averaging.

Agents are indexed ``0..K-1``.  A :class:`Topology` stores a boolean adjacency
matrix whose diagonal is always set (every agent averages with itself).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from dsmo.errors import ConnectivityFailure, DimensionMismatch, InvalidParam, SchemeMismatch

KINDS = ("ring", "complete", "star", "random")
SCHEMES = ("uniform_ring", "metropolis", "mean_matrix")
MAX_RANDOM_ATTEMPTS = 100


@dataclass(frozen=True, eq=False)
class Topology:
    kind: str
    K: int
    adjacency: np.ndarray
    edge_prob: float | None = None
    seed: int | None = None

    def neighbors(self, i: int) -> list[int]:
        """Neighbors of ``i`` including ``i`` itself."""
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def degree(self, i: int) -> int:
        """Number of neighbors of ``i`` excluding the self-loop."""
        return int(self.adjacency[i].sum()) - 1

    def is_connected(self) -> bool:
        n, _ = connected_components(self.adjacency.astype(np.int8), directed=False)
        return n == 1


@dataclass(frozen=True, eq=False)
class GossipMatrix:
    W: np.ndarray
    rho: float
    scheme: str = ""

    @property
    def K(self) -> int:
        return self.W.shape[0]


def _ring_adjacency(K):
    A = np.eye(K, dtype=bool)
    for i in range(K):
        A[i, (i - 1) % K] = A[i, (i + 1) % K] = True
    return A


def build_topology(kind: str, K: int, edge_prob: float | None = None, seed: int | None = None) -> Topology:
    """Build a connected undirected graph with self-loops.

    Random graphs are Erdos-Renyi draws; a disconnected draw is discarded and
    redrawn with seed ``seed + attempt`` until connected.
    """
    if kind not in KINDS:
        raise InvalidParam(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise InvalidParam(f"K must be a positive integer, got {K!r}")
    K = int(K)

    if kind == "ring":
        return Topology(kind, K, _ring_adjacency(K))
    if kind == "complete":
        return Topology(kind, K, np.ones((K, K), dtype=bool))
    if kind == "star":
        A = np.eye(K, dtype=bool)
        A[0, :] = A[:, 0] = True
        return Topology(kind, K, A)

    if edge_prob is None or not (0.0 < edge_prob <= 1.0):
        raise InvalidParam(f"edge_prob must lie in (0, 1], got {edge_prob!r}")
    seed = 0 if seed is None else int(seed)
    iu = np.triu_indices(K, k=1)
    for attempt in range(MAX_RANDOM_ATTEMPTS):
        rng = np.random.default_rng(seed + attempt)
        A = np.eye(K, dtype=bool)
        A[iu] = rng.random(iu[0].size) < edge_prob
        A = A | A.T
        topo = Topology(kind, K, A, edge_prob=edge_prob, seed=seed)
        if topo.is_connected():
            return topo
    raise ConnectivityFailure(
        f"no connected random graph in {MAX_RANDOM_ATTEMPTS} attempts (K={K}, edge_prob={edge_prob})"
    )


def consensus_rho(W: np.ndarray) -> float:
    """Squared spectral norm of ``W - J/K`` via a symmetric eigendecomposition."""
    K = W.shape[0]
    eig = np.linalg.eigvalsh(W - np.full((K, K), 1.0 / K))
    return float(np.max(np.abs(eig)) ** 2)


def mixing_matrix(topology: Topology, scheme: str = "metropolis") -> GossipMatrix:
    """Doubly stochastic weights supported on the topology's edges.

    ``uniform_ring`` puts 1/3 on self and both ring neighbors; for K=2 the two
    neighbor slots coincide so the off-diagonal weight is 2/3, and K=1 gives
    ``[[1]]``.  ``metropolis`` uses ``1/(1+max(deg_i, deg_j))`` off the diagonal
    and the residual on it.  ``mean_matrix`` is exact averaging and requires a
    complete graph.
    """
    K = topology.K
    A = topology.adjacency
    if scheme == "uniform_ring":
        if topology.kind != "ring":
            raise SchemeMismatch(f"uniform_ring requires a ring topology, got {topology.kind}")
        W = np.zeros((K, K))
        for i in range(K):
            for j in (i - 1, i, i + 1):
                W[i, j % K] += 1.0 / 3.0
    elif scheme == "metropolis":
        deg = A.sum(axis=1) - 1
        W = np.where(A, 1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
        np.fill_diagonal(W, 0.0)
        np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    elif scheme == "mean_matrix":
        if topology.kind != "complete":
            raise SchemeMismatch(f"mean_matrix requires a complete topology, got {topology.kind}")
        W = np.full((K, K), 1.0 / K)
    else:
        raise InvalidParam(f"unknown mixing scheme {scheme!r}; expected one of {SCHEMES}")
    return GossipMatrix(W=W, rho=consensus_rho(W), scheme=scheme)


def validate_gossip(G: GossipMatrix, topology: Topology | None = None, tol: float = 1e-12) -> dict:
    """Check the mixing-matrix invariants and return the measured deviations."""
    W = G.W
    report = {
        "K": G.K,
        "scheme": G.scheme,
        "rho": G.rho,
        "max_row_dev": float(np.max(np.abs(W.sum(axis=1) - 1.0))),
        "max_col_dev": float(np.max(np.abs(W.sum(axis=0) - 1.0))),
        "max_asym": float(np.max(np.abs(W - W.T))),
        "min_entry": float(W.min()),
        "connected": None if topology is None else topology.is_connected(),
        "support_ok": None,
    }
    if topology is not None:
        report["support_ok"] = bool(np.all((W > 0) <= topology.adjacency))
    report["ok"] = bool(
        report["max_row_dev"] <= tol
        and report["max_col_dev"] <= tol
        and report["max_asym"] <= tol
        and report["min_entry"] >= 0.0
        and report["rho"] < 1.0
        and report["connected"] is not False
        and report["support_ok"] is not False
    )
    return report


def gossip_mix(values, W) -> np.ndarray:
    """One gossip round: agent ``k`` receives ``sum_j W[k, j] * values[j]``.

    ``values`` is stacked along axis 0 (one slice per agent); trailing axes may
    have any shape, so vectors, matrices and stacks of matrices all mix the
    same way.
    """
    W = W.W if isinstance(W, GossipMatrix) else np.asarray(W)
    try:
        values = np.asarray(values, dtype=float)
    except ValueError as exc:
        raise DimensionMismatch(f"agent values have inconsistent shapes: {exc}") from None
    if values.ndim == 0 or values.shape[0] != W.shape[0]:
        raise DimensionMismatch(f"expected {W.shape[0]} agent values, got shape {values.shape}")
    flat = values.reshape(values.shape[0], -1)
    return (W @ flat).reshape(values.shape)
