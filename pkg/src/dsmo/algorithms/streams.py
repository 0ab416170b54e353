"""Counter-based random streams, one per (agent, purpose).

Purpose 0 feeds the outer-level oracle; purpose ``m`` feeds level ``m``.
Each stream is a Philox generator keyed by ``SeedSequence(seed, spawn_key=(agent, purpose))``,
so adding agents or levels never perturbs the streams of existing ones and the
draws of an agent do not depend on how agents are split across threads.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, agent: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(agent), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def agent_streams(seed: int, K: int, n_purposes: int) -> list[list[np.random.Generator]]:
    """``streams[p][k]`` is the generator for purpose ``p`` of agent ``k``."""
    return [[stream(seed, k, p) for k in range(K)] for p in range(n_purposes)]
