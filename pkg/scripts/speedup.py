"""Linear-speedup experiment: total samples needed to reach a fixed accuracy for several network sizes.

Each network size gets the same total sample budget (T scales as 1/K).
"""

import argparse

import numpy as np

from dsmo.algorithms.dsmo import run_dsmo
from dsmo.algorithms.schedule import StepSchedule
from dsmo.metrics import speedup_table
from dsmo.network import build_topology, mixing_matrix
from dsmo.problems.synthetic import synthetic_quadratic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", default="64,16,8")
    ap.add_argument("--k-list", default="5,10,20")
    ap.add_argument("--T5", type=int, default=20_000, help="horizon for K=5; other K use T5*5/K")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--b", type=int, default=20)
    args = ap.parse_args()

    dims = [int(v) for v in args.dims.split(",")]
    ks = [int(v) for v in args.k_list.split(",")]
    runs = []
    for K in ks:
        problem = synthetic_quadratic(dims, K=K, seed=0)
        G = mixing_matrix(build_topology("ring", K), "uniform_ring")
        schedule = StepSchedule(regime="diminishing", C1=50.0, mu=problem.pl_mu, b=args.b)
        T = args.T5 * 5 // K
        for seed in range(args.reps):
            runs.append(list(run_dsmo(problem, G, schedule, T, seed=seed, eval_every=20, run_id=str(seed))))
            print(f"K={K} seed {seed}: final mse {runs[-1][-1].mse_to_opt:.3e}")
    eps = 4.0 * float(np.median([r[-1].mse_to_opt for r in runs if r[0].K == ks[0]]))
    print(f"epsilon {eps:.3e}")
    print("K,reps,reached,median_log10,q12.5,q87.5")
    for row in speedup_table(runs, eps):
        print(f"{row.K},{row.reps},{row.reached},{row.median_log10:.4f},{row.q125_log10:.4f},{row.q875_log10:.4f}")


if __name__ == "__main__":
    main()
