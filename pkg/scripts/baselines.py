"""DSMO against the double-loop DBSA and DSGD baselines on policy evaluation, at matched sample budgets."""

import argparse

from dsmo.algorithms.baselines import dbsa_eta, run_dbsa, run_dsgd
from dsmo.algorithms.dsmo import run_dsmo
from dsmo.algorithms.schedule import StepSchedule
from dsmo.metrics import samples_to_epsilon
from dsmo.network import build_topology, mixing_matrix
from dsmo.problems.policy_eval import policy_eval_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--states", type=int, default=20)
    ap.add_argument("--K", type=int, default=5)
    ap.add_argument("--T-base", type=int, default=300)
    ap.add_argument("--T-dsmo", type=int, default=11_400)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    problem = policy_eval_problem(args.states, 5, 0.9, 1.0, K=args.K, seed=0)
    G = mixing_matrix(build_topology("ring", args.K), "uniform_ring")
    schedule = StepSchedule(regime="diminishing", C1=50.0, mu=problem.pl_mu, b_rule="theory", T=args.T_dsmo)
    print("seed,baseline,baseline_mse,baseline_samples,dsmo_samples_to_same_mse")
    for seed in range(args.seeds):
        ours = list(run_dsmo(problem, G, schedule, args.T_dsmo, seed=seed, eval_every=20))
        for name, runner, extra in (("dbsa", run_dbsa, {"eta": dbsa_eta(problem)}), ("dsgd", run_dsgd, {})):
            base = list(runner(problem, G, schedule, args.T_base, seed=seed, eval_every=5, **extra))
            hit = samples_to_epsilon(ours, base[-1].mse_to_opt)
            print(f"{seed},{name},{base[-1].mse_to_opt:.3e},{base[-1].samples_total},{hit}")


if __name__ == "__main__":
    main()
