"""Hyperparameter learning on a LIBSVM-style dataset: runs a config and summarizes the hypergradient norm and consensus."""

import argparse

import numpy as np

from dsmo.cli import execute
from dsmo.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/hyperparam_ring5.json")
    ap.add_argument("--out", default=None)
    ap.add_argument("--T", type=int, default=None, help="override the config horizon")
    ap.add_argument("--reps", type=int, default=None, help="override the config repetitions")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.T is not None:
        cfg.T = args.T
    if args.reps is not None:
        cfg.reps = args.reps
    runs = execute(cfg, args.out or cfg.output_path, threads=args.threads)
    for field in ("grad_norm_sq", "obj_gap", "consensus_x"):
        first = np.median([getattr(r[0], field) for r in runs])
        last = np.median([getattr(r[-1], field) for r in runs])
        print(f"{field}: median {first:.4g} at t=0 -> {last:.4g} at t={cfg.T}")


if __name__ == "__main__":
    main()
