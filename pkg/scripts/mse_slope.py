"""Mean-square error of sampled tabular CvxQ against Q* as N grows.

Writes ``mse_slope.csv`` (mdp, N, mse, sup_rms) and prints the fitted
log-log slope per MDP, which should be close to -1.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from convexq.cvxq import ConstraintSystem, solve_cvxq
from convexq.features import tabular_basis
from convexq.mdp_core import BUNDLED_MDPS, RandomizedPolicy, bundled_mdp, value_iteration
from convexq.simulate import rollout_counts


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--mdps", nargs="+", default=list(BUNDLED_MDPS))
    p.add_argument("--N", nargs="+", type=int, default=[10**3, 10**4, 10**5])
    p.add_argument("--M", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="results/mse_slope")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.mdps:
        mdp = bundled_mdp(name)
        feats = tabular_basis(mdp)
        mu = np.full(feats.d, 1.0 / feats.d)
        q = value_iteration(mdp, tol=1e-12).ravel()
        policy = RandomizedPolicy.uniform(mdp.n_states, mdp.n_actions)
        mse = []
        for N in args.N:
            counts = rollout_counts(mdp, policy, N, args.M, seed=[args.seed, N])
            err = np.array([solve_cvxq(ConstraintSystem.from_counts(mdp, feats, c, mu)).theta - q for c in counts])
            mse.append(float(np.mean(np.sum(err**2, axis=1))))
            rows.append([name, N, repr(mse[-1]), repr(float(np.sqrt(np.mean(np.abs(err).max(axis=1) ** 2))))])
        slope = np.polyfit(np.log(args.N), np.log(mse), 1)[0]
        print(f"{name}: slope {slope:.3f}  mse {['%.3g' % m for m in mse]}")
    with (out / "mse_slope.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mdp", "N", "mse", "sup_rms"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
