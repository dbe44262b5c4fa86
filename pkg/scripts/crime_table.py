"""Exact inclusion probabilities and MJMCMC RMSE x 100 on the crime data.

    python3 scripts/crime_table.py --data crime.csv --runs 20 --iterations 10000
"""

import argparse
import time
from pathlib import Path

import numpy as np

from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.harness import CRIME_RESPONSE, load_csv, rmse, write_rows
from tallbms.mjmcmc import run_chain
from tallbms.posterior import enumerate_all, mc_estimates, rm_estimates
from tallbms.space import ModelPrior


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, required=True)
    ap.add_argument("--g", type=float, default=47.0)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/crime_table.csv"))
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)

    data = load_csv(args.data, CRIME_RESPONSE, "gaussian")
    ev = Evaluator(data, EvidenceSpec("gprior", args.g))
    t0 = time.time()
    exact = enumerate_all(ev)
    print(f"enumeration {time.time() - t0:.1f}s")
    rm, mc, mass, unique = [], [], [], []
    seeds = np.random.SeedSequence(args.seed).spawn(args.runs)
    for r, seq in enumerate(seeds):
        res = run_chain(ev, ModelPrior(), iterations=args.iterations, rng_seed=np.random.default_rng(seq))
        rm.append(rm_estimates(res.store).inclusion_probs)
        mc.append(mc_estimates(res.trace, data.p).inclusion_probs)
        mass.append(sum(exact.model_probs[m] for m in res.store.entries))
        unique.append(len(res.store))
        print(f"run {r}: {len(res.store)} models, mass {mass[-1]:.3f}", flush=True)
    rm_err, mc_err = rmse(rm, exact.inclusion_probs) * 100, rmse(mc, exact.inclusion_probs) * 100
    order = np.argsort(exact.inclusion_probs, kind="stable")
    rows = [dict(covariate=j + 1, name=data.names[j], truth=exact.inclusion_probs[j],
                 rm_rmse100=rm_err[j], mc_rmse100=mc_err[j]) for j in order]
    write_rows(rows, args.out)
    for row in rows:
        print(f"{row['name']:>5} {row['truth']:.2f} {row['rm_rmse100']:6.2f} {row['mc_rmse100']:6.2f}")
    print(f"mean RMSE x100: RM {rm_err.mean():.2f}  MC {mc_err.mean():.2f}")
    print(f"mean captured mass {np.mean(mass):.3f}, unique models {np.mean(unique):.0f}")


if __name__ == "__main__":
    main()
