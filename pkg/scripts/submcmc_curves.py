"""RMSE curves of subsampled MJMCMC on the 15-covariate example.

Truth comes from full enumeration with exact IRLS fits.  Each subsample
fraction gets ``--runs`` seeded chains; the per-block RM and MC estimates
are written as a long-format CSV.

    python3 scripts/submcmc_curves.py --n 100000 --iterations 33000 --runs 20
"""

import argparse
import time
from pathlib import Path

import numpy as np

from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.harness import Example1Spec, gen_example1, rmse, write_rows
from tallbms.optim import SirlsSgdConfig
from tallbms.posterior import enumerate_all
from tallbms.space import ModelPrior
from tallbms.submcmc import Algo3Config, run_algo3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--target", choices=["logistic", "gaussian"], default="logistic")
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.05, 0.01, 0.005])
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=5000)
    ap.add_argument("--block", type=int, default=500)
    ap.add_argument("--restart", choices=["fresh", "warm"], default="fresh")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/submcmc_curves.csv"))
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)

    data = gen_example1(Example1Spec(n=args.n, seed=args.data_seed, target=args.target))
    t0 = time.time()
    truth = enumerate_all(Evaluator(data, EvidenceSpec("bic"))).inclusion_probs
    print(f"truth {np.round(truth, 3)} ({time.time() - t0:.0f}s)")
    rows = []
    seqs = np.random.SeedSequence(args.seed).spawn(len(args.fractions))
    for f, seq in zip(args.fractions, seqs):
        finals = {"rm": [], "mc": []}
        for r, run_seq in enumerate(seq.spawn(args.runs)):
            cfg = Algo3Config(optimizer=SirlsSgdConfig.for_family(data.family, fraction=f),
                              restart=args.restart, iterations=args.iterations, block=args.block,
                              seed=int(run_seq.generate_state(1)[0]))
            t1 = time.time()
            res = run_algo3(data, ModelPrior(), cfg, truth=truth)
            for b, it in enumerate(res.block_ends):
                for est, blocks in (("rm", res.rm_blocks), ("mc", res.mc_blocks)):
                    rows += [dict(fraction=f, run=r, iteration=int(it), estimator=est,
                                  covariate=j + 1, estimate=v, truth=truth[j])
                             for j, v in enumerate(blocks[b])]
            finals["rm"].append(res.rm.inclusion_probs)
            finals["mc"].append(res.mc.inclusion_probs)
            print(f"fraction {f:g} run {r}: RM rmse {res.rmse_curve['rm'][-1]:.4f} "
                  f"({time.time() - t1:.0f}s)", flush=True)
        for est in ("rm", "mc"):
            err = rmse(finals[est], truth) * 100
            print(f"fraction {f:g} {est.upper()} mean RMSE x100 {err.mean():.2f}")
    write_rows(rows, args.out)


if __name__ == "__main__":
    main()
