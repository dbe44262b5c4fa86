"""Deviance error and run time of the optimizer grid on top-posterior models.

The top models are ranked by exact BIC on the 15-covariate example; results
are long-format rows ready for boxplots.

    TALLBMS_WORKERS=8 python3 scripts/table1_benchmark.py --n 1000000 --top 128
"""

import argparse
from collections import defaultdict
from pathlib import Path

import numpy as np

from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.harness import TABLE1, Example1Spec, benchmark_optimizers, gen_example1, write_rows
from tallbms.posterior import enumerate_log_evidence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--target", choices=["logistic", "gaussian"], default="logistic")
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--top", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/table1_benchmark.csv"))
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)

    data = gen_example1(Example1Spec(n=args.n, seed=args.data_seed, target=args.target))
    log_ev = enumerate_log_evidence(Evaluator(data, EvidenceSpec("bic")))
    models = [int(m) for m in np.argsort(-log_ev, kind="stable")[:args.top]]
    rows = benchmark_optimizers(data, models, TABLE1, args.repeats, args.seed)
    write_rows(rows, args.out)
    by = defaultdict(lambda: ([], []))
    for r in rows:
        by[r["optimizer"]][0].append(abs(r["deviance_error"]))
        by[r["optimizer"]][1].append(r["seconds"])
    for s in TABLE1:
        err, sec = by[s.name]
        print(f"{s.name:>11}: median |dev error| {np.nanmedian(err):10.4g}  "
              f"median time {np.median(sec) * 1e3:8.2f} ms")


if __name__ == "__main__":
    main()
