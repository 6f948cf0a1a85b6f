"""Pooled DML and weighted coverage along one axis: sample size, k_U or source share.

    python scripts/sweep.py n --values 1000 2500 5000 10000
    python scripts/sweep.py k_u --values 2 6 10 15
    python scripts/sweep.py source_rate --values 0.5 0.7 0.9
"""

import argparse
from pathlib import Path

from rcconformal.nuisance import NuisanceSpec
from rcconformal.pipeline import PipelineConfig
from rcconformal.simulation import DgpConfig, ReplicationSpec, run_experiment

DEFAULTS = {"n": [5000], "k_u": [10], "source_rate": [0.9]}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("axis", choices=sorted(DEFAULTS))
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    args = p.parse_args(argv)

    grid = dict(DEFAULTS)
    grid[args.axis] = [v if args.axis == "source_rate" else int(v) for v in args.values]
    spec = ReplicationSpec(dgp=DgpConfig(), nuisance=NuisanceSpec.fast(),
                           pipeline=PipelineConfig(alpha=0.1, methods=("weighted", "dml"), scores=("abs", "cqr")))
    res = run_experiment(spec, grid["n"], grid["k_u"], grid["source_rate"], reps=args.reps,
                         seed=args.seed, workers=args.workers)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        res.write_panels(args.out)
    for r in res.get(a="pooled"):
        print(f"{args.axis}={r[args.axis]:<8} {r['method']:>8}/{r['score']:<4} coverage {r['coverage']:.3f} "
              f"(se {r['se']:.3f}) length {r['avg_length']:.2f}")


if __name__ == "__main__":
    main()
