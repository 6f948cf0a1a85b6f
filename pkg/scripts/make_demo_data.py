"""Write a simulated train/target/truth CSV triple for the fit/predict/evaluate commands.

    python scripts/make_demo_data.py --out demo --n 5000
    rcconformal fit --config configs/fit.toml --data demo/train.csv --out demo/bundle.zip
    rcconformal predict --bundle demo/bundle.zip --data demo/target.csv --out demo/pred.csv
    rcconformal evaluate --pred demo/pred.csv --truth demo/truth.csv --alpha 0.1
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from rcconformal.data import ColumnSchema, emit_csv
from rcconformal.simulation import DgpConfig, generate


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("demo"))
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--k-u", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    cfg = DgpConfig(n=args.n, k_u=args.k_u, seed=args.seed)
    sample = generate(cfg)
    schema = ColumnSchema(outcome="y", treatment="a", source="s", row_id="id",
                          v=tuple(f"v{j + 1}" for j in range(cfg.p_v)),
                          u=tuple(f"u{j + 1}" for j in range(cfg.p_u)))
    args.out.mkdir(parents=True, exist_ok=True)
    emit_csv(sample.table, args.out / "train.csv", schema)

    target = np.flatnonzero(sample.s == 0)
    ids = sample.table.ids
    with open(args.out / "target.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *schema.v])
        for i in target:
            w.writerow([ids[i], *(repr(float(x)) for x in sample.v[i])])
    with open(args.out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "y_0", "y_1"])
        for i in target:
            w.writerow([ids[i], repr(float(sample.y0[i])), repr(float(sample.y1[i]))])
    print(f"{sample.n} rows ({target.size} target) written to {args.out}/")


if __name__ == "__main__":
    main()
