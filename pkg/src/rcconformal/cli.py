"""Command-line entry point: simulate, fit, predict, evaluate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import pickle
import platform
import sys
import time
import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import ColumnSchema, DataError, load_csv, make_splits
from .intervals import IntervalBatch, read_predictions, write_predictions
from .learners import LearnerError
from .nuisance import LearnedNuisances, NuisanceError
from .pipeline import fit_pipeline
from .simulation import ReplicationSpec, run_experiment

log = logging.getLogger("rcconformal")

BUNDLE_FORMAT = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def schema_hash(schema: ColumnSchema) -> str:
    return hashlib.sha256(json.dumps(schema.as_dict(), sort_keys=True).encode()).hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn

    return {"rcconformal": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


# -- simulate ------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> int:
    sim = cfg.simulate
    if sim is None:
        raise ConfigError(f"{cfg.path or '<config>'}: simulate needs a [simulate] section")
    base = ReplicationSpec(dgp=sim.dgp(), pipeline=cfg.pipeline, nuisance=cfg.learners,
                           nuisances=sim.nuisances, ite=sim.ite)
    t0 = time.time()
    result = run_experiment(base, [int(n) for n in sim.n], [int(k) for k in sim.k_u],
                            [float(r) for r in sim.source_rate], reps=sim.reps, seed=sim.seed, workers=sim.workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.write_csv(out_dir / sim.out)
    result.write_panels(out_dir / sim.panels)
    manifest = {
        "command": "simulate", "config": cfg.path, "config_sha256": cfg.digest(), "seed": sim.seed,
        "reps": sim.reps, "versions": _versions(), "elapsed_seconds": round(time.time() - t0, 3),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"), "failures": {str(k): v for k, v in result.failures.items()},
    }
    (out_dir / sim.manifest).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    log.info("wrote %s", out_dir / sim.out)
    return EXIT_OK


# -- fit / predict -------------------------------------------------------------------------


def cmd_fit(cfg: RunConfig, data: Path, out: Path) -> int:
    if cfg.schema is None:
        raise ConfigError(f"{cfg.path or '<config>'}: fit needs a [data] section")
    table = load_csv(data, cfg.schema)
    levels = list(cfg.levels) if cfg.levels else table.levels
    for lev in levels:
        if lev not in table.levels:
            raise DataError(f"treatment level {lev!r} has no source rows in {data}")
    splits = make_splits(table, cfg.pipeline.fractions, seed=cfg.seed)
    arms = fit_pipeline(table, splits, cfg.pipeline, cfg.learners, LearnedNuisances(cfg.learners, "x"), levels=levels)
    manifest = {
        "format": BUNDLE_FORMAT, "package_version": __version__, "schema": cfg.schema.as_dict(),
        "schema_sha256": schema_hash(cfg.schema), "alpha": cfg.pipeline.alpha, "levels": levels,
        "methods": list(cfg.pipeline.methods), "scores": list(cfg.pipeline.scores),
        "estimates": [{"method": a.method, "score": a.score, "a": a.a, "value": a.rhat.value,
                       "status": a.rhat.status} for a in arms],
        "splits": splits.as_dict(), "config_sha256": cfg.digest(), "versions": _versions(),
    }
    save_bundle(out, manifest, arms)
    return EXIT_OK


def save_bundle(path: Path, manifest: dict, arms) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str))
        zf.writestr("arms.pkl", pickle.dumps(list(arms), protocol=pickle.HIGHEST_PROTOCOL))


def load_bundle(path: Path):
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != BUNDLE_FORMAT:
                raise DataError(f"{path}: bundle format {manifest.get('format')!r}, expected {BUNDLE_FORMAT}")
            schema = ColumnSchema(**{k: (tuple(v) if k in ("v", "u") else v) for k, v in manifest["schema"].items()})
            if schema_hash(schema) != manifest["schema_sha256"]:
                raise DataError(f"{path}: schema hash mismatch; the bundle is corrupt")
            arms = pickle.loads(zf.read("arms.pkl"))
    except (zipfile.BadZipFile, KeyError) as err:
        raise DataError(f"{path}: not a model bundle ({err})") from err
    return manifest, schema, arms


def read_target(path: Path, schema: ColumnSchema):
    """Row ids and the V matrix from a CSV of target covariates."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.v if c not in header]
        if missing:
            raise DataError(f"{path}: V-dimension mismatch; missing columns {missing} "
                            f"(bundle expects {len(schema.v)} V columns)")
        ids, rows = [], []
        for line, rec in enumerate(reader, start=2):
            try:
                rows.append([float(rec[c]) for c in schema.v])
            except (TypeError, ValueError) as err:
                raise DataError(f"{path}:{line}: non-numeric V value") from err
            ids.append(rec[schema.row_id] if schema.row_id and schema.row_id in rec else str(line - 2))
    V = np.array(rows, dtype=float).reshape(len(rows), len(schema.v))
    if not np.isfinite(V).all():
        raise DataError(f"{path}: non-finite V values")
    return ids, V


def predict_arms(arms, V) -> list[IntervalBatch]:
    return [arm.intervals(V) for arm in arms]


def cmd_predict(bundle: Path, data: Path, out: Path) -> int:
    manifest, schema, arms = load_bundle(bundle)
    ids, V = read_target(data, schema)
    write_predictions(out, ids, predict_arms(arms, V))
    return EXIT_OK


# -- evaluate --------------------------------------------------------------------------


def read_truth(path: Path) -> dict:
    """``{(row_id, a): y}`` from a long (row_id, a, y) or wide (row_id, y_<a>...) CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "row_id" not in header:
            raise DataError(f"{path}: truth file needs a row_id column")
        truth = {}
        long_form = "a" in header and "y" in header
        wide = [c for c in header if c.startswith("y_")]
        if not long_form and not wide:
            raise DataError(f"{path}: truth file needs (a, y) columns or y_<level> columns")
        for rec in reader:
            if long_form:
                truth[(rec["row_id"], rec["a"])] = float(rec["y"])
            else:
                for c in wide:
                    if rec[c] != "":
                        truth[(rec["row_id"], c[2:])] = float(rec[c])
    return truth


def evaluate(pred_rows: list, truth: dict, alpha=None) -> list[dict]:
    groups: dict = {}
    for r in pred_rows:
        if alpha is not None and not math.isclose(r["alpha"], alpha):
            continue
        key = (r["row_id"], str(r["a"]))
        if key not in truth:
            raise DataError(f"no truth for row {r['row_id']!r} at level {r['a']!r}")
        y = truth[key]
        empty = math.isnan(r["lower"]) or math.isnan(r["upper"])
        hit = (not empty) and r["lower"] <= y <= r["upper"]
        width = 0.0 if empty else r["upper"] - r["lower"]
        groups.setdefault((r["method"], str(r["a"])), []).append((hit, width))
    out = []
    for method in sorted({m for m, _ in groups}):
        pooled = []
        for (m, a), vals in sorted(groups.items()):
            if m != method:
                continue
            pooled.extend(vals)
            out.append(_summary(method, a, vals))
        out.append(_summary(method, "pooled", pooled))
    return out


def _summary(method, a, vals) -> dict:
    hits = np.array([h for h, _ in vals], dtype=float)
    widths = np.array([w for _, w in vals])
    finite = np.isfinite(widths)
    return {"method": method, "a": a, "n": int(hits.size), "coverage": float(hits.mean()),
            "mean_length": float(widths[finite].mean()) if finite.any() else math.inf,
            "n_infinite": int((~finite).sum())}


def cmd_evaluate(pred: Path, truth_path: Path, alpha, out=None) -> int:
    rows = read_predictions(pred)
    summary = evaluate(rows, read_truth(truth_path), alpha)
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=["method", "a", "n", "coverage", "mean_length", "n_infinite"])
        writer.writeheader()
        writer.writerows(summary)
    finally:
        if out:
            fh.close()
    return EXIT_OK


# -- argument handling --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcconformal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable)")

    sp = sub.add_parser("simulate", help="run Monte Carlo coverage experiments")
    with_config(sp)
    sp.add_argument("--out-dir", type=Path, default=Path("."))

    sp = sub.add_parser("fit", help="fit scorers, nuisances and quantiles on a CSV")
    with_config(sp)
    sp.add_argument("--data", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = sub.add_parser("predict", help="emit target intervals from a saved bundle")
    sp.add_argument("--bundle", required=True, type=Path)
    sp.add_argument("--data", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = sub.add_parser("evaluate", help="coverage of predicted intervals against known outcomes")
    sp.add_argument("--pred", required=True, type=Path)
    sp.add_argument("--truth", required=True, type=Path)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--out", type=Path, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(load_config(args.config, overrides=args.set), args.out_dir)
        if args.command == "fit":
            return cmd_fit(load_config(args.config, overrides=args.set), args.data, args.out)
        if args.command == "predict":
            return cmd_predict(args.bundle, args.data, args.out)
        if args.alpha is not None and not 0 < args.alpha < 1:
            raise ConfigError("--alpha must lie in (0, 1)")
        return cmd_evaluate(args.pred, args.truth, args.alpha, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NuisanceError, LearnerError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
