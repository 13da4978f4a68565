"""Command line entry point ``lfa-schwarz``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import config as jobs
from .lfa import CoarseSingularityError, asymptotic_factor
from .optimize import WeightSearchSpec, Objective, optimize_weights
from .periodic import compare
from .schwarz import SingularBlockError
from .solver import (
    CycleSpec, SolverError, biot_hierarchy, measure_rho_h, poisson_hierarchy, solve,
    write_history_csv,
)
from .tables import TABLE_IDS, Options, TableError, run_table, write_golden

log = logging.getLogger("lfa_schwarz")

EXIT_FAIL = 1  # computed values outside the golden tolerance
EXIT_USAGE = 2  # bad arguments or job file
EXIT_NUMERIC = 3  # singular block, singular coarse symbol, divergence


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_rows(path: str, rows: List[List]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


# ---------------------------------------------------------------------------
# table
# ---------------------------------------------------------------------------

def cmd_table(args) -> int:
    opt = Options(samples=args.samples, grid=args.grid, seed=args.seed,
                  rows=args.rows.split(",") if args.rows else None, lfa_only=args.lfa_only)
    if args.write_goldens:
        result = run_table(args.table, opt, golden={})
        path = write_golden(result)
        log.info("wrote %s", path)
    else:
        result = run_table(args.table, opt)
    _emit(result.render(args.format), args.out)
    counts = result.statuses()
    log.info("%s: %s", args.table, ", ".join(f"{v} {k}" for k, v in sorted(counts.items())))
    return 0 if result.ok or args.write_goldens else EXIT_FAIL


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _hierarchy(doc: dict):
    common = dict(variant=doc.get("smoother", "as" if doc["problem"] == "biot" else "ras"),
                  weights=doc.get("weights", "natural"))
    n = jobs.default_grid(doc)
    if doc["problem"] == "biot":
        return biot_hierarchy(jobs.biot_params(doc), n, **common)
    blocks = doc.get("blocks", "element")
    if isinstance(blocks, dict):
        blocks = (blocks["k"], blocks["overlap"])
    dim = 1 if doc["problem"] == "poisson1d" else 2
    return poisson_hierarchy(doc.get("p", 1), dim, n, blocks=blocks, **common)


def run_job(doc: dict) -> dict:
    """Execute a validated ``run`` job and return a JSON-serializable summary."""
    mode = jobs.run_mode(doc)
    if mode == "lfa":
        cfg = jobs.two_grid_config(doc)
        rep = asymptotic_factor(cfg, doc.get("samples"))
        if doc.get("output"):
            _write_rows(doc["output"], rep.csv_rows())
        return {"mode": mode, "rho_2g": rep.rho_2g, "skipped": len(rep.skipped),
                "config": rep.config}
    if mode == "oracle":
        cfg = jobs.two_grid_config(doc)
        res = compare(cfg, doc.get("L", 2))
        return {"mode": mode, **res, "config": cfg.describe()}
    hier = _hierarchy(doc)
    spec = CycleSpec(doc.get("cycle", "V"), doc.get("nu1", 1), doc.get("nu2", 0))
    rng = np.random.default_rng(doc.get("seed", 0))
    b = rng.standard_normal(hier.finest.op.shape[0])
    res = solve(hier, b, spec, doc.get("tol", 1e-10), doc.get("maxiter", 500))
    if doc.get("output"):
        write_history_csv(doc["output"], res.history)
    rho_h = measure_rho_h(hier, spec, seed=doc.get("seed", 0))
    return {"mode": mode, "cycle": spec.label(), "iterations": res.iterations,
            "converged": bool(res.converged), "rho_h": rho_h,
            "final_relative_residual": res.history[-1] / res.history[0] if res.history[0] else 0.0,
            "hierarchy": hier.description}


def cmd_run(args) -> int:
    doc = jobs.load(args.config, jobs.RUN_SCHEMA)
    if args.out:
        doc["output"] = args.out
    summary = run_job(doc)
    sys.stdout.write(json.dumps(summary, indent=1, sort_keys=True, default=str) + "\n")
    return 0 if summary.get("converged", True) else EXIT_FAIL


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

def search_spec(doc: dict) -> WeightSearchSpec:
    ks = doc.get("permeabilities") if doc["problem"] == "biot" else None
    base = dict(doc)
    base.setdefault("weights", 1.0 if doc["parameters"] == [["natural"]] else {
        r: 1.0 for group in doc["parameters"] for r in group})
    configs = [jobs.two_grid_config(base, k) for k in ks] if ks else [jobs.two_grid_config(base)]
    roles = set(configs[0].blocks.roles)
    flat = [r for group in doc["parameters"] for r in group]
    if "natural" in flat and flat != ["natural"]:
        raise jobs.ConfigError("invalid job file",
                               ["parameters: 'natural' must be the only parameter role"])
    if flat == ["natural"] and isinstance(base["weights"], dict):
        raise jobs.ConfigError("invalid job file",
                               ["weights: a scalar search needs scalar or natural weights"])
    for group in doc["parameters"]:
        unknown = [r for r in group if r not in roles and r != "natural"]
        if unknown:
            raise jobs.ConfigError("invalid job file",
                                   [f"parameters: unknown role(s) {unknown}; pattern has {sorted(roles)}"])
    return WeightSearchSpec(configs, doc["parameters"], doc.get("bounds"), doc.get("samples"),
                            doc.get("start"))


def frequency_profile(result) -> List[List]:
    """Per-frequency factors at the optimum, one block of rows per configuration."""
    rows = []
    for i, rep in enumerate(result.reports):
        body = rep.csv_rows()
        if i == 0:
            rows.append(["config"] + body[0])
        rows += [[i] + r for r in body[1:]]
    return rows


def cmd_optimize(args) -> int:
    doc = jobs.load(args.config, jobs.OPTIMIZE_SCHEMA)
    spec = search_spec(doc)
    res = optimize_weights(spec)
    out = res.to_dict()
    step = 5e-4
    obj = Objective(spec, half=False)
    cert = []
    for j in range(spec.dim):
        for s in (-step, step):
            y = np.array(res.weights)
            y[j] = np.clip(y[j] + s, *spec.bounds[j])
            cert.append({"parameter": j, "value": float(y[j]), "rho_2g": obj(y)})
    out["certificate"] = {"step": step, "neighbours": cert,
                          "is_local_min": all(c["rho_2g"] >= res.rho_2g - 1e-12 for c in cert)}
    profile = args.profile or doc.get("output")
    if profile:
        _write_rows(profile, frequency_profile(res))
        out["profile"] = profile
    sys.stdout.write(json.dumps(out, indent=1, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfa-schwarz",
                                 description="Window-based LFA of Schwarz smoothers in multigrid.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("table", help="reproduce a built-in table and compare with goldens")
    t.add_argument("table", choices=TABLE_IDS)
    t.add_argument("--samples", type=int, help="frequency samples per dimension")
    t.add_argument("--grid", type=int, help="elements per direction for solver columns")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--rows", help="comma-separated subset of row keys")
    t.add_argument("--lfa-only", action="store_true", help="skip solver columns (T5, T6)")
    t.add_argument("--out", help="output file (default: stdout)")
    t.add_argument("--format", choices=("csv", "md", "json"), default="csv")
    t.add_argument("--write-goldens", action="store_true",
                   help="store the computed values as the new golden file")
    t.set_defaults(func=cmd_table)

    r = sub.add_parser("run", help="run one job file (mode lfa, solver or oracle)")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="per-frequency or residual-history CSV")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("optimize", help="optimize smoother weights for a job file")
    o.add_argument("--config", required=True)
    o.add_argument("--profile", help="write the per-frequency factors at the optimum here")
    o.set_defaults(func=cmd_optimize)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    logging.captureWarnings(True)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except (jobs.ConfigError, TableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularBlockError, CoarseSingularityError, SolverError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
