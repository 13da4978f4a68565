"""Built-in table jobs: compute, compare with goldens, and render."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .discretization import BiotParams
from .lfa import (
    PAPER_BIOT_WEIGHTS, asymptotic_factor, asymptotic_factors, biot_config, poisson_config,
)
from .optimize import optimize_weights, scalar_spec
from .solver import (
    CycleSpec, DivergenceError, NonConvergenceError, biot_hierarchy, count_iterations,
    measure_rho_h, poisson_hierarchy,
)

TABLE_IDS = ("T1", "T2", "T3", "T4", "T2D", "T5", "T6", "T7", "T8")
GOLDEN_DIR = Path(__file__).with_name("goldens")
CYCLES = ((1, 0), (1, 1), (2, 1), (2, 2))
PERMEABILITIES = {"1": 1.0, "1e-3": 1e-3, "1e-6": 1e-6, "1e-9": 1e-9, "1e-12": 1e-12,
                  "1e-15": 1e-15}

_TRI = [str(i) for i in range(1, 7)], [str(i) for i in range(2, 8)]
_K_ROWS = list(PERMEABILITIES)


def _cycle_cols(kind: str) -> List[str]:
    return [f"{kind}({a},{b}) {what}" for a, b in CYCLES for what in ("rho_2g", "rho_h")]


@dataclass(frozen=True)
class TableDef:
    """Layout and per-cell tolerances of one built-in table."""

    title: str
    rows: List[str]
    cols: List[str]
    row_label: str
    col_label: str
    tolerance: float = 0.01
    rho_h_tolerance: float = 0.02
    flag_tolerance: Optional[float] = None
    weight_tolerance: Optional[float] = None


TABLES: Dict[str, TableDef] = {
    "T1": TableDef("1D Poisson p=1, additive Schwarz, natural weights, nu=1", *_TRI, "ov", "k"),
    "T2": TableDef("1D Poisson p=1, restricted additive Schwarz, natural weights, nu=1", *_TRI,
                   "ov", "k"),
    "T3": TableDef("1D Poisson p=1, restricted additive Schwarz, optimal scalar weight, nu=1",
                   *_TRI, "ov", "k", weight_tolerance=0.05),
    "T4": TableDef("1D Poisson high order, element blocks, natural weights, nu=1", ["AS", "RAS"],
                   [str(p) for p in range(2, 9)], "smoother", "p"),
    "T2D": TableDef("2D Poisson high order, element blocks, natural weights, nu=2", ["AS", "RAS"],
                    [str(p) for p in range(1, 9)], "smoother", "p"),
    "T5": TableDef("2D Poisson high order, element RAS natural weights, V-cycles",
                   [str(p) for p in range(1, 9)], _cycle_cols("V"), "p", "cycle"),
    "T6": TableDef("Biot Q2-Q1, 51-point additive Schwarz, natural weights, W-cycles", _K_ROWS,
                   _cycle_cols("W"), "K", "cycle", flag_tolerance=0.05),
    "T7": TableDef("Biot Q2-Q1, 51-point additive Schwarz, weights (0.09, 0.22, 1.02)", _K_ROWS,
                   [f"W({a},{b})" for a, b in CYCLES], "K", "cycle", flag_tolerance=0.05),
    "T8": TableDef("Biot Q2-Q1, iterations to reduce the residual by 1e-10, weights "
                   "(0.09, 0.22, 1.02)", _K_ROWS,
                   [f"({a},{b}) {kind}" for a, b in CYCLES for kind in ("V", "W")], "K", "cycle",
                   tolerance=2, flag_tolerance=5),
}

BIOT_ASSUMPTIONS = ["Biot: h=1/64, tau=1, 1/M=0, mu_f=1, alpha=1, E=3e4, nu=0.2",
                    "Biot: symmetric form [[A, B^T], [B, -C]], window 8 lattice units"]
SOLVER_ASSUMPTIONS = ["solver: boundary blocks truncated to free dofs, coarsest grid 2 elements",
                      "solver: rho_h = geometric mean of the last 10 of 80 residual ratios"]


class TableError(ValueError):
    pass


@dataclass
class Options:
    samples: Optional[int] = None
    grid: Optional[int] = None
    seed: int = 0
    iterations: int = 80
    rows: Optional[Sequence[str]] = None
    lfa_only: bool = False  # skip the solver columns of the mixed tables


@dataclass
class Cell:
    value: object
    golden: object
    status: str
    text: str


@dataclass
class TableResult:
    table_id: str
    title: str
    row_label: str
    col_label: str
    rows: List[str]
    cols: List[str]
    cells: Dict[Tuple[str, str], Cell]
    config: dict
    assumptions: List[str]

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.cells.values())

    def statuses(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for c in self.cells.values():
            out[c.status] = out.get(c.status, 0) + 1
        return out

    def _grid(self) -> List[List[str]]:
        head = [f"{self.row_label}\\{self.col_label}"] + self.cols
        body = []
        for r in self.rows:
            body.append([r] + [self.cells[(r, c)].text if (r, c) in self.cells else "-"
                               for c in self.cols])
        return [head] + body

    def _footer(self) -> List[str]:
        lines = [f"table {self.table_id}: {self.title}"]
        bad = [(k, c) for k, c in self.cells.items() if c.status != "pass"]
        for (r, col), c in bad:
            lines.append(f"{c.status}: {self.row_label}={r} {col}: {c.text} vs golden {c.golden}")
        lines.append(f"git: {git_revision()}")
        lines.append("config: " + json.dumps(self.config, sort_keys=True))
        lines.extend(f"assumption: {a}" for a in self.assumptions)
        return lines

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerows(self._grid())
        # provenance lines are free text; csv readers should skip '#' lines
        for line in self._footer():
            buf.write(f"# {line}\n")
        return buf.getvalue()

    def to_markdown(self) -> str:
        g = self._grid()
        out = ["| " + " | ".join(g[0]) + " |", "|" + "---|" * len(g[0])]
        out += ["| " + " | ".join(r) + " |" for r in g[1:]]
        out.append("")
        out += [f"- {line}" for line in self._footer()]
        return "\n".join(out) + "\n"

    def to_json(self) -> str:
        cells = [{"row": r, "col": c, "value": v.value, "golden": v.golden, "status": v.status}
                 for (r, c), v in self.cells.items()]
        doc = {"id": self.table_id, "title": self.title, "rows": self.rows, "cols": self.cols,
               "cells": cells, "ok": self.ok, "git": git_revision(), "config": self.config,
               "assumptions": self.assumptions}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def render(self, fmt: str) -> str:
        return {"csv": self.to_csv, "md": self.to_markdown, "json": self.to_json}[fmt]()

    def golden_document(self) -> dict:
        return {"id": self.table_id, "title": self.title, "rows": self.rows, "cols": self.cols,
                "row_label": self.row_label, "col_label": self.col_label,
                "cells": {f"{r},{c}": v.value for (r, c), v in self.cells.items()}}


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def golden_path(table_id: str) -> Path:
    base = Path(os.environ.get("LFA_SCHWARZ_GOLDENS", GOLDEN_DIR))
    return base / f"{table_id}.json"


def load_golden(table_id: str) -> dict:
    path = golden_path(table_id)
    if not path.exists():
        raise TableError(f"no golden file for {table_id} at {path}; rerun with --write-goldens")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_golden(result: TableResult) -> Path:
    """Store the computed values as the table's golden file (first-run mode)."""
    path = golden_path(result.table_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = result.golden_document()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Cell computation
# ---------------------------------------------------------------------------

def _fmt(v, kind: str) -> str:
    if v is None:
        return "n/a"
    if kind == "iter":
        return str(v) if isinstance(v, int) else f">{v}"
    if isinstance(v, dict):
        return f"{v['rho']:.2f} ({v['weight']:.2f})"
    if not math.isfinite(v):
        return "div"
    return f"{v:.2f}"


def _status(value, golden, tol, flag_tol, weight_tol=None) -> str:
    if golden is None:
        return "pass"
    if value is None:
        return "fail"
    if isinstance(golden, dict):
        ok = abs(value["rho"] - golden["rho"]) <= tol + 1e-9 and \
            abs(value["weight"] - golden["weight"]) <= weight_tol + 1e-9
        return "pass" if ok else "fail"
    if isinstance(value, str):
        return "fail"
    err = abs(value - golden)
    if err <= tol + 1e-9:
        return "pass"
    if flag_tol is not None and err <= flag_tol + 1e-9:
        return "flag"
    return "fail"


def _tri_cells():
    return [(str(ov), str(k)) for ov in range(1, 7) for k in range(ov + 1, 8)]


def _compute_1d(variant: str, opt: Options):
    out = {}
    for r, c in _tri_cells():
        if opt.rows and r not in opt.rows:
            continue
        cfg = poisson_config(1, 1, blocks=(int(c), int(r)), variant=variant)
        out[(r, c)] = asymptotic_factor(cfg, opt.samples).rho_2g
    return out, {"problem": "poisson1d", "p": 1, "smoother": variant, "weights": "natural",
                 "nu": 1, "samples_per_dim": opt.samples or 32}


def compute_t1(opt):
    return _compute_1d("as", opt)


def compute_t2(opt):
    return _compute_1d("ras", opt)


def compute_t3(opt):
    out = {}
    for r, c in _tri_cells():
        if opt.rows and r not in opt.rows:
            continue
        cfg = poisson_config(1, 1, blocks=(int(c), int(r)), variant="ras", weights=1.0)
        res = optimize_weights(scalar_spec(cfg, samples=opt.samples))
        out[(r, c)] = {"rho": res.rho_2g, "weight": res.weights[0]}
    return out, {"problem": "poisson1d", "p": 1, "smoother": "ras", "weights": "optimal scalar",
                 "nu": 1, "search": "scan + golden section on [0, 2]"}


def _element_rows(dim: int, ps, nu1: int, nu2: int, opt: Options):
    out = {}
    for variant in ("as", "ras"):
        r = variant.upper()
        if opt.rows and r not in opt.rows:
            continue
        for p in ps:
            cfg = poisson_config(p, dim, variant=variant, nu1=nu1, nu2=nu2)
            out[(r, str(p))] = asymptotic_factor(cfg, opt.samples).rho_2g
    return out


def compute_t4(opt):
    return _element_rows(1, range(2, 9), 1, 0, opt), {
        "problem": "poisson1d", "blocks": "element", "weights": "natural", "nu": 1}


def compute_t2d(opt):
    return _element_rows(2, range(1, 9), 1, 1, opt), {
        "problem": "poisson2d", "blocks": "element", "weights": "natural", "nu": 2}


def _cycle_col(kind: str, c, what: str) -> str:
    return f"{kind}({c[0]},{c[1]}) {what}"


def _rho_h(hier, spec: CycleSpec, opt: Options):
    try:
        return measure_rho_h(hier, spec, iterations=opt.iterations, seed=opt.seed)
    except DivergenceError:
        return float("inf")


def compute_t5(opt):
    grid = opt.grid or 128
    out = {}
    for p in range(1, 9):
        if opt.rows and str(p) not in opt.rows:
            continue
        cfg = poisson_config(p, 2, variant="ras")
        facs = asymptotic_factors(cfg, [sum(c) for c in CYCLES], opt.samples)
        hier = None if opt.lfa_only else poisson_hierarchy(p, 2, grid, variant="ras")
        for c in CYCLES:
            out[(str(p), _cycle_col("V", c, "rho_2g"))] = facs[sum(c)]
            if hier is not None:
                out[(str(p), _cycle_col("V", c, "rho_h"))] = _rho_h(hier, CycleSpec("V", *c), opt)
    return out, {"problem": "poisson2d", "blocks": "element", "smoother": "ras",
                 "weights": "natural", "elements": grid, "cycles": "V"}


def _biot_rows(opt: Options):
    return [k for k in PERMEABILITIES if not opt.rows or k in opt.rows]


def compute_t6(opt):
    grid = opt.grid or 64
    out = {}
    for key in _biot_rows(opt):
        params = BiotParams(permeability=PERMEABILITIES[key])
        facs = asymptotic_factors(biot_config(params, 1.0 / grid), [sum(c) for c in CYCLES],
                                  opt.samples)
        hier = None if opt.lfa_only else biot_hierarchy(params, grid)
        for c in CYCLES:
            out[(key, _cycle_col("W", c, "rho_2g"))] = facs[sum(c)]
            if hier is not None:
                out[(key, _cycle_col("W", c, "rho_h"))] = _rho_h(hier, CycleSpec("W", *c), opt)
    return out, {"problem": "biot", "smoother": "as", "weights": "natural", "elements": grid}


def compute_t7(opt):
    out = {}
    for key in _biot_rows(opt):
        params = BiotParams(permeability=PERMEABILITIES[key])
        cfg = biot_config(params, weights=PAPER_BIOT_WEIGHTS)
        facs = asymptotic_factors(cfg, [sum(c) for c in CYCLES], opt.samples)
        for c in CYCLES:
            out[(key, f"W({c[0]},{c[1]})")] = facs[sum(c)]
    return out, {"problem": "biot", "smoother": "as", "weights": PAPER_BIOT_WEIGHTS}


def compute_t8(opt):
    grid = opt.grid or 64
    out = {}
    for key in _biot_rows(opt):
        params = BiotParams(permeability=PERMEABILITIES[key])
        hier = biot_hierarchy(params, grid, weights=PAPER_BIOT_WEIGHTS)
        for c in CYCLES:
            for kind in ("V", "W"):
                try:
                    n = count_iterations(hier, CycleSpec(kind, *c), 1e-10, seed=opt.seed)
                except NonConvergenceError:
                    n = None
                out[(key, f"({c[0]},{c[1]}) {kind}")] = n
    return out, {"problem": "biot", "smoother": "as", "weights": PAPER_BIOT_WEIGHTS,
                 "elements": grid, "tol": 1e-10, "maxiter": 500}


COMPUTE: Dict[str, Callable] = {
    "T1": compute_t1, "T2": compute_t2, "T3": compute_t3, "T4": compute_t4,
    "T2D": compute_t2d, "T5": compute_t5, "T6": compute_t6, "T7": compute_t7, "T8": compute_t8,
}


def run_table(table_id: str, options: Optional[Options] = None,
              golden: Optional[dict] = None) -> TableResult:
    """Compute one table and grade each cell against the golden values."""
    if table_id not in COMPUTE:
        raise TableError(f"unknown table {table_id!r}; choose from {', '.join(TABLE_IDS)}")
    opt = options or Options()
    gold = load_golden(table_id) if golden is None else golden
    tdef = TABLES[table_id]
    values, config = COMPUTE[table_id](opt)
    config = {**config, "samples_per_dim": opt.samples, "seed": opt.seed}
    kind = "iter" if table_id == "T8" else "rho"
    cells = {}
    for (r, c), v in values.items():
        g = gold.get("cells", {}).get(f"{r},{c}")
        tol = tdef.rho_h_tolerance if c.endswith("rho_h") else tdef.tolerance
        if kind == "iter" and v is None:
            text = ">500"
            status = "fail" if g is not None else "pass"
        else:
            text = _fmt(v, kind)
            status = _status(v, g, tol, tdef.flag_tolerance, tdef.weight_tolerance)
        cells[(r, c)] = Cell(v, g, status, text)
    assumptions = []
    if table_id in ("T5", "T6", "T8"):
        assumptions += SOLVER_ASSUMPTIONS
    if table_id in ("T6", "T7", "T8"):
        assumptions += BIOT_ASSUMPTIONS
    rows = [r for r in tdef.rows if any(k[0] == r for k in values)]
    return TableResult(table_id, tdef.title, tdef.row_label, tdef.col_label, rows,
                       list(tdef.cols), cells, config, assumptions)
