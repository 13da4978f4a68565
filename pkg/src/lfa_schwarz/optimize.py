"""Search for smoother weights that minimize the predicted two-grid factor."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .lfa import FactorReport, TwoGridConfig, asymptotic_factor, sweep

log = logging.getLogger(__name__)


@dataclass
class WeightSearchSpec:
    """Weights shared by groups of footprint roles, scored on one or more configurations.

    With several configurations (e.g. a permeability sweep) the objective is
    the worst factor among them.
    """

    configs: Sequence[TwoGridConfig]
    parameter_roles: Sequence[Sequence[str]]
    bounds: Optional[Sequence[Tuple[float, float]]] = None
    samples: Optional[int] = None
    start: Optional[Sequence[float]] = None
    scan_points: int = 41

    def __post_init__(self):
        if not self.configs:
            raise ValueError("need at least one configuration")
        k = len(self.parameter_roles)
        if not 1 <= k <= 3:
            raise ValueError(f"1 to 3 weight parameters supported, got {k}")
        if self.bounds is None:
            self.bounds = [(0.0, 2.0)] * k
        if len(self.bounds) != k:
            raise ValueError("one (lo, hi) pair per parameter required")
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 <= lo < hi):
                raise ValueError(f"invalid bounds ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.parameter_roles)

    def role_weights(self, params) -> Dict[str, float]:
        return {r: float(w) for w, group in zip(params, self.parameter_roles) for r in group}

    def full_samples(self, cfg: TwoGridConfig) -> int:
        return self.samples or cfg.samples


@dataclass
class WeightResult:
    weights: Tuple[float, ...]
    rho_2g: float
    natural_rho: Optional[float]
    improved: bool
    evaluations: int
    role_weights: Dict[str, float]
    reports: List[FactorReport] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "role_weights": self.role_weights,
                "rho_2g": self.rho_2g, "natural_rho": self.natural_rho,
                "improved": self.improved, "evaluations": self.evaluations}


class Objective:
    """Worst factor over the configurations as a function of the weight parameters (memoized)."""

    def __init__(self, spec: WeightSearchSpec, half: bool):
        self.spec = spec
        self.half = half
        self.calls = 0
        self.memo: Dict[Tuple[float, ...], float] = {}

    def samples(self, cfg):
        full = self.spec.full_samples(cfg)
        return max(8, full // 2) if self.half else full

    def __call__(self, params) -> float:
        params = np.clip(np.atleast_1d(np.asarray(params, dtype=float)),
                         [b[0] for b in self.spec.bounds], [b[1] for b in self.spec.bounds])
        key = tuple(np.round(params, 12))
        if key in self.memo:
            return self.memo[key]
        self.calls += 1
        w = self.spec.role_weights(params)
        worst = 0.0
        for cfg in self.spec.configs:
            _, vals = sweep(cfg, self.samples(cfg), w, [cfg.nu])
            worst = max(worst, max(v[cfg.nu] for v in vals.values() if v is not None))
        self.memo[key] = worst
        return worst


def natural_factor(spec: WeightSearchSpec) -> Optional[float]:
    """Factor of the configurations with their own (natural) weights, if defined."""
    try:
        return max(asymptotic_factor(c.replace(rule=c.rule.__class__(c.rule.variant)),
                                     spec.full_samples(c)).rho_2g for c in spec.configs)
    except KeyError:
        return None


def _search_1d(spec: WeightSearchSpec, coarse: Objective) -> float:
    lo, hi = spec.bounds[0]
    xs = np.linspace(lo, hi, spec.scan_points)
    fs = np.array([coarse([x]) for x in xs])
    i = int(np.argmin(fs))
    if 0 < i < len(xs) - 1 and fs[i] < fs[i - 1] and fs[i] < fs[i + 1]:
        res = minimize_scalar(lambda x: coarse([x]), bracket=(xs[i - 1], xs[i], xs[i + 1]),
                              method="golden", options={"xtol": 1e-3 / max(abs(xs[i]), 1e-3)})
        x = float(res.x)
        return x if coarse([x]) <= fs[i] else float(xs[i])
    # minimum on the boundary or on a plateau: refine with a bounded scalar search
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    res = minimize_scalar(lambda x: coarse([x]), bounds=(a, b), method="bounded",
                          options={"xatol": 5e-4})
    return float(res.x) if res.fun <= fs[i] else float(xs[i])


def _search_nd(spec: WeightSearchSpec, coarse: Objective) -> np.ndarray:
    fracs = (0.25, 0.5, 0.75)
    starts = [np.array([lo + f * (hi - lo) for f, (lo, hi) in zip(combo, spec.bounds)])
              for combo in itertools.product(fracs, repeat=spec.dim)]
    if spec.start is not None:
        starts.insert(0, np.asarray(spec.start, dtype=float))
    best_x, best_f = None, np.inf
    for x0 in starts:
        res = minimize(coarse, x0, method="Nelder-Mead", bounds=spec.bounds,
                       options={"xatol": 1e-3, "fatol": 1e-6, "maxiter": 400})
        log.debug("start %s -> %s (%.4f)", x0, res.x, res.fun)
        if res.fun < best_f:
            best_x, best_f = np.asarray(res.x), float(res.fun)
    return best_x


def optimize_weights(spec: WeightSearchSpec) -> WeightResult:
    """Minimize the worst two-grid factor over the weight parameters.

    The search runs on a half-resolution frequency grid; the returned factor
    is a full-resolution certificate around the search optimum.
    """
    coarse = Objective(spec, half=True)
    full = Objective(spec, half=False)
    if spec.dim == 1:
        x = np.array([_search_1d(spec, coarse)])
        step = 5e-4
        lo, hi = spec.bounds[0]
        cands = [np.clip(x + k * step, lo, hi) for k in range(-4, 5)]
    else:
        x = _search_nd(spec, coarse)
        cands = [x]
        if spec.start is not None:
            cands.append(np.asarray(spec.start, dtype=float))
    fvals = [full(c) for c in cands]
    k = int(np.argmin(fvals))
    xbest, fbest = np.asarray(cands[k], dtype=float), float(fvals[k])
    nat = natural_factor(spec)
    improved = nat is None or fbest <= nat + 1e-12
    if not improved:
        log.warning("optimized weights (%.4f) do not beat natural weights (%.4f)", fbest, nat)
    w = spec.role_weights(xbest)
    reports = [asymptotic_factor(c, spec.full_samples(c), w) for c in spec.configs]
    return WeightResult(tuple(float(v) for v in xbest), fbest, nat, improved,
                        coarse.calls + full.calls, w, reports)


def scalar_spec(cfg: TwoGridConfig, **kw) -> WeightSearchSpec:
    """One weight multiplying the natural (AS) or ownership (RAS) weights."""
    if isinstance(cfg.rule.weights, dict):
        raise ValueError("scalar search needs a configuration with scalar or natural weights")
    return WeightSearchSpec([cfg], [["natural"]], **kw)


BIOT_ROLE_GROUPS = [["u_vertex", "u_edge"], ["u_cell"], ["p"]]
