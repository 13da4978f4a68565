"""Window-based local Fourier analysis of two-grid methods with Schwarz smoothers.

A window of ``n^d`` lattice positions and its periodic extension split the
infinite grid into subgrids.  For a phase ``phi`` in ``(-pi, pi]^d`` the
Bloch-periodic grid functions ``u(x + q n) = exp(i phi.q) u(x)`` form an
invariant space of every operator whose pattern period divides ``n``; the
restriction of an operator to that space is a dense ``N x N`` matrix.

All operators are stored as :class:`BlochMatrix` objects, i.e. as a short
sum of real matrices multiplied by ``exp(i phi.q)``, so evaluating a symbol
at a new frequency costs only a few array additions.
"""

from __future__ import annotations

import itertools
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .discretization import (
    BiotParams, DofClass, GridSpec, StencilSet, assemble_biot_stencils,
    assemble_poisson_stencils, assemble_stencils, prolongation_stencil,
)
from .schwarz import (
    BlockPattern, WeightRule, local_matrix, make_1d_blocks, make_biot_pressure_blocks,
    make_element_blocks,
)

BIOT_WINDOW = 8
SKIP_RATIO = 1e-10


class CoarseSingularityError(np.linalg.LinAlgError):
    """The coarse symbol is singular at the requested frequency."""


# ---------------------------------------------------------------------------
# Windows and frequencies
# ---------------------------------------------------------------------------

def window_size(p: int, k: int, ov: int) -> int:
    """Smallest admissible window: lcm(2p, (k-ov) j) with (k-ov) j the first multiple above k."""
    if not (k > ov >= 1):
        raise ValueError(f"need k > ov >= 1, got k={k}, ov={ov}")
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    s = k - ov
    m = s * (k // s + 1)
    return math.lcm(2 * p, m)


def pattern_window_size(pattern: BlockPattern, stencils: StencilSet) -> int:
    if pattern.kind == "biot-pressure":
        return BIOT_WINDOW
    p = stencils.period[0]
    if pattern.kind == "element":
        return window_size(p, p + 1, 1)
    return window_size(p, pattern.params["k"], pattern.params["ov"])


class Window:
    """Dense indexing of the dofs inside one ``n^d`` window."""

    def __init__(self, n: int, dim: int, classes: Sequence[DofClass], period: Sequence[int]):
        if any(n % P for P in period):
            raise ValueError(f"window size {n} is not a multiple of the pattern period {tuple(period)}")
        self.n = n
        self.dim = dim
        self.fields = list(dict.fromkeys(c.field for c in classes))
        self.index = {f: -np.ones((n,) * dim, dtype=int) for f in self.fields}
        positions, owners = [], []
        for f in self.fields:
            offs = [c.offset for c in classes if c.field == f]
            pts = sorted(
                tuple(o + P * m for o, P, m in zip(off, period, mm))
                for off in offs
                for mm in itertools.product(*[range(n // P) for P in period])
            )
            for x in pts:
                self.index[f][x] = len(positions)
                positions.append(x)
                owners.append(f)
        self.positions = np.array(positions, dtype=int).reshape(-1, dim)
        self.field_of = np.array(owners)
        self.size = len(positions)

    @classmethod
    def for_stencils(cls, stencils: StencilSet, n: int) -> "Window":
        return cls(n, stencils.dim, stencils.classes, stencils.period)

    def locate(self, fieldname: str, pos: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Window index and period-crossing vector ``q`` of global positions."""
        pos = np.asarray(pos, dtype=int).reshape(-1, self.dim)
        q = np.floor_divide(pos, self.n)
        w = pos - q * self.n
        idx = self.index[fieldname][tuple(w.T)]
        if np.any(idx < 0):
            raise ValueError(f"positions {pos[idx < 0][:3]} carry no {fieldname!r} dof")
        return idx, q

    def class_positions(self, cls: DofClass, period) -> Tuple[np.ndarray, np.ndarray]:
        sel = (self.field_of == cls.field) & np.all(
            self.positions % np.asarray(period) == np.asarray(cls.offset), axis=1)
        return np.nonzero(sel)[0], self.positions[sel]


@dataclass(frozen=True)
class Frequency:
    """Phase per window period, ``phi = theta0 * n * unit`` in ``(-pi, pi]^d``."""

    phase: Tuple[float, ...]

    def __post_init__(self):
        for ph in self.phase:
            if not -math.pi < ph <= math.pi:
                raise ValueError(f"phase {ph} outside (-pi, pi]")

    def theta(self, n: int, unit: float) -> Tuple[float, ...]:
        return tuple(ph / (n * unit) for ph in self.phase)


def frequency_grid(samples: int, dim: int) -> np.ndarray:
    """Midpoint grid of phases; it never contains phase 0 when ``samples`` is even."""
    pts = -math.pi + (np.arange(samples) + 0.5) * 2 * math.pi / samples
    return np.array(list(itertools.product(pts, repeat=dim)))


# ---------------------------------------------------------------------------
# Bloch matrices
# ---------------------------------------------------------------------------

class BlochMatrix:
    """``sum_q exp(i phi.q) M_q`` with real ``M_q``."""

    def __init__(self, shape, terms: Dict[Tuple[int, ...], np.ndarray]):
        self.shape = tuple(shape)
        self.terms = terms

    @classmethod
    def from_couplings(cls, shape, rows, cols, q, vals) -> "BlochMatrix":
        rows, cols, vals = np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float)
        q = np.asarray(q, dtype=int).reshape(len(rows), -1)
        terms = {}
        if len(rows):
            keys, inv = np.unique(q, axis=0, return_inverse=True)
            inv = np.ravel(inv)
            for t, key in enumerate(keys):
                sel = inv == t
                M = np.zeros(shape)
                np.add.at(M, (rows[sel], cols[sel]), vals[sel])
                terms[tuple(int(x) for x in key)] = M
        return cls(shape, terms)

    def __call__(self, phase) -> np.ndarray:
        phase = np.asarray(phase, dtype=float)
        out = np.zeros(self.shape, dtype=complex)
        for q, M in self.terms.items():
            out += np.exp(1j * float(np.dot(phase, q))) * M
        return out

    def __add__(self, other: "BlochMatrix") -> "BlochMatrix":
        terms = {q: M.copy() for q, M in self.terms.items()}
        for q, M in other.terms.items():
            terms[q] = terms[q] + M if q in terms else M.copy()
        return BlochMatrix(self.shape, terms)

    def scaled(self, c: float) -> "BlochMatrix":
        return BlochMatrix(self.shape, {q: c * M for q, M in self.terms.items()})


@dataclass
class WindowSymbol:
    matrix: np.ndarray
    freq: Frequency
    role: str

    def spectral_radius(self) -> float:
        return spectral_radius(self.matrix)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def coarse_is_singular(Ac: np.ndarray, sweeps: int = 10) -> bool:
    """Smallest/largest singular value test after row/column equilibration.

    Equilibration keeps well-posed saddle-point symbols, whose fields live on
    very different scales, from being mistaken for singular ones.
    """
    B = np.abs(Ac)
    r = np.ones(B.shape[0])
    c = np.ones(B.shape[1])
    for _ in range(sweeps):
        S = B * r[:, None] * c[None, :]
        rm, cm = S.max(axis=1), S.max(axis=0)
        if np.any(rm == 0) or np.any(cm == 0):
            return True
        r /= np.sqrt(rm)
        c /= np.sqrt(cm)
    sv = np.linalg.svd(Ac * r[:, None] * c[None, :], compute_uv=False)
    return bool(sv[-1] < SKIP_RATIO * sv[0])


def operator_bloch(stencils: StencilSet, win: Window) -> BlochMatrix:
    rows, cols, qs, vals = [], [], [], []
    for (rc, cc, s), v in stencils.entries.items():
        ridx, rpos = win.class_positions(rc, stencils.period)
        cidx, q = win.locate(cc.field, rpos + np.asarray(s))
        rows.append(ridx)
        cols.append(cidx)
        qs.append(q)
        vals.append(np.full(len(ridx), v))
    return BlochMatrix.from_couplings((win.size, win.size), np.concatenate(rows),
                                      np.concatenate(cols), np.concatenate(qs),
                                      np.concatenate(vals))


def prolongation_bloch(stencils: StencilSet, win: Window, cwin: Window) -> BlochMatrix:
    """Canonical embedding, rows on the fine window and columns on the coarse window."""
    cperiod = tuple(2 * P for P in stencils.period)
    rows, cols, qs, vals = [], [], [], []
    for (cc, fc, t), v in prolongation_stencil(stencils.disc).items():
        cidx, cpos = cwin.class_positions(cc, cperiod)
        ridx, q = win.locate(fc.field, cpos + np.asarray(t))
        rows.append(ridx)
        cols.append(cidx)
        qs.append(-q)
        vals.append(np.full(len(ridx), v))
    return BlochMatrix.from_couplings((win.size, cwin.size), np.concatenate(rows),
                                      np.concatenate(cols), np.concatenate(qs),
                                      np.concatenate(vals))


def block_anchors(pattern: BlockPattern, n: int) -> List[Tuple[int, ...]]:
    if any(n % s for s in pattern.stride):
        raise ValueError(f"window size {n} is not a multiple of the block stride {pattern.stride}")
    ranges = [range(a % s, n, s) for a, s in zip(pattern.anchor, pattern.stride)]
    return list(itertools.product(*ranges))


def smoother_bloch(pattern: BlockPattern, stencils: StencilSet, win: Window,
                   diag: np.ndarray) -> BlochMatrix:
    """``C = sum_i Lift_i D_i A_i^{-1} Restr_i`` over the blocks anchored in the window."""
    rows, cols, qs, vals = [], [], [], []
    ginv_cache: Dict = {}
    for anchor in block_anchors(pattern, win.n):
        key = tuple(a % P for a, P in zip(anchor, stencils.period))
        if key not in ginv_cache:
            Ai = local_matrix(pattern, stencils, anchor)
            ginv_cache[key] = diag[:, None] * np.linalg.inv(Ai)
        G = ginv_cache[key]
        idx = np.empty(pattern.size, dtype=int)
        q = np.empty((pattern.size, win.dim), dtype=int)
        for l, (f, r) in enumerate(pattern.footprint):
            i, ql = win.locate(f, np.add(anchor, r))
            idx[l], q[l] = i[0], ql[0]
        m = pattern.size
        rows.append(np.repeat(idx, m))
        cols.append(np.tile(idx, m))
        qs.append((q[None, :, :] - q[:, None, :]).reshape(-1, win.dim))
        vals.append(G.ravel())
    return BlochMatrix.from_couplings((win.size, win.size), np.concatenate(rows),
                                      np.concatenate(cols), np.concatenate(qs),
                                      np.concatenate(vals))


# ---------------------------------------------------------------------------
# Public symbol constructors
# ---------------------------------------------------------------------------

def _phase(f) -> np.ndarray:
    return np.asarray(f.phase if isinstance(f, Frequency) else f, dtype=float)


def _freq(f) -> Frequency:
    return f if isinstance(f, Frequency) else Frequency(tuple(float(x) for x in np.atleast_1d(f)))


def operator_symbol(stencils: StencilSet, win: Window, f) -> WindowSymbol:
    return WindowSymbol(operator_bloch(stencils, win)(_phase(f)), _freq(f), "operator")


def smoother_symbol(stencils: StencilSet, blocks: BlockPattern, rule: WeightRule,
                    win: Window, f) -> WindowSymbol:
    """``S = I - C A`` for one additive or restricted additive sweep."""
    ph = _phase(f)
    C = smoother_bloch(blocks, stencils, win, rule.diagonal(blocks))(ph)
    A = operator_bloch(stencils, win)(ph)
    return WindowSymbol(np.eye(win.size) - C @ A, _freq(f), "smoother")


def transfer_symbols(stencils: StencilSet, win: Window, f) -> Tuple[WindowSymbol, WindowSymbol]:
    coarse = assemble_stencils(stencils.disc.coarsen())
    cwin = Window.for_stencils(coarse, win.n)
    P = prolongation_bloch(stencils, win, cwin)(_phase(f))
    fr = _freq(f)
    return WindowSymbol(P, fr, "prolongation"), WindowSymbol(P.conj().T, fr, "restriction")


# ---------------------------------------------------------------------------
# Two-grid analysis
# ---------------------------------------------------------------------------

@dataclass
class TwoGridConfig:
    """Everything that defines one two-grid LFA run."""

    stencils: StencilSet
    blocks: BlockPattern
    rule: WeightRule = field(default_factory=WeightRule)
    nu1: int = 1
    nu2: int = 0
    n: Optional[int] = None
    samples: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n is None:
            self.n = pattern_window_size(self.blocks, self.stencils)
        if self.samples is None:
            self.samples = default_samples(self)

    @cached_property
    def model(self) -> "TwoGridModel":
        return TwoGridModel(self)

    @property
    def nu(self) -> int:
        return self.nu1 + self.nu2

    def replace(self, **kw) -> "TwoGridConfig":
        """Copy with new smoothing counts or weights, sharing the cached model where valid."""
        args = dict(stencils=self.stencils, blocks=self.blocks, rule=self.rule, nu1=self.nu1,
                    nu2=self.nu2, n=self.n, samples=self.samples, meta=dict(self.meta))
        args.update(kw)
        new = TwoGridConfig(**args)
        same_parts = (new.n == self.n and new.rule.variant == self.rule.variant
                      and isinstance(new.rule.weights, dict) == isinstance(self.rule.weights, dict))
        if same_parts and "model" in self.__dict__:
            new.__dict__["model"] = self.model
        return new

    def describe(self) -> dict:
        return {
            "discretization": self.stencils.disc.describe() if self.stencils.disc else None,
            "blocks": self.blocks.to_dict(),
            "smoother": self.rule.to_dict(),
            "nu1": self.nu1, "nu2": self.nu2, "window": self.n, "samples_per_dim": self.samples,
            **self.meta,
        }


def default_samples(cfg: TwoGridConfig) -> int:
    if cfg.blocks.kind == "biot-pressure":
        return 8
    return 32 if cfg.stencils.dim == 1 else 16


class TwoGridModel:
    """Precomputed Bloch matrices of one configuration, evaluated per frequency."""

    def __init__(self, cfg: TwoGridConfig):
        st = cfg.stencils
        self.cfg = cfg
        self.coarse = assemble_stencils(st.disc.coarsen())
        self.win = Window.for_stencils(st, cfg.n)
        self.cwin = Window.for_stencils(self.coarse, cfg.n)
        self.A = operator_bloch(st, self.win)
        self.Ac = operator_bloch(self.coarse, self.cwin)
        self.P = prolongation_bloch(st, self.win, self.cwin)
        self.parts = {role: smoother_bloch(cfg.blocks, st, self.win, d)
                      for role, d in cfg.rule.role_parts(cfg.blocks).items()}
        self._cache: Dict[Tuple[float, ...], dict] = {}

    def fixed(self, phase) -> dict:
        """Weight-independent matrices at one phase (cached)."""
        key = tuple(np.round(np.asarray(phase, dtype=float), 15))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ph = np.asarray(phase, dtype=float)
        A, Ac, P = self.A(ph), self.Ac(ph), self.P(ph)
        singular = coarse_is_singular(Ac)
        cgc = None
        if not singular:
            cgc = np.eye(self.win.size) - P @ np.linalg.solve(Ac, P.conj().T @ A)
        out = {"A": A, "Ac": Ac, "P": P, "cgc": cgc, "singular": singular,
               "parts": {r: B(ph) for r, B in self.parts.items()}}
        if len(self._cache) < 4096:
            self._cache[key] = out
        return out

    def smoother(self, phase, weights: Optional[Dict[str, float]] = None) -> np.ndarray:
        fx = self.fixed(phase)
        weights = self.cfg.rule.role_weights() if weights is None else weights
        C = sum(weights[r] * M for r, M in fx["parts"].items())
        return np.eye(self.win.size) - C @ fx["A"]

    def two_grid(self, phase, weights=None, nu1=None, nu2=None) -> np.ndarray:
        fx = self.fixed(phase)
        if fx["singular"]:
            raise CoarseSingularityError(f"coarse symbol singular at phase {tuple(phase)}")
        nu1 = self.cfg.nu1 if nu1 is None else nu1
        nu2 = self.cfg.nu2 if nu2 is None else nu2
        S = self.smoother(phase, weights)
        return (np.linalg.matrix_power(S, nu2) @ fx["cgc"]
                @ np.linalg.matrix_power(S, nu1))

    def radii(self, phase, weights=None, nus: Iterable[int] = (1,)) -> Dict[int, float]:
        """Spectral radius of the two-grid symbol for several total smoothing counts.

        The spectrum of ``S^a K S^b`` equals that of ``K S^(a+b)``.
        """
        fx = self.fixed(phase)
        if fx["singular"]:
            raise CoarseSingularityError(f"coarse symbol singular at phase {tuple(phase)}")
        S = self.smoother(phase, weights)
        out = {}
        M = fx["cgc"]
        done = 0
        for nu in sorted(set(nus)):
            while done < nu:
                M = M @ S
                done += 1
            out[nu] = spectral_radius(M)
        return out


def two_grid_symbol(cfg: TwoGridConfig, f) -> WindowSymbol:
    """``S^nu2 (I - P Ac^-1 R A) S^nu1`` at one frequency."""
    return WindowSymbol(cfg.model.two_grid(_phase(f)), _freq(f), "two-grid")


@dataclass
class FactorReport:
    """Result of a frequency sweep."""

    rho_2g: float
    per_freq: List[Tuple[Tuple[float, ...], float]]
    skipped: List[Tuple[float, ...]]
    config: dict
    window: int
    unit: float

    def to_dict(self) -> dict:
        return {
            "rho_2g": self.rho_2g,
            "per_freq": [{"phase": list(ph), "theta0": [x / (self.window * self.unit) for x in ph],
                          "rho": r} for ph, r in self.per_freq],
            "skipped": [list(ph) for ph in self.skipped],
            "config": self.config,
        }

    def csv_rows(self) -> List[List[str]]:
        dim = len(self.per_freq[0][0]) if self.per_freq else 1
        head = [f"phase{j}" for j in range(dim)] + [f"theta0_{j}" for j in range(dim)] + ["rho"]
        rows = [head]
        for ph, r in self.per_freq:
            th = [x / (self.window * self.unit) for x in ph]
            rows.append([f"{x:.12g}" for x in ph] + [f"{x:.12g}" for x in th] + [f"{r:.12g}"])
        return rows


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("LFA_SCHWARZ_THREADS", "1")))
    except ValueError:
        return 1


def sweep(cfg: TwoGridConfig, samples: int, weights=None, nus: Iterable[int] = None):
    """Per-frequency radii over the midpoint grid for each requested total ``nu``.

    Only phases with positive first component are evaluated; the others
    follow from ``M(-phi) = conj(M(phi))``.
    """
    nus = [cfg.nu] if nus is None else list(nus)
    grid = frequency_grid(samples, cfg.stencils.dim)
    model = cfg.model
    half = [i for i, ph in enumerate(grid) if ph[0] > 0]

    def one(i):
        try:
            return model.radii(grid[i], weights, nus)
        except CoarseSingularityError:
            return None

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(one, half))
    else:
        res = [one(i) for i in half]
    by_index = dict(zip(half, res))
    values = {}
    for i, ph in enumerate(grid):
        if i in by_index:
            values[i] = by_index[i]
        else:
            mirror = int(np.argmin(np.abs(grid + ph).sum(axis=1)))
            values[i] = by_index[mirror]
    return grid, values


def asymptotic_factor(cfg: TwoGridConfig, samples_per_dim: Optional[int] = None,
                      weights=None) -> FactorReport:
    """Maximum two-grid spectral radius over the sampled frequencies."""
    samples = samples_per_dim or cfg.samples
    if samples < 8:
        raise ValueError(f"samples_per_dim must be >= 8, got {samples}")
    grid, values = sweep(cfg, samples, weights, [cfg.nu])
    per, skipped = [], []
    for i, ph in enumerate(grid):
        ph_t = tuple(float(x) for x in ph)
        if values[i] is None:
            skipped.append(ph_t)
        else:
            per.append((ph_t, values[i][cfg.nu]))
    if len(skipped) > 0.01 * len(grid):
        warnings.warn(f"{len(skipped)} of {len(grid)} frequencies skipped: coarse symbol singular")
    rho = max(r for _, r in per)
    unit = cfg.stencils.disc.h / cfg.stencils.period[0] if cfg.stencils.disc else 1.0
    meta = cfg.describe()
    meta["samples_per_dim"] = samples
    return FactorReport(rho, per, skipped, meta, cfg.n, unit)


# ---------------------------------------------------------------------------
# Convenience constructors for the model problems
# ---------------------------------------------------------------------------

def poisson_config(p: int, dim: int, *, blocks="element", variant: str = "as",
                   weights="natural", nu1: int = 1, nu2: int = 0, n: Optional[int] = None,
                   samples: Optional[int] = None, h: float = 1.0) -> TwoGridConfig:
    """Two-grid configuration for Qp Poisson with element blocks or ``(k, ov)`` intervals."""
    st = assemble_poisson_stencils(GridSpec(dim, h, p))
    if blocks == "element":
        pattern = make_element_blocks(p, dim)
    else:
        if dim != 1:
            raise ValueError("interval blocks are one-dimensional")
        pattern = make_1d_blocks(*blocks)
    return TwoGridConfig(st, pattern, WeightRule(variant, weights), nu1, nu2, n, samples,
                         meta={"problem": f"poisson{dim}d"})


def biot_config(params: BiotParams, h: float = 1 / 64, *, variant: str = "as",
                weights="natural", nu1: int = 1, nu2: int = 0, n: int = BIOT_WINDOW,
                samples: Optional[int] = None) -> TwoGridConfig:
    st = assemble_biot_stencils(params, h)
    return TwoGridConfig(st, make_biot_pressure_blocks(), WeightRule(variant, weights), nu1, nu2,
                         n, samples, meta={"problem": "biot", "h": h})


PAPER_BIOT_WEIGHTS = {"u_vertex": 0.09, "u_edge": 0.09, "u_cell": 0.22, "p": 1.02}


def asymptotic_factors(cfg: TwoGridConfig, nus: Iterable[int], samples_per_dim: Optional[int] = None,
                       weights=None) -> Dict[int, float]:
    """``rho_2g`` for several total smoothing counts from one frequency sweep."""
    nus = sorted(set(nus))
    _, values = sweep(cfg, samples_per_dim or cfg.samples, weights, nus)
    kept = [v for v in values.values() if v is not None]
    if not kept:
        raise CoarseSingularityError("every sampled frequency was skipped")
    return {nu: max(v[nu] for v in kept) for nu in nus}
