"""Geometric multigrid with Schwarz smoothers on finite uniform grids.

Two operator representations are used.  Scalar Poisson problems with
Dirichlet boundaries keep only the 1D stiffness and mass factors
(``A = K (x) M + M (x) K`` in 2D) and apply operator and transfers through
them, which keeps 128^2 elements of degree 8 in memory.  Biot and periodic
problems are assembled as sparse matrices element by element.

Block corrections are computed in groups of blocks that share the same
local matrix: one gather, one dense product with the group's weighted
inverse, and one ``np.bincount`` scatter per group.  The scatter sums in a
fixed order, so a sweep does not depend on block enumeration order beyond
rounding.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .discretization import (
    BiotParams, Discretization, GridSpec, biot_discretization, poisson_discretization,
    prolongation_stencil, qp_element_matrix, qp_mass_matrix,
)
from .schwarz import (
    BlockPattern, WeightRule, check_invertible, make_biot_pressure_blocks, make_element_blocks,
    make_1d_blocks,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    """The iteration grows persistently."""

    def __init__(self, msg, ratios=None):
        super().__init__(msg)
        self.ratios = ratios


class NonConvergenceError(SolverError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class CycleSpec:
    kind: str = "V"
    nu1: int = 1
    nu2: int = 0

    def __post_init__(self):
        if self.kind not in ("V", "W"):
            raise ValueError(f"cycle kind must be 'V' or 'W', got {self.kind!r}")
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 < 1:
            raise ValueError(f"need nu1, nu2 >= 0 and nu1 + nu2 >= 1, got {self.nu1}, {self.nu2}")

    @property
    def gamma(self) -> int:
        return 1 if self.kind == "V" else 2

    def label(self) -> str:
        return f"{self.kind}({self.nu1},{self.nu2})"


# ---------------------------------------------------------------------------
# Grids and dof numbering
# ---------------------------------------------------------------------------

def dirichlet_all(fieldname, pos, extent):
    return np.any((pos == 0) | (pos == extent), axis=-1)


def biot_boundary(fieldname, pos, extent):
    """Displacements fixed on left, right and bottom; pressure fixed on top."""
    if fieldname == "p":
        return pos[..., 1] == extent
    x, y = pos[..., 0], pos[..., 1]
    return (x == 0) | (x == extent) | (y == 0)


class FiniteGrid:
    """Dofs of ``disc`` on ``elements^d`` elements, numbered field by field.

    Positions run over ``0..extent`` (or ``0..extent-1`` when periodic) in
    lattice units; fixed dofs and positions without a node map to -1.
    """

    def __init__(self, disc: Discretization, elements: int, periodic: bool = False,
                 fixed: Optional[Callable] = None):
        if elements < 1:
            raise SolverError(f"need at least one element, got {elements}")
        self.disc = disc
        self.dim = disc.dim
        self.elements = elements
        self.periodic = periodic
        self.extent = elements * disc.span
        size = self.extent if periodic else self.extent + 1
        self.shape = (size,) * self.dim
        self.index: Dict[str, np.ndarray] = {}
        count = 0
        for name in disc.field_names:
            sp_ = disc.spacing(name)
            grids = np.meshgrid(*[np.arange(size)] * self.dim, indexing="ij")
            pos = np.stack(grids, axis=-1)
            on = np.all(pos % sp_ == 0, axis=-1)
            if fixed is not None and not periodic:
                on &= ~fixed(name, pos, self.extent)
            idx = -np.ones(self.shape, dtype=np.int64)
            k = int(on.sum())
            idx[on] = np.arange(count, count + k)
            count += k
            self.index[name] = idx
        self.ndofs = count

    def locate(self, fieldname: str, pos: np.ndarray) -> np.ndarray:
        """Dof indices of integer positions (last axis = dim); -1 where absent."""
        pos = np.asarray(pos)
        if self.periodic:
            return self.index[fieldname][tuple(np.moveaxis(pos % self.extent, -1, 0))]
        inside = np.all((pos >= 0) & (pos <= self.extent), axis=-1)
        safe = np.where(inside[..., None], pos, 0)
        out = self.index[fieldname][tuple(np.moveaxis(safe, -1, 0))]
        return np.where(inside, out, -1)

    def positions(self, fieldname: str) -> np.ndarray:
        idx = self.index[fieldname]
        sel = idx >= 0
        pos = np.argwhere(sel)
        return pos[np.argsort(idx[sel])]


def element_anchors(elements: int, dim: int, span: int) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(elements) * span] * dim, indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, dim)


def assemble_matrix(grid: FiniteGrid, element_matrix: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Element-by-element sparse assembly of the finite-grid operator."""
    disc = grid.disc
    K = disc.element_matrix if element_matrix is None else element_matrix
    anchors = element_anchors(grid.elements, grid.dim, disc.span)
    loc = disc.local_dofs()
    cols = np.empty((len(anchors), len(loc)), dtype=np.int64)
    for j, (name, off) in enumerate(loc):
        cols[:, j] = grid.locate(name, anchors + np.asarray(off))
    ii = np.repeat(cols, len(loc), axis=1).ravel()
    jj = np.tile(cols, (1, len(loc))).ravel()
    vv = np.broadcast_to(K.ravel(), (len(anchors), K.size)).ravel()
    keep = (ii >= 0) & (jj >= 0) & (vv != 0)
    A = sp.coo_matrix((vv[keep], (ii[keep], jj[keep])), shape=(grid.ndofs, grid.ndofs))
    return A.tocsr()


def assemble_prolongation(fine: FiniteGrid, coarse: FiniteGrid) -> sp.csr_matrix:
    """Canonical embedding of the coarse space, rows on fine dofs."""
    rows, cols, vals = [], [], []
    cspan = 2 * fine.disc.span
    for (cc, fc, t), v in prolongation_stencil(fine.disc).items():
        cpos_c = coarse.positions(cc.field)  # in coarse lattice units
        cpos = 2 * cpos_c
        sel = np.all(cpos % cspan == np.asarray(cc.offset), axis=1)
        cidx = coarse.locate(cc.field, cpos_c[sel])
        fidx = fine.locate(fc.field, cpos[sel] + np.asarray(t))
        keep = fidx >= 0
        rows.append(fidx[keep])
        cols.append(cidx[keep])
        vals.append(np.full(int(keep.sum()), v))
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(fine.ndofs, coarse.ndofs))
    return P.tocsr()


# ---------------------------------------------------------------------------
# Operators and transfers
# ---------------------------------------------------------------------------

class SparseOperator:
    def __init__(self, A: sp.spmatrix):
        self.A = sp.csr_matrix(A)
        self.shape = self.A.shape

    def matvec(self, x):
        return self.A @ x

    def submatrices(self, idx: np.ndarray) -> np.ndarray:
        """Local matrices for a batch of blocks; ``idx`` uses ``n`` as padding."""
        n = self.shape[0]
        out = np.zeros(idx.shape + (idx.shape[1],))
        for b, row in enumerate(idx):
            v = row < n
            if v.any():
                sub = self.A[row[v]][:, row[v]].toarray()
                out[b][np.ix_(v, v)] = sub
        return out

    def dense(self):
        return self.A.toarray()

    def galerkin(self, transfer: "SparseTransfer") -> "SparseOperator":
        P = transfer.P
        return SparseOperator((P.T @ self.A @ P).tocsr())


class SparseTransfer:
    def __init__(self, P):
        self.P = sp.csr_matrix(P)
        self.PT = self.P.T.tocsr()

    def prolong(self, xc):
        return self.P @ xc

    def restrict(self, r):
        return self.PT @ r


def _apply2(A, B, X):
    """``A @ X @ B.T`` for sparse ``A``, ``B`` and dense ``X``."""
    return np.asarray(A @ np.asarray(B @ X.T).T)


class TensorOperator:
    """``K`` in 1D, ``K (x) M + M (x) K`` in 2D, from 1D Dirichlet factors."""

    def __init__(self, K1: sp.spmatrix, M1: sp.spmatrix, dim: int):
        self.K1, self.M1, self.dim = sp.csr_matrix(K1), sp.csr_matrix(M1), dim
        self.n1 = K1.shape[0]
        self.shape = (self.n1 ** dim,) * 2
        self._Kd = self.K1.toarray()
        self._Md = self.M1.toarray()

    def matvec(self, x):
        if self.dim == 1:
            return self.K1 @ x
        X = x.reshape(self.n1, self.n1)
        return (_apply2(self.K1, self.M1, X) + _apply2(self.M1, self.K1, X)).ravel()

    def submatrices(self, idx: np.ndarray) -> np.ndarray:
        n = self.shape[0]
        valid = idx < n
        safe = np.where(valid, idx, 0)
        if self.dim == 1:
            out = self._Kd[safe[:, :, None], safe[:, None, :]]
        else:
            i1, i2 = np.divmod(safe, self.n1)
            a, b = (i1[:, :, None], i1[:, None, :]), (i2[:, :, None], i2[:, None, :])
            out = self._Kd[a] * self._Md[b] + self._Md[a] * self._Kd[b]
        return out * (valid[:, :, None] & valid[:, None, :])

    def dense(self):
        if self.dim == 1:
            return self._Kd.copy()
        return np.kron(self._Kd, self._Md) + np.kron(self._Md, self._Kd)

    def galerkin(self, transfer: "TensorTransfer") -> "TensorOperator":
        P = transfer.P1
        return TensorOperator(P.T @ self.K1 @ P, P.T @ self.M1 @ P, self.dim)


class TensorTransfer:
    def __init__(self, P1, dim: int):
        self.P1 = sp.csr_matrix(P1)
        self.P1T = self.P1.T.tocsr()
        self.dim = dim
        self.nf, self.nc = P1.shape

    def prolong(self, xc):
        if self.dim == 1:
            return self.P1 @ xc
        return _apply2(self.P1, self.P1, xc.reshape(self.nc, self.nc)).ravel()

    def restrict(self, r):
        if self.dim == 1:
            return self.P1T @ r
        return _apply2(self.P1T, self.P1T, r.reshape(self.nf, self.nf)).ravel()

    @property
    def P(self):
        return self.P1 if self.dim == 1 else sp.kron(self.P1, self.P1).tocsr()


def poisson_factors(p: int, elements: int, h: float):
    """1D Dirichlet stiffness and mass matrices of degree ``p``."""
    disc1 = poisson_discretization(GridSpec(1, h, p))
    grid1 = FiniteGrid(disc1, elements, fixed=dirichlet_all)
    K1 = assemble_matrix(grid1, qp_element_matrix(p, 1, h))
    M1 = assemble_matrix(grid1, qp_mass_matrix(p, 1, h))
    return K1, M1, grid1


# ---------------------------------------------------------------------------
# Schwarz smoother on a finite grid
# ---------------------------------------------------------------------------

def enumerate_blocks(grid: FiniteGrid, pattern: BlockPattern) -> np.ndarray:
    """Footprint dof indices of every block translate touching a free dof.

    Returns an ``(nblocks, m)`` array with ``grid.ndofs`` marking entries
    that fall on fixed or absent dofs (truncation).
    """
    d = grid.dim
    lo = [min(r[k] for _, r in pattern.footprint) for k in range(d)]
    hi = [max(r[k] for _, r in pattern.footprint) for k in range(d)]
    ranges = []
    for k in range(d):
        s, a = pattern.stride[k], pattern.anchor[k]
        if grid.periodic:
            first = a % s
            ranges.append(np.arange(first, grid.extent, s))
        else:
            start = a + s * int(np.floor((0 - hi[k] - a) / s))
            stop = grid.extent - lo[k]
            ranges.append(np.arange(start, stop + 1, s))
    anchors = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
    idx = np.empty((len(anchors), pattern.size), dtype=np.int64)
    for j, (name, r) in enumerate(pattern.footprint):
        idx[:, j] = grid.locate(name, anchors + np.asarray(r))
    idx[idx < 0] = grid.ndofs
    keep = np.any(idx < grid.ndofs, axis=1)
    return idx[keep]


@dataclass
class BlockGroup:
    blocks: np.ndarray  # (b, m) dof indices, padding = ndofs
    weighted_inverse: np.ndarray  # (m, m): D A_i^{-1}, zero on padded entries


class BlockSmoother:
    """Additive or restricted additive Schwarz sweep on a finite grid."""

    def __init__(self, op, grid: FiniteGrid, pattern: BlockPattern, rule: WeightRule,
                 chunk: int = 512):
        self.op = op
        self.n = grid.ndofs
        self.pattern = pattern
        self.rule = rule
        idx = enumerate_blocks(grid, pattern)
        self.nblocks = len(idx)
        diag = rule.diagonal(pattern)
        groups: Dict[bytes, list] = {}
        reps: Dict[bytes, np.ndarray] = {}
        for start in range(0, len(idx), chunk):
            part = idx[start:start + chunk]
            mats = op.submatrices(part)
            for b in range(len(part)):
                valid = part[b] < self.n
                key = hashlib.blake2b(valid.tobytes() + mats[b].tobytes(), digest_size=16).digest()
                if key not in groups:
                    groups[key] = []
                    reps[key] = (valid, mats[b])
                groups[key].append(start + b)
        self.groups: List[BlockGroup] = []
        for key, members in groups.items():
            valid, Ai = reps[key]
            sub = Ai[np.ix_(valid, valid)]
            check_invertible(sub, anchor=tuple(idx[members[0]][:3]))
            G = np.zeros_like(Ai)
            G[np.ix_(valid, valid)] = diag[valid][:, None] * np.linalg.inv(sub)
            self.groups.append(BlockGroup(idx[members], G))
        log.debug("smoother: %d blocks in %d groups", self.nblocks, len(self.groups))

    def correction(self, r: np.ndarray) -> np.ndarray:
        """``C r`` with ``C = sum_i Lift_i D_i A_i^{-1} V_i``."""
        rp = np.append(r, 0.0)
        out = np.zeros(self.n + 1)
        for g in self.groups:
            local = rp[g.blocks] @ g.weighted_inverse.T
            out += np.bincount(g.blocks.ravel(), weights=local.ravel(), minlength=self.n + 1)
        return out[:self.n]

    def sweep(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return x + self.correction(b - self.op.matvec(x))


def apply_schwarz(level: "Level", x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One sweep of the level's smoother: ``x + C (b - A x)``."""
    return level.smoother.sweep(x, b)


# ---------------------------------------------------------------------------
# Hierarchy and cycles
# ---------------------------------------------------------------------------

@dataclass
class Level:
    grid: FiniteGrid
    op: object
    smoother: Optional[BlockSmoother] = None
    transfer: Optional[object] = None  # from the next coarser level into this one


@dataclass
class Hierarchy:
    levels: List[Level]
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        Ac = self.levels[-1].op.dense()
        self._lu = scipy.linalg.lu_factor(Ac) if Ac.size else None

    @property
    def finest(self) -> Level:
        return self.levels[0]

    def coarse_solve(self, b):
        if self._lu is None:
            return b.copy()
        return scipy.linalg.lu_solve(self._lu, b)

    def cycle(self, x: np.ndarray, b: np.ndarray, spec: CycleSpec, level: int = 0) -> np.ndarray:
        if level == len(self.levels) - 1:
            return self.coarse_solve(b)
        lev = self.levels[level]
        for _ in range(spec.nu1):
            x = lev.smoother.sweep(x, b)
        r = b - lev.op.matvec(x)
        coarse = self.levels[level + 1]
        rc = coarse_transfer(self, level).restrict(r)
        ec = np.zeros_like(rc)
        for _ in range(spec.gamma if level + 1 < len(self.levels) - 1 else 1):
            ec = self.cycle(ec, rc, spec, level + 1)
        x = x + coarse_transfer(self, level).prolong(ec)
        for _ in range(spec.nu2):
            x = lev.smoother.sweep(x, b)
        return x

    def residual(self, x, b):
        return b - self.finest.op.matvec(x)


def coarse_transfer(hier: Hierarchy, level: int):
    return hier.levels[level].transfer


def build_hierarchy(disc: Discretization, elements: int, pattern: BlockPattern,
                    rule: WeightRule, depth: Optional[int] = None, boundary: str = "dirichlet",
                    coarsest: int = 2) -> Hierarchy:
    """Nested grids with ``elements, elements/2, ...`` elements per direction.

    ``depth`` is the number of coarse levels (``None`` goes down to
    ``coarsest`` elements).  ``boundary`` is ``"dirichlet"``, ``"biot"`` or
    ``"periodic"``.  Coarse operators are rediscretized on each grid.
    """
    sizes = [elements]
    while (depth is None and sizes[-1] > coarsest) or (depth is not None and len(sizes) <= depth):
        if sizes[-1] % 2:
            raise SolverError(f"grid with {sizes[-1]} elements cannot be coarsened")
        sizes.append(sizes[-1] // 2)
        if sizes[-1] < 1:
            raise SolverError("too many levels requested")
    tensor = disc.kind == "poisson" and boundary == "dirichlet"
    fixed = {"dirichlet": dirichlet_all, "biot": biot_boundary, "periodic": None}[boundary]
    discs = [disc]
    for _ in sizes[1:]:
        discs.append(discs[-1].coarsen())
    grids, ops = [], []
    for D, N in zip(discs, sizes):
        # coarse levels reuse the fine lattice description at their own scale
        g = FiniteGrid(_rescaled(D, disc), N, periodic=(boundary == "periodic"), fixed=fixed)
        grids.append(g)
        if tensor:
            K1, M1, _ = poisson_factors(disc.poly_degree, N, D.h)
            ops.append(TensorOperator(K1, M1, disc.dim))
        else:
            ops.append(SparseOperator(assemble_matrix(g, D.element_matrix)))
    levels = []
    for i, (g, op) in enumerate(zip(grids, ops)):
        lev = Level(g, op)
        if i < len(sizes) - 1:
            lev.smoother = BlockSmoother(op, g, pattern, rule)
            if tensor:
                _, _, g1f = poisson_factors(disc.poly_degree, sizes[i], discs[i].h)
                _, _, g1c = poisson_factors(disc.poly_degree, sizes[i + 1], discs[i + 1].h)
                lev.transfer = TensorTransfer(assemble_prolongation(g1f, g1c), disc.dim)
            else:
                lev.transfer = SparseTransfer(assemble_prolongation(g, grids[i + 1]))
        levels.append(lev)
    desc = {"elements": sizes, "boundary": boundary, "blocks": pattern.to_dict(),
            "smoother": rule.to_dict(), "discretization": disc.describe()}
    return Hierarchy(levels, desc)


def _rescaled(D: Discretization, fine: Discretization) -> Discretization:
    """``D`` expressed on its own lattice (span of the fine discretization)."""
    return Discretization(D.kind, D.dim, D.h, fine.span, D.fields, D.element_matrix, D.params,
                          D.poly_degree)


def poisson_hierarchy(p: int, dim: int, elements: int, *, variant: str = "ras",
                      weights="natural", blocks="element", depth: Optional[int] = None,
                      coarsest: int = 2) -> Hierarchy:
    disc = poisson_discretization(GridSpec(dim, 1.0 / elements, p))
    pattern = make_element_blocks(p, dim) if blocks == "element" else make_1d_blocks(*blocks)
    return build_hierarchy(disc, elements, pattern, WeightRule(variant, weights), depth,
                           "dirichlet", coarsest)


def biot_hierarchy(params: BiotParams, elements: int = 64, *, variant: str = "as",
                   weights="natural", depth: Optional[int] = None, coarsest: int = 2) -> Hierarchy:
    disc = biot_discretization(params, 1.0 / elements)
    return build_hierarchy(disc, elements, make_biot_pressure_blocks(),
                           WeightRule(variant, weights), depth, "biot", coarsest)


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------

def measure_rho_h(hier: Hierarchy, cycle: CycleSpec, iterations: int = 80, seed: int = 0,
                  window: int = 10, transient: int = 20) -> float:
    """Asymptotic factor of ``cycle`` on ``A e = 0`` from a random start.

    The iterate is rescaled to unit residual after every cycle; the factor is
    the geometric mean of the last ``window`` residual ratios.  Everything
    before them (at least ``transient`` cycles) is discarded.
    """
    if iterations < transient + window:
        raise ValueError(f"need iterations >= transient + window ({transient + window})")
    rng = np.random.default_rng(seed)
    n = hier.finest.op.shape[0]
    b = np.zeros(n)
    x = rng.standard_normal(n)
    rn = np.linalg.norm(hier.residual(x, b))
    x /= rn
    ratios = []
    for _ in range(iterations):
        x = hier.cycle(x, b, cycle)
        rn = np.linalg.norm(hier.residual(x, b))
        ratios.append(rn)
        if rn == 0 or not np.isfinite(rn):
            break
        x /= rn
    tail = np.array(ratios[-window:])
    if len(ratios) >= transient + window and np.all(tail > 1.5):
        raise DivergenceError(f"{cycle.label()} diverges (ratios ~ {tail.mean():.3g})", ratios)
    if np.any(tail == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(tail))))


@dataclass
class SolveResult:
    x: np.ndarray
    history: List[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


def solve(hier: Hierarchy, b: np.ndarray, cycle: CycleSpec, tol: float = 1e-10,
          maxiter: int = 500, x0: Optional[np.ndarray] = None) -> SolveResult:
    """Iterate cycles in defect-correction form until ``|r_k| <= tol |r_0|``.

    Each cycle solves ``A e = r`` from a zero guess and the residual is updated
    as ``r -= A e``.  For a linear cycle this is the same iteration as cycling on
    ``x`` directly, but the residual is never recomputed as ``b - A x``: when
    fields differ by many orders of magnitude (Biot at small permeability) that
    difference cancels digits and stalls near 1e-10 relative accuracy.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = hier.residual(x, b)
    r0 = float(np.linalg.norm(r))
    hist = [r0]
    if r0 == 0:
        return SolveResult(x, hist, True)
    zero = np.zeros_like(b)
    while hist[-1] / r0 > tol and len(hist) <= maxiter:
        e = hier.cycle(zero, r, cycle)
        x += e
        r -= hier.finest.op.matvec(e)
        hist.append(float(np.linalg.norm(r)))
        if not np.isfinite(hist[-1]):
            break
    return SolveResult(x, hist, hist[-1] / r0 <= tol)


def count_iterations(hier: Hierarchy, cycle: CycleSpec, tol: float = 1e-10, seed: int = 0,
                     maxiter: int = 500) -> int:
    """Cycles needed to reduce a seeded random right-hand side's residual by ``tol``."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(hier.finest.op.shape[0])
    res = solve(hier, b, cycle, tol, maxiter)
    if not res.converged:
        raise NonConvergenceError(f"{cycle.label()} did not reach tol={tol:g} in {maxiter} cycles",
                                  res.history)
    return res.iterations


def write_history_csv(path, history: Sequence[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual_norm", "relative"])
        r0 = history[0] if history and history[0] else 1.0
        for k, r in enumerate(history):
            w.writerow([k, f"{r:.6e}", f"{r / r0:.6e}"])
