"""Finite-element stencils on infinite uniform grids.

Every discretization here lives on an integer *lattice*: one lattice unit is
the spacing between neighbouring nodes of the highest-degree field on the
fine grid (``h/p`` for Qp Poisson, ``h/2`` for the Q2-Q1 Biot pair).  An
element spans ``span`` lattice units in every direction.  A node of field
``f`` at lattice position ``x`` belongs to the DofClass ``(f, x mod span)``.

Coarse grids are described in the *fine* lattice: a coarsened
discretization has twice the span and twice the mesh size, so its nodes sit
on even lattice positions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

Offset = Tuple[int, ...]


class DiscretizationError(ValueError):
    """Raised for invalid grid or material parameters."""


# ---------------------------------------------------------------------------
# 1D Lagrange basis and quadrature
# ---------------------------------------------------------------------------

def lagrange_basis(q: int, x) -> Tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the equispaced Lagrange basis of degree q.

    The nodes are ``j/q`` for ``j = 0..q`` on the reference interval [0, 1].

    Returns
    -------
    vals, ders : ndarray, shape (q+1, len(x))
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nodes = np.arange(q + 1) / q
    vals = np.ones((q + 1, x.size))
    ders = np.zeros((q + 1, x.size))
    for j in range(q + 1):
        others = [m for m in range(q + 1) if m != j]
        denom = np.prod([nodes[j] - nodes[m] for m in others])
        for m in others:
            vals[j] *= x - nodes[m]
        vals[j] /= denom
        for m in others:
            term = np.ones(x.size)
            for l in others:
                if l != m:
                    term *= x - nodes[l]
            ders[j] += term
        ders[j] /= denom
    return vals, ders


def gauss_rule(npts: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    pts, wts = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (pts + 1.0), 0.5 * wts


class _TensorBasis:
    """Tensor-product Lagrange basis of one field evaluated at quadrature points."""

    def __init__(self, q: int, dim: int, qpts: np.ndarray):
        v1, d1 = lagrange_basis(q, qpts)
        npt = qpts.size
        nloc = (q + 1) ** dim
        # local node ordering: lexicographic with dimension 0 slowest
        self.vals = np.ones((nloc, npt ** dim))
        self.grads = np.ones((dim, nloc, npt ** dim))
        for a, multi in enumerate(itertools.product(range(q + 1), repeat=dim)):
            parts_v = [v1[multi[k]] for k in range(dim)]
            self.vals[a] = _outer(parts_v)
            for g in range(dim):
                parts = [d1[multi[k]] if k == g else v1[multi[k]] for k in range(dim)]
                self.grads[g, a] = _outer(parts)


def _outer(parts):
    out = parts[0]
    for p in parts[1:]:
        out = np.multiply.outer(out, p)
    return np.ravel(out)


def _tensor_weights(wts: np.ndarray, dim: int) -> np.ndarray:
    return _outer([wts] * dim)


# ---------------------------------------------------------------------------
# Parameter types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of Qp elements with mesh size ``mesh_size``."""

    dim: int
    mesh_size: float = 1.0
    poly_degree: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DiscretizationError(f"dim must be 1 or 2, got {self.dim}")
        if self.poly_degree < 1:
            raise DiscretizationError(f"poly_degree must be >= 1, got {self.poly_degree}")
        if not self.mesh_size > 0:
            raise DiscretizationError(f"mesh_size must be positive, got {self.mesh_size}")


@dataclass(frozen=True)
class BiotParams:
    """Material and time-step parameters of the two-field Biot system."""

    young_modulus: float = 3.0e4
    poisson_ratio: float = 0.2
    permeability: float = 1.0
    fluid_viscosity: float = 1.0
    biot_modulus_inverse: float = 0.0
    biot_willis: float = 1.0
    time_step: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.poisson_ratio < 0.5:
            raise DiscretizationError(
                f"poisson_ratio must lie in (0, 0.5), got {self.poisson_ratio}")
        if self.permeability < 0 or self.biot_modulus_inverse < 0:
            raise DiscretizationError("permeability and 1/M must be non-negative")
        if min(self.young_modulus, self.fluid_viscosity, self.time_step) <= 0:
            raise DiscretizationError("Young's modulus, fluid viscosity and time step must be positive")

    @property
    def lame(self) -> Tuple[float, float]:
        """Lame coefficients (lambda, mu)."""
        E, nu = self.young_modulus, self.poisson_ratio
        return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))

    def to_dict(self) -> dict:
        return {
            "E": self.young_modulus, "nu": self.poisson_ratio, "K": self.permeability,
            "mu_f": self.fluid_viscosity, "inv_M": self.biot_modulus_inverse,
            "alpha": self.biot_willis, "tau": self.time_step,
        }


@dataclass(frozen=True)
class DofClass:
    field: str
    offset: Offset


# ---------------------------------------------------------------------------
# Element matrices
# ---------------------------------------------------------------------------

def qp_element_matrix(p: int, d: int, h: float = 1.0, quad_points: Optional[int] = None) -> np.ndarray:
    """Element stiffness matrix of the Qp Lagrange basis on a cube of side h.

    Local nodes are ordered lexicographically with dimension 0 slowest.
    The default quadrature (p+1 Gauss points per direction) integrates the
    integrand exactly.
    """
    if p < 1:
        raise DiscretizationError(f"polynomial degree must be >= 1, got {p}")
    if d not in (1, 2):
        raise DiscretizationError(f"dimension must be 1 or 2, got {d}")
    qpts, qw = gauss_rule(quad_points or p + 1)
    basis = _TensorBasis(p, d, qpts)
    w = _tensor_weights(qw, d)
    K = sum((basis.grads[g] * w) @ basis.grads[g].T for g in range(d))
    return _symmetrized(K) * h ** (d - 2)


def qp_mass_matrix(p: int, d: int, h: float = 1.0, quad_points: Optional[int] = None) -> np.ndarray:
    qpts, qw = gauss_rule(quad_points or p + 1)
    basis = _TensorBasis(p, d, qpts)
    w = _tensor_weights(qw, d)
    return _symmetrized((basis.vals * w) @ basis.vals.T) * h ** d


def biot_element_matrix(params: BiotParams, h: float, quad_points: int = 3) -> np.ndarray:
    """Q2-Q1 element matrix of the symmetrized backward-Euler Biot system.

    Local dofs are ordered ``[u1 (9), u2 (9), p (4)]``; the block layout is
    ``[[A, B^T], [B, -C]]`` with ``B = alpha (div u, q)`` and
    ``C = tau K/mu_f (grad p, grad q) + (1/M) (p, q)``.
    """
    lam, mu = params.lame
    qpts, qw = gauss_rule(quad_points)
    w = _tensor_weights(qw, 2)
    q2 = _TensorBasis(2, 2, qpts)
    q1 = _TensorBasis(1, 2, qpts)
    dx, dy = q2.grads

    def form(a, b):
        return (a * w) @ b.T

    A11 = (2 * mu + lam) * form(dx, dx) + mu * form(dy, dy)
    A22 = (2 * mu + lam) * form(dy, dy) + mu * form(dx, dx)
    A12 = mu * form(dy, dx) + lam * form(dx, dy)
    A = np.block([[A11, A12], [A12.T, A22]])
    # derivatives carry 1/h, the area carries h^2
    B = params.biot_willis * h * np.hstack([form(q1.vals, dx), form(q1.vals, dy)])
    C = (params.time_step * params.permeability / params.fluid_viscosity
         * sum(form(g, g) for g in q1.grads)
         + params.biot_modulus_inverse * h ** 2 * form(q1.vals, q1.vals))
    return _symmetrized(np.block([[A, B.T], [B, -C]]))


def _symmetrized(K: np.ndarray) -> np.ndarray:
    return 0.5 * (K + K.T)


# ---------------------------------------------------------------------------
# Discretization description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Discretization:
    """Uniform tensor-product FE discretization on the integer lattice.

    ``fields`` lists ``(name, Lagrange degree)``; field nodes are spaced
    ``span // degree`` lattice units apart.
    """

    kind: str
    dim: int
    h: float
    span: int
    fields: Tuple[Tuple[str, int], ...]
    element_matrix: np.ndarray = field(compare=False, repr=False)
    params: Optional[BiotParams] = None
    poly_degree: Optional[int] = None

    def spacing(self, name: str) -> int:
        return self.span // dict(self.fields)[name]

    def local_dofs(self) -> list:
        """``(field, lattice offset)`` of each local dof, in element-matrix order."""
        out = []
        for name, q in self.fields:
            sp = self.span // q
            for multi in itertools.product(range(q + 1), repeat=self.dim):
                out.append((name, tuple(sp * m for m in multi)))
        return out

    def classes(self) -> list:
        seen = []
        for name, off in self.local_dofs():
            c = DofClass(name, tuple(o % self.span for o in off))
            if c not in seen:
                seen.append(c)
        return sorted(seen, key=lambda c: (self.field_names.index(c.field), c.offset))

    @property
    def field_names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.fields)

    def coarsen(self) -> "Discretization":
        """The same discretization with doubled mesh size, in the same lattice."""
        if self.kind == "poisson":
            K = qp_element_matrix(self.poly_degree, self.dim, 2 * self.h)
        else:
            K = biot_element_matrix(self.params, 2 * self.h)
        return Discretization(self.kind, self.dim, 2 * self.h, 2 * self.span, self.fields,
                              K, self.params, self.poly_degree)

    def describe(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "h": self.h, "span": self.span}
        if self.poly_degree is not None:
            out["p"] = self.poly_degree
        if self.params is not None:
            out["biot"] = self.params.to_dict()
        return out


def poisson_discretization(spec: GridSpec) -> Discretization:
    p = spec.poly_degree
    K = qp_element_matrix(p, spec.dim, spec.mesh_size)
    return Discretization("poisson", spec.dim, spec.mesh_size, p, (("u", p),), K,
                          poly_degree=p)


def biot_discretization(params: BiotParams, h: float) -> Discretization:
    if not h > 0:
        raise DiscretizationError(f"mesh size must be positive, got {h}")
    return Discretization("biot", 2, h, 2, (("u1", 2), ("u2", 2), ("p", 1)),
                          biot_element_matrix(params, h), params)


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------

@dataclass
class StencilSet:
    """Couplings of an operator on the infinite grid, per DofClass.

    ``entries[(row, col, s)]`` is the coefficient coupling a row dof of class
    ``row`` at lattice position ``x`` to the column dof of class ``col`` at
    ``x + s``.
    """

    dim: int
    period: Offset
    classes: list
    entries: Dict[Tuple[DofClass, DofClass, Offset], float]
    disc: Optional[Discretization] = None

    def row(self, cls: DofClass):
        """Yield ``(col class, offset, value)`` for one row class."""
        for (r, c, s), v in self.entries.items():
            if r == cls:
                yield c, s, v

    def row_sum(self, cls: DofClass) -> float:
        return sum(v for _, _, v in self.row(cls))

    def max_abs(self) -> float:
        return max(abs(v) for v in self.entries.values())

    def lookup(self) -> Dict[Tuple[DofClass, Offset], Dict[DofClass, float]]:
        """Index ``(row class, offset) -> {col class: value}`` for fast access."""
        out: Dict = {}
        for (r, c, s), v in self.entries.items():
            out.setdefault((r, s), {})[c] = v
        return out

    def to_records(self) -> list:
        """Flat JSON-ready records ``{field, source_class, target_class, offset, value}``."""
        recs = []
        for (r, c, s), v in sorted(self.entries.items(),
                                   key=lambda kv: (kv[0][0].field, kv[0][0].offset,
                                                   kv[0][1].field, kv[0][1].offset, kv[0][2])):
            recs.append({
                "field": r.field,
                "source_class": [r.field, list(r.offset)],
                "target_class": [c.field, list(c.offset)],
                "offset": list(s),
                "value": float(v),
            })
        return recs

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_records(), fh, indent=1)


def assemble_stencils(disc: Discretization) -> StencilSet:
    """Sum one element matrix over all elements touching each DofClass.

    By translation invariance, each local pair (i, j) of the reference
    element contributes ``K[i, j]`` to the stencil of node i's class at the
    relative offset ``o_j - o_i``.
    """
    loc = disc.local_dofs()
    K = disc.element_matrix
    entries: Dict = {}
    for i, (fi, oi) in enumerate(loc):
        ri = DofClass(fi, tuple(o % disc.span for o in oi))
        for j, (fj, oj) in enumerate(loc):
            if K[i, j] == 0.0:
                continue
            cj = DofClass(fj, tuple(o % disc.span for o in oj))
            s = tuple(b - a for a, b in zip(oi, oj))
            key = (ri, cj, s)
            entries[key] = entries.get(key, 0.0) + K[i, j]
    return StencilSet(disc.dim, (disc.span,) * disc.dim, disc.classes(), entries, disc)


def assemble_poisson_stencils(spec: GridSpec) -> StencilSet:
    """Stencils of the Qp stiffness operator, one per DofClass (p^d classes)."""
    return assemble_stencils(poisson_discretization(spec))


def assemble_biot_stencils(params: BiotParams, h: float) -> StencilSet:
    """Stencils of the Q2-Q1 Biot block operator (8 displacement + 1 pressure classes)."""
    return assemble_stencils(biot_discretization(params, h))


def prolongation_stencil(disc: Discretization) -> Dict[Tuple[DofClass, DofClass, Offset], float]:
    """Canonical embedding of the coarsened space into ``disc``'s space.

    Returns ``{(coarse class, fine class, t): value}``: the coarse basis
    function of a coarse dof at position ``c`` takes ``value`` at the fine
    node at ``c + t``.  Coarse classes have period ``2 * span``.
    """
    cspan = 2 * disc.span
    out: Dict = {}
    for name, q in disc.fields:
        fsp, csp = disc.span // q, cspan // q
        vals, _ = lagrange_basis(q, np.arange(2 * q + 1) / (2 * q))
        for J in itertools.product(range(q + 1), repeat=disc.dim):
            cpos = tuple(csp * j for j in J)
            ccls = DofClass(name, tuple(c % cspan for c in cpos))
            for I in itertools.product(range(2 * q + 1), repeat=disc.dim):
                v = float(np.prod([vals[J[k], I[k]] for k in range(disc.dim)]))
                if v == 0.0:
                    continue
                fpos = tuple(fsp * i for i in I)
                key = (ccls, DofClass(name, tuple(f % disc.span for f in fpos)),
                       tuple(f - c for f, c in zip(fpos, cpos)))
                prev = out.get(key)
                if prev is not None and abs(prev - v) > 1e-12:
                    raise AssertionError(f"inconsistent embedding weight at {key}")
                out[key] = v
    return out


def stencil_offsets(st: StencilSet) -> Iterable[Offset]:
    return {s for (_, _, s) in st.entries}
