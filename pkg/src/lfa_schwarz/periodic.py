"""Ground truth for the window analysis: explicit two-grid matrices on a torus.

On a periodic grid of ``L`` windows per direction the Bloch phases that
occur are ``2 pi j / L``.  The explicitly assembled two-grid matrix is
block-diagonalized by exactly those phases, so its spectrum must equal the
union of the window symbols' spectra at them.  Phase 0 is removed on both
sides: there the periodic coarse operator is singular.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .discretization import Discretization
from .lfa import TwoGridConfig, spectral_radius
from .solver import (
    BlockSmoother, FiniteGrid, SparseOperator, assemble_matrix, assemble_prolongation,
)


@dataclass
class PeriodicTwoGrid:
    A: np.ndarray
    S: np.ndarray
    cgc: np.ndarray
    projector: np.ndarray  # onto phase-0 (window-periodic) functions
    phases: List[Tuple[float, ...]]

    def two_grid(self, nu1: int, nu2: int) -> np.ndarray:
        mp = np.linalg.matrix_power
        return mp(self.S, nu2) @ self.cgc @ mp(self.S, nu1)

    def rho(self, nu1: int, nu2: int) -> float:
        Q = np.eye(len(self.A)) - self.projector
        return spectral_radius(self.two_grid(nu1, nu2) @ Q)


def _coarse_on_own_lattice(fine: Discretization) -> Discretization:
    c = fine.coarsen()
    return Discretization(c.kind, c.dim, c.h, fine.span, c.fields, c.element_matrix, c.params,
                          c.poly_degree)


def window_average(grid: FiniteGrid, n: int, L: int) -> np.ndarray:
    """Average over the ``L^d`` translates by multiples of the window size."""
    N = grid.ndofs
    Pi = np.zeros((N, N))
    for name in grid.disc.field_names:
        pos = grid.positions(name)
        idx = grid.locate(name, pos)
        for shift in itertools.product(range(L), repeat=grid.dim):
            j = grid.locate(name, pos + n * np.asarray(shift))
            Pi[idx, j] += 1.0 / L ** grid.dim
    return Pi


def build_periodic(cfg: TwoGridConfig, L: int = 2) -> PeriodicTwoGrid:
    disc = cfg.stencils.disc
    extent = L * cfg.n
    if extent % (2 * disc.span):
        raise ValueError(f"torus of {extent} lattice units cannot be coarsened")
    fine = FiniteGrid(disc, extent // disc.span, periodic=True)
    cdisc = _coarse_on_own_lattice(disc)
    coarse = FiniteGrid(cdisc, extent // (2 * disc.span), periodic=True)
    A = assemble_matrix(fine).toarray()
    Ac = assemble_matrix(coarse).toarray()
    P = assemble_prolongation(fine, coarse).toarray()
    sm = BlockSmoother(SparseOperator(A), fine, cfg.blocks, cfg.rule)
    C = np.column_stack([sm.correction(e) for e in np.eye(fine.ndofs)])
    S = np.eye(fine.ndofs) - C @ A
    cgc = np.eye(fine.ndofs) - P @ np.linalg.pinv(Ac) @ P.T @ A
    pts = [2 * np.pi * j / L for j in range(L)]
    pts = [x - 2 * np.pi if x > np.pi else x for x in pts]
    phases = [ph for ph in itertools.product(pts, repeat=disc.dim) if any(ph)]
    return PeriodicTwoGrid(A, S, cgc, window_average(fine, cfg.n, L), phases)


def compare(cfg: TwoGridConfig, L: int = 2) -> Dict[str, float]:
    """Explicit periodic factor versus the window analysis at the represented phases."""
    per = build_periodic(cfg, L)
    explicit = per.rho(cfg.nu1, cfg.nu2)
    model = cfg.model
    lfa = max(spectral_radius(model.two_grid(np.asarray(ph))) for ph in per.phases)
    return {"periodic": explicit, "lfa": lfa, "difference": abs(explicit - lfa), "L": L,
            "phases": len(per.phases)}
