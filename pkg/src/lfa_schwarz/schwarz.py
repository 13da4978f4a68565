"""Periodic patterns of Schwarz blocks, their weights and local matrices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .discretization import DofClass, StencilSet

Offset = Tuple[int, ...]


class SingularBlockError(np.linalg.LinAlgError):
    """A local block matrix is (numerically) singular."""

    def __init__(self, msg, anchor=None, cond=None):
        super().__init__(msg)
        self.anchor = anchor
        self.cond = cond


@dataclass(frozen=True)
class BlockPattern:
    """One block per ``stride`` translate of ``anchor``.

    ``footprint`` holds ``(field, relative lattice position)`` pairs and
    ``roles`` labels each entry for explicit weighting.
    """

    kind: str
    dim: int
    stride: Offset
    footprint: Tuple[Tuple[str, Offset], ...]
    roles: Tuple[str, ...]
    anchor: Offset = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.anchor is None:
            object.__setattr__(self, "anchor", (0,) * self.dim)
        if any(s < 1 for s in self.stride):
            raise ValueError(f"block stride must be >= 1, got {self.stride}")
        if len(set(self.footprint)) != len(self.footprint):
            raise ValueError("footprint entries must be distinct")

    @property
    def size(self) -> int:
        return len(self.footprint)

    def _equivalents(self, i):
        """Footprint entries that address the same dof as entry i in a shifted block."""
        f, r = self.footprint[i]
        out = []
        for j, (g, s) in enumerate(self.footprint):
            if g == f and all((a - b) % st == 0 for a, b, st in zip(s, r, self.stride)):
                out.append(j)
        return out

    def overlap_counts(self) -> np.ndarray:
        """Number of blocks containing the dof of each footprint entry."""
        return np.array([len(self._equivalents(i)) for i in range(self.size)], dtype=float)

    def ownership_mask(self) -> np.ndarray:
        """RAS ownership: among equivalent entries the lexicographically smallest owns the dof."""
        mask = np.zeros(self.size)
        for i in range(self.size):
            eq = self._equivalents(i)
            owner = min(eq, key=lambda j: self.footprint[j][1])
            mask[i] = 1.0 if owner == i else 0.0
        return mask

    def to_dict(self) -> dict:
        return {"type": self.kind, **self.params}


@dataclass(frozen=True)
class WeightRule:
    """Weights of the additive (``as``) or restricted additive (``ras``) sweep.

    ``weights`` is ``"natural"``, a scalar multiplying the natural weights, or
    a map from footprint role to an explicit weight.
    """

    variant: str = "as"
    weights: Union[str, float, Dict[str, float]] = "natural"

    def __post_init__(self):
        if self.variant not in ("as", "ras"):
            raise ValueError(f"variant must be 'as' or 'ras', got {self.variant!r}")
        if isinstance(self.weights, str) and self.weights != "natural":
            raise ValueError(f"unknown weight keyword {self.weights!r}")

    def diagonal(self, pattern: BlockPattern) -> np.ndarray:
        """Diagonal of D_i for one block, in footprint order (ownership applied for RAS)."""
        if self.variant == "as":
            base = 1.0 / pattern.overlap_counts()
        else:
            base = pattern.ownership_mask()
        w = self.weights
        if isinstance(w, str):
            return base
        if isinstance(w, dict):
            missing = set(pattern.roles) - set(w)
            if missing:
                raise KeyError(f"no weight given for roles {sorted(missing)}")
            explicit = np.array([w[r] for r in pattern.roles], dtype=float)
            return explicit * (pattern.ownership_mask() if self.variant == "ras" else 1.0)
        return float(w) * base

    def role_parts(self, pattern: BlockPattern) -> Dict[str, np.ndarray]:
        """Split the diagonal into per-role pieces with unit weight.

        ``diagonal = sum(weights[role] * parts[role])`` for explicit weights;
        natural weights return a single part keyed ``"natural"``.
        """
        if isinstance(self.weights, dict):
            mask = pattern.ownership_mask() if self.variant == "ras" else np.ones(pattern.size)
            roles = np.array(pattern.roles)
            return {r: (roles == r) * mask for r in dict.fromkeys(pattern.roles)}
        return {"natural": WeightRule(self.variant).diagonal(pattern)}

    def role_weights(self) -> Dict[str, float]:
        if isinstance(self.weights, dict):
            return dict(self.weights)
        if isinstance(self.weights, str):
            return {"natural": 1.0}
        return {"natural": float(self.weights)}

    def to_dict(self) -> dict:
        return {"variant": self.variant, "weights": self.weights}


# ---------------------------------------------------------------------------
# Pattern constructors
# ---------------------------------------------------------------------------

def make_1d_blocks(k: int, ov: int) -> BlockPattern:
    """Blocks of k consecutive dofs advancing by k - ov."""
    if k < 2:
        raise ValueError(f"block size must be >= 2, got {k}")
    if not 1 <= ov < k:
        raise ValueError(f"overlap must satisfy 1 <= ov < k, got ov={ov}, k={k}")
    fp = tuple(("u", (j,)) for j in range(k))
    return BlockPattern("interval", 1, (k - ov,), fp, ("dof",) * k, params={"k": k, "ov": ov})


def make_element_blocks(p: int, d: int) -> BlockPattern:
    """One block per element holding all (p+1)^d nodes of that element."""
    if p < 1 or d not in (1, 2):
        raise ValueError(f"invalid element pattern p={p}, d={d}")
    fp, roles = [], []
    names = {0: "interior", 1: "edge" if d == 2 else "vertex", 2: "vertex"}
    for multi in itertools.product(range(p + 1), repeat=d):
        fp.append(("u", multi))
        roles.append(names[sum(1 for m in multi if m in (0, p))])
    return BlockPattern("element", d, (p,) * d, tuple(fp), tuple(roles),
                        params={"p": p, "d": d, "k": (p + 1) ** d, "ov": 1})


def make_biot_pressure_blocks() -> BlockPattern:
    """One block per Q1 pressure node plus every Q2 displacement node in its support.

    In the Biot lattice the pressure sits on even positions and its basis
    function is supported on [-2, 2]^2, giving 1 + 2 * 25 = 51 dofs.
    """
    fp, roles = [("p", (0, 0))], ["p"]
    kinds = {0: "u_vertex", 1: "u_edge", 2: "u_cell"}
    for comp in ("u1", "u2"):
        for r in itertools.product(range(-2, 3), repeat=2):
            fp.append((comp, r))
            roles.append(kinds[sum(1 for c in r if c % 2)])
    return BlockPattern("biot-pressure", 2, (2, 2), tuple(fp), tuple(roles), params={})


def pattern_from_dict(cfg: dict) -> BlockPattern:
    """Build a pattern from its JSON descriptor."""
    kind = cfg["type"]
    if kind == "interval":
        return make_1d_blocks(int(cfg["k"]), int(cfg["ov"]))
    if kind == "element":
        return make_element_blocks(int(cfg["p"]), int(cfg.get("d", 1)))
    if kind == "biot-pressure":
        return make_biot_pressure_blocks()
    raise ValueError(f"unknown block pattern type {kind!r}")


# ---------------------------------------------------------------------------
# Local matrices
# ---------------------------------------------------------------------------

def footprint_classes(pattern: BlockPattern, stencils: StencilSet, anchor: Optional[Offset] = None):
    anchor = pattern.anchor if anchor is None else anchor
    out = []
    for f, r in pattern.footprint:
        pos = tuple(a + b for a, b in zip(anchor, r))
        out.append(DofClass(f, tuple(x % P for x, P in zip(pos, stencils.period))))
    return out


def local_matrix(pattern: BlockPattern, stencils: StencilSet, anchor: Optional[Offset] = None,
                 check: bool = True) -> np.ndarray:
    """Restriction of the infinite-grid operator to one block footprint."""
    anchor = pattern.anchor if anchor is None else anchor
    cls = footprint_classes(pattern, stencils, anchor)
    look = stencils.lookup()
    pos = [r for _, r in pattern.footprint]
    m = pattern.size
    Ai = np.zeros((m, m))
    for a in range(m):
        for b in range(m):
            s = tuple(y - x for x, y in zip(pos[a], pos[b]))
            Ai[a, b] = look.get((cls[a], s), {}).get(cls[b], 0.0)
    if check:
        check_invertible(Ai, anchor)
    return Ai


def equilibrated_cond(Ai: np.ndarray, sweeps: int = 20) -> float:
    """2-norm condition number after Ruiz row/column equilibration."""
    B = np.abs(Ai).astype(float)
    r = np.ones(B.shape[0])
    c = np.ones(B.shape[1])
    for _ in range(sweeps):
        S = B * r[:, None] * c[None, :]
        rm = S.max(axis=1)
        cm = S.max(axis=0)
        if np.any(rm == 0) or np.any(cm == 0):
            return np.inf
        r /= np.sqrt(rm)
        c /= np.sqrt(cm)
    return float(np.linalg.cond(Ai * r[:, None] * c[None, :]))


def check_invertible(Ai: np.ndarray, anchor=None, limit: float = 1e12) -> float:
    cond = equilibrated_cond(Ai)
    if not np.isfinite(cond) or cond > limit:
        raise SingularBlockError(
            f"singular local matrix at anchor {anchor} (equilibrated cond {cond:.3e})",
            anchor=anchor, cond=cond)
    return cond
