"""Explicit periodic-grid matrices versus the window symbols."""

import numpy as np
import pytest

from lfa_schwarz.discretization import BiotParams
from lfa_schwarz.lfa import Window, biot_config, poisson_config, smoother_symbol
from lfa_schwarz.periodic import build_periodic, compare


@pytest.mark.parametrize("k", [2, 3])
@pytest.mark.parametrize("variant", ["as", "ras"])
def test_1d_interval_blocks(k, variant):
    res = compare(poisson_config(1, 1, blocks=(k, 1), variant=variant), L=2)
    assert res["difference"] < 1e-8


@pytest.mark.parametrize("L", [2, 3])
def test_1d_high_order_element_blocks(L):
    res = compare(poisson_config(3, 1, variant="as", nu1=1, nu2=1), L=L)
    assert res["difference"] < 1e-8


@pytest.mark.parametrize("p,variant", [(1, "ras"), (2, "as")])
def test_2d_element_blocks(p, variant):
    res = compare(poisson_config(p, 2, variant=variant, nu1=1, nu2=1), L=2)
    assert res["difference"] < 1e-8
    assert res["phases"] == 3


def test_biot_window():
    res = compare(biot_config(BiotParams(permeability=1e-6)), L=2)
    assert res["difference"] < 1e-8


def test_smoother_spectrum_matches_union_of_symbol_spectra():
    # 1D p=1, k=3, ov=1 AS on a 12-node periodic grid: three windows of four nodes
    cfg = poisson_config(1, 1, blocks=(3, 1), variant="as")
    L = 12 // cfg.n
    per = build_periodic(cfg, L)
    explicit = np.sort_complex(np.round(np.linalg.eigvals(per.S), 10))
    win = Window.for_stencils(cfg.stencils, cfg.n)
    symbols = []
    for j in range(L):
        ph = 2 * np.pi * j / L
        ph = ph - 2 * np.pi if ph > np.pi else ph
        symbols.append(np.linalg.eigvals(
            smoother_symbol(cfg.stencils, cfg.blocks, cfg.rule, win, [ph]).matrix))
    union = np.sort_complex(np.round(np.concatenate(symbols), 10))
    np.testing.assert_allclose(explicit, union, atol=1e-8)


def test_window_average_is_a_projector():
    per = build_periodic(poisson_config(1, 1, blocks=(2, 1)), L=3)
    Pi = per.projector
    np.testing.assert_allclose(Pi @ Pi, Pi, atol=1e-14)
    assert np.trace(Pi) == pytest.approx(per.A.shape[0] / 3)


def test_torus_must_coarsen():
    with pytest.raises(ValueError):
        build_periodic(poisson_config(3, 1, n=3), L=1)
