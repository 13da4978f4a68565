import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfa_schwarz.discretization import BiotParams, GridSpec, assemble_biot_stencils, assemble_poisson_stencils
from lfa_schwarz.lfa import (
    PAPER_BIOT_WEIGHTS, CoarseSingularityError, Frequency, Window, asymptotic_factor,
    asymptotic_factors, biot_config, coarse_is_singular, frequency_grid, operator_symbol,
    poisson_config, smoother_symbol, spectral_radius, sweep, transfer_symbols, two_grid_symbol,
    window_size,
)
from lfa_schwarz.schwarz import WeightRule, make_1d_blocks

phases = st.floats(-np.pi, np.pi, exclude_min=True)


@pytest.mark.parametrize("p,k,ov,n", [(2, 3, 1, 4), (1, 2, 1, 6), (1, 3, 1, 4), (1, 7, 6, 8),
                                      (3, 4, 1, 6)])
def test_window_size(p, k, ov, n):
    assert window_size(p, k, ov) == n


def test_window_size_rejects_bad_blocks():
    with pytest.raises(ValueError):
        window_size(1, 3, 3)


def test_biot_window_is_eight():
    assert biot_config(BiotParams()).n == 8


def test_window_requires_period_multiple():
    st_ = assemble_poisson_stencils(GridSpec(1, 1.0, 3))
    with pytest.raises(ValueError):
        Window.for_stencils(st_, 4)


def test_frequency_validation():
    with pytest.raises(ValueError):
        Frequency((-np.pi,))
    assert Frequency((np.pi,)).theta(4, 0.5) == (np.pi / 2,)


def test_frequency_grid_is_midpoint():
    g = frequency_grid(8, 2)
    assert g.shape == (64, 2)
    assert not np.any(np.all(np.abs(g) < 1e-12, axis=1))


@given(phi=phases)
def test_p1_operator_symbol_matches_classical_symbol(phi):
    # window of two nodes: eigenvalues are 2 - 2 cos(theta h) at both harmonics
    h = 0.5
    st_ = assemble_poisson_stencils(GridSpec(1, h, 1))
    A = operator_symbol(st_, Window.for_stencils(st_, 2), [phi]).matrix
    th = phi / 2
    want = sorted((2 - 2 * np.cos(t)) / h for t in (th, th + np.pi))
    np.testing.assert_allclose(sorted(np.linalg.eigvalsh(A)), want, atol=1e-12)


@pytest.mark.parametrize("p,dim", [(1, 1), (3, 1), (2, 2)])
def test_operator_symbol_kills_constants_at_zero_phase(p, dim):
    st_ = assemble_poisson_stencils(GridSpec(dim, 1.0, p))
    win = Window.for_stencils(st_, window_size(p, p + 1, 1))
    A = operator_symbol(st_, win, np.zeros(dim)).matrix
    np.testing.assert_allclose(A @ np.ones(win.size), 0, atol=1e-12)


@given(phi=st.tuples(phases, phases), p=st.integers(1, 3))
def test_poisson_symbols_hermitian(phi, p):
    st_ = assemble_poisson_stencils(GridSpec(2, 1.0, p))
    A = operator_symbol(st_, Window.for_stencils(st_, 2 * p), phi).matrix
    assert np.abs(A - A.conj().T).max() <= 1e-13 * np.abs(A).max()


@given(phi=st.tuples(phases, phases))
def test_biot_symbol_hermitian(phi):
    cfg = biot_config(BiotParams(permeability=1e-6))
    A = cfg.model.A(np.array(phi))
    assert np.abs(A - A.conj().T).max() <= 1e-13 * np.abs(A).max()


@given(phi=phases, p=st.integers(1, 5))
def test_galerkin_identity_1d(phi, p):
    cfg = poisson_config(p, 1)
    fx = cfg.model.fixed([phi])
    RAP = fx["P"].conj().T @ fx["A"] @ fx["P"]
    assert np.abs(RAP - fx["Ac"]).max() <= 1e-10 * np.abs(fx["Ac"]).max()


@given(phi=st.tuples(phases, phases))
def test_galerkin_identity_2d_and_biot(phi):
    for cfg in (poisson_config(2, 2), biot_config(BiotParams(permeability=1e-3))):
        fx = cfg.model.fixed(np.array(phi))
        RAP = fx["P"].conj().T @ fx["A"] @ fx["P"]
        assert np.abs(RAP - fx["Ac"]).max() <= 1e-10 * np.abs(fx["Ac"]).max()


def test_restriction_is_adjoint_of_prolongation():
    st_ = assemble_poisson_stencils(GridSpec(1, 1.0, 2))
    P, R = transfer_symbols(st_, Window.for_stencils(st_, 8), [0.7])
    np.testing.assert_allclose(R.matrix, P.matrix.conj().T)


def test_p1_prolongation_weights():
    st_ = assemble_poisson_stencils(GridSpec(1, 1.0, 1))
    P = transfer_symbols(st_, Window.for_stencils(st_, 6), [0.0])[0].matrix.real
    for col in P.T:
        assert sorted(col[col != 0]) == [0.5, 0.5, 1.0]


def test_zero_weights_give_identity_smoother():
    st_ = assemble_poisson_stencils(GridSpec(1, 1.0, 1))
    win = Window.for_stencils(st_, 4)
    S = smoother_symbol(st_, make_1d_blocks(3, 1), WeightRule("as", 0.0), win, [1.1]).matrix
    np.testing.assert_allclose(S, np.eye(win.size))
    assert spectral_radius(S) == pytest.approx(1.0)


def test_coarse_correction_alone_does_not_converge():
    cfg = poisson_config(1, 1, blocks=(2, 1), nu1=0, nu2=0)
    rho = max(spectral_radius(two_grid_symbol(cfg, [ph]).matrix) for ph in (0.3, 1.2, 2.9))
    assert rho >= 1 - 1e-12


def test_smoother_radius_invariant_under_origin_shift():
    cfg = poisson_config(1, 1, blocks=(3, 1))
    st_ = cfg.stencils
    win = Window.for_stencils(st_, cfg.n)
    shifted = dataclasses.replace(cfg.blocks, anchor=(1,))
    for ph in (0.2, 1.7, -2.5):
        a = smoother_symbol(st_, cfg.blocks, cfg.rule, win, [ph]).spectral_radius()
        b = smoother_symbol(st_, shifted, cfg.rule, win, [ph]).spectral_radius()
        assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("variant,rho", [("as", 1 / 3), ("ras", 0.75)])
def test_k2_ov1_two_grid_factor(variant, rho):
    rep = asymptotic_factor(poisson_config(1, 1, blocks=(2, 1), variant=variant))
    assert rep.rho_2g == pytest.approx(rho, abs=0.005)
    assert rep.rho_2g == max(r for _, r in rep.per_freq)
    assert not rep.skipped


def test_2d_p1_ras_two_smoothing_steps():
    rep = asymptotic_factor(poisson_config(1, 2, variant="ras", nu1=1, nu2=1))
    assert rep.rho_2g == pytest.approx(0.19, abs=0.01)


def test_biot_natural_weights_k1():
    rho = asymptotic_factors(biot_config(BiotParams(permeability=1.0)), [1])[1]
    assert rho == pytest.approx(0.49, abs=0.01)


def test_cyclic_split_equals_literal_product():
    cfg = poisson_config(2, 1, nu1=1, nu2=2)
    for ph in (0.4, 2.2):
        literal = spectral_radius(two_grid_symbol(cfg, [ph]).matrix)
        assert cfg.model.radii([ph], nus=[3])[3] == pytest.approx(literal, abs=1e-10)


def test_conjugate_symmetry_of_radii():
    cfg = poisson_config(1, 2, variant="ras")
    for ph in ([0.3, -1.9], [2.5, 0.7]):
        a = cfg.model.radii(np.array(ph))[1]
        b = cfg.model.radii(-np.array(ph))[1]
        assert a == pytest.approx(b, abs=1e-12)


def test_singular_coarse_symbol_detected():
    cfg = poisson_config(1, 1, blocks=(2, 1))
    assert coarse_is_singular(cfg.model.fixed([0.0])["Ac"])
    assert not coarse_is_singular(cfg.model.fixed([0.1])["Ac"])
    with pytest.raises(CoarseSingularityError):
        cfg.model.two_grid([0.0])


def test_skip_rule_is_scale_invariant():
    # the pressure field of the Biot symbol lives on a scale 1e-13 below the displacements
    cfg = biot_config(BiotParams(permeability=1e-15))
    Ac = cfg.model.fixed(np.array([0.4, 0.4]))["Ac"]
    assert not coarse_is_singular(Ac)
    D = np.diag(np.r_[np.full(len(Ac) // 2, 1e6), np.ones(len(Ac) - len(Ac) // 2)])
    assert not coarse_is_singular(D @ Ac @ D)


def test_samples_lower_bound():
    with pytest.raises(ValueError):
        asymptotic_factor(poisson_config(1, 1, blocks=(2, 1)), 4)


@pytest.mark.parametrize("blocks,variant", [((2, 1), "as"), ((3, 1), "ras"), ((5, 2), "as")])
def test_window_enlargement_invariance_1d(blocks, variant):
    # doubling n with half the samples represents exactly the same frequencies when 4 | m
    cfg = poisson_config(1, 1, blocks=blocks, variant=variant)
    big = poisson_config(1, 1, blocks=blocks, variant=variant, n=2 * cfg.n)
    a = asymptotic_factor(cfg, 32).rho_2g
    b = asymptotic_factor(big, 16).rho_2g
    assert abs(a - b) < 1e-8


def test_window_enlargement_invariance_2d():
    cfg = poisson_config(1, 2, variant="ras")
    big = poisson_config(1, 2, variant="ras", n=2 * cfg.n)
    assert abs(asymptotic_factor(cfg, 16).rho_2g - asymptotic_factor(big, 8).rho_2g) < 1e-8


@pytest.mark.parametrize("make", [
    lambda: poisson_config(1, 1, blocks=(4, 2), variant="as"),
    lambda: poisson_config(1, 1, blocks=(6, 1), variant="ras"),
    lambda: poisson_config(3, 1, variant="as"),
    lambda: poisson_config(2, 2, variant="ras", nu1=1, nu2=1),
])
def test_sampling_doubling_stability(make):
    cfg = make()
    a = asymptotic_factor(cfg, cfg.samples).rho_2g
    b = asymptotic_factor(cfg, 2 * cfg.samples).rho_2g
    assert abs(a - b) < 0.005


def test_biot_sampling_doubling_stability():
    cfg = biot_config(BiotParams(permeability=1e-6), weights=PAPER_BIOT_WEIGHTS)
    a, b = (asymptotic_factors(cfg, [1, 4], s) for s in (8, 16))
    assert all(abs(a[nu] - b[nu]) < 0.005 for nu in (1, 4))


def test_threaded_sweep_matches_serial(monkeypatch):
    cfg = poisson_config(2, 2, variant="as")
    _, serial = sweep(cfg, 8)
    monkeypatch.setenv("LFA_SCHWARZ_THREADS", "3")
    _, threaded = sweep(cfg, 8)
    assert serial == threaded


def test_factor_report_serialization():
    rep = asymptotic_factor(poisson_config(1, 1, blocks=(2, 1)), 8)
    d = rep.to_dict()
    assert d["rho_2g"] == rep.rho_2g and len(d["per_freq"]) == 8
    rows = rep.csv_rows()
    assert rows[0] == ["phase0", "theta0_0", "rho"] and len(rows) == 9
