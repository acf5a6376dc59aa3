import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from enrichqc.cgspace import Graded, Layout, build_cgmap
from enrichqc.crack import (
    CrackModel,
    bifurcation_sweep,
    crack_energy,
    crack_problem,
    gamma,
    hessian_spectrum,
    solve_crack,
    traction_forces,
)
from enrichqc.model import Chain, DirichletPinned, Harmonic, Traction
from oracles import fd_gradient, gamma_quad


def _model(n=64, load=1.0, **kw):
    return CrackModel(Chain(n, Harmonic(4.0, 0.4), Traction(load)), n_broken=n // 2 + 2, **kw)


@pytest.mark.parametrize("scaling", ["printed", "unscaled"])
@pytest.mark.parametrize("u", [-0.1, 0.0, 0.1, 0.25, 0.4999, 0.5, 0.8])
def test_gamma_matches_quadrature(u, scaling):
    m = _model(gamma_scaling=scaling)
    ref = gamma_quad(u, m.k2, m.u_cut, m.epsilon, scaled=scaling == "printed")
    assert gamma(u, m) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_gamma0_and_c1_at_cutoff():
    m = _model()
    uc = m.u_cut
    assert m.gamma0 == pytest.approx(gamma_quad(uc, m.k2, uc, m.epsilon), rel=1e-12)
    g, dg, _ = m.gamma_derivs(np.array([uc - 1e-9, uc, uc + 1e-9]))
    assert np.ptp(g) < 1e-12 * m.gamma0
    assert np.abs(dg).max() < 1e-12 * m.gamma0 / uc * 1e4


@given(st.floats(0.01, 0.49))
def test_gamma_derivatives_fd(u):
    m = _model(gamma_scaling="unscaled")
    h = 1e-6
    g, dg, d2g = m.gamma_derivs(u)
    gp, dgp, _ = m.gamma_derivs(u + h)
    gm, dgm, _ = m.gamma_derivs(u - h)
    assert dg == pytest.approx((gp - gm) / (2 * h), rel=1e-6, abs=1e-9)
    assert d2g == pytest.approx((dgp - dgm) / (2 * h), rel=1e-6, abs=1e-9)


def test_traction_split():
    f1, f2 = traction_forces(_model())
    assert f1 == pytest.approx(6 / 7, rel=1e-15)
    assert f2 == pytest.approx(1 / 7, rel=1e-15)


def test_reference_state_energy_is_crack_surface():
    m = _model(load=0.0)
    assert crack_energy(m, np.zeros(64)) == pytest.approx((m.n_broken - 1) * m.gamma0, rel=1e-15)


@pytest.mark.parametrize("vertical", ["harmonic", "breakable"])
def test_residual_is_scaled_energy_gradient(vertical, rng):
    m = _model(vertical=vertical, gamma_scaling="unscaled")
    prob = crack_problem(m)
    u = 0.05 * rng.random(64)
    u[-1] = 0.0
    g = fd_gradient(lambda v: crack_energy(m, v), u, h=1e-7)
    r = prob.residual(u)
    ref = m.epsilon**2 * g[prob.free]
    assert np.abs(r - ref).max() <= 1e-6 * np.abs(ref).max()


def test_zero_load_zero_solution():
    rep = solve_crack(_model(load=0.0))
    assert np.array_equal(rep.u, np.zeros(64))


def test_crack_opens_under_load():
    m = _model(256)
    u = solve_crack(m).u
    assert u[0] > u[m.tip] > u[m.tip + 5] > 0
    ev = hessian_spectrum(m, u, k=2)
    assert ev[0] > 0


def test_galerkin_and_baselines_close_to_atomistic():
    m = _model(256)
    exact = solve_crack(m).u
    part = Layout.two_region(Graded(1 / 256, 1 / 16, 2.0), interface=0.25).discretize(256)
    cg = build_cgmap(m.chain.free, part)
    for method in ("galerkin", "qnl", "force_based"):
        u = solve_crack(m, method, cg).u
        assert np.abs(u - exact).max() < 0.05 * np.abs(exact).max(), method


def test_sweep_below_fold_is_single_stable_branch():
    m = _model(48)
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # a lost branch would warn
        res = bifurcation_sweep(m, load_range=(0.0, 0.5), steps=6)
    assert not res.lost and not res.folds
    assert {b.branch for b in res.points} == {"up", "down"}
    assert all(b.stable for b in res.points)
    up = {round(b.load, 9): b.u for b in res.branch("up")}
    for b in res.branch("down"):
        assert np.allclose(b.u, up[round(b.load, 9)], atol=1e-10)


def test_validation():
    with pytest.raises(ValueError):
        CrackModel(Chain(64, Harmonic(), DirichletPinned()))
    with pytest.raises(ValueError):
        _model(gamma_scaling="other")
    with pytest.raises(ValueError):
        CrackModel(Chain(64, Harmonic(), Traction(1.0)), n_broken=64)
    with pytest.raises(ValueError):
        crack_problem(_model(), "qnl")
    with pytest.raises(ValueError):
        solve_crack(_model(), "galerkin")
    with pytest.raises(ValueError):
        bifurcation_sweep(_model(), load_range=(1.0, 0.0))


@pytest.mark.slow
def test_stiff_vertical_bonds_fold_and_inertia(tmp_path):
    # with K2 = 20 the path folds; both solvers must place the folds alike and
    # the middle branch must carry exactly one unstable direction
    from pathlib import Path

    from enrichqc import cli

    cfg = cli.load_config(Path(__file__).resolve().parents[1] / "experiments" / "crack_bifurcation_stiff.ini")
    res = cli.run_bifurcate(cfg, tmp_path)
    a, g = res["atomistic"], res["galerkin"]
    for br in ("up", "down"):
        assert a.folds[br] == pytest.approx(g.folds[br], rel=0.02)
    assert a.folds["up"] > a.folds["down"]
    for r in (a, g):
        assert r.branch("middle")
        assert all(p.negative_count == 1 for p in r.branch("middle"))
        assert all(p.negative_count == 0 for p in r.branch("up") + r.branch("down"))
