import numpy as np
import pytest
import scipy.sparse as sp

from enrichqc.cgspace import Graded, Layout, Uniform, build_cgmap
from enrichqc.model import (
    Chain,
    ChainProblem,
    Custom,
    DirichletExtrapolated,
    DirichletPinned,
    LennardJones,
    PointForce,
    Harmonic,
    hessian,
    solve_atomistic,
)
from enrichqc.reduction import (
    DimensionMismatch,
    OracleCapExceeded,
    assemble_a0,
    complement_basis,
    effective_system,
    exact_a1_oracle,
    galerkin_solve,
    interpolate_fine,
    reduced_hessian,
    solve_standard_galerkin,
)
from oracles import hat_matrix, two_stage_minimizer


def _setup(n=64, mesh=Uniform(1 / 8), bc=None, force=None, pot=Harmonic(4.0, 1.4)):
    chain = Chain(n, pot, bc or DirichletPinned())
    prob = ChainProblem(chain, force or PointForce(3 * n // 4))
    part = Layout.two_region(mesh).discretize(n)
    cg = build_cgmap(chain.free, part)
    a = hessian(chain)[chain.free][:, chain.free]
    return chain, prob, cg, a, part


def test_a0_matches_dense_oracle():
    chain, prob, cg, a, part = _setup(bc=DirichletExtrapolated())
    phi = hat_matrix(part.nodes, chain.n_atoms)
    keep = np.isin(part.nodes, chain.free)
    phi = phi[keep][:, chain.free]
    assert np.allclose(assemble_a0(cg, a).toarray(), phi @ a.toarray() @ phi.T, atol=1e-12)


def test_a1_vanishes_without_coarsening():
    chain = Chain(32, Harmonic(), DirichletPinned())
    cg = build_cgmap(chain.free, Layout.all_atomistic().discretize(32))
    a = hessian(chain)[chain.free][:, chain.free]
    assert complement_basis(cg).shape[0] == 0
    assert np.array_equal(exact_a1_oracle(cg, a), np.zeros((cg.n, cg.n)))


@pytest.mark.parametrize("n", [64, 128])
def test_exact_effective_system_matches_two_stage_minimizer(n):
    chain, prob, cg, a, _ = _setup(n)
    f = chain.epsilon**2 * prob.load[chain.free]
    u_ref, q_ref = two_stage_minimizer(a.toarray(), cg.phi.toarray(), f)
    u_atom = solve_atomistic(chain, prob.force)[chain.free]
    assert np.allclose(u_ref, u_atom, atol=1e-12 * np.abs(u_atom).max())
    sys = effective_system(cg, a, f, with_a1=True)
    p = sys.solve()
    q = cg.mass @ p
    assert np.allclose(q, q_ref, rtol=0, atol=1e-10 * np.abs(q_ref).max())
    u = interpolate_fine(cg, a, q, f)
    assert np.allclose(u, u_atom, rtol=0, atol=1e-10 * np.abs(u_atom).max())


def test_a1_is_symmetric_psd():
    _, _, cg, a, _ = _setup(64)
    a1 = exact_a1_oracle(cg, a)
    assert np.allclose(a1, a1.T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (a1 + a1.T)).min() > -1e-10


def test_dropping_a1_is_standard_galerkin():
    chain, prob, cg, a, _ = _setup(128, Graded(1 / 128, 1 / 16, 2.0))
    f = chain.epsilon**2 * prob.load[chain.free]
    p = effective_system(cg, a, f).solve()
    rep = solve_standard_galerkin(prob, cg)
    assert np.allclose(rep.u[chain.free], cg.phi.T @ p, atol=1e-12 * np.abs(p).max())
    assert rep.dofs == cg.n


def test_galerkin_orthogonality_nonlinear():
    chain, prob, cg, _, _ = _setup(128, Uniform(1 / 16), pot=LennardJones.calibrated(),
                                   force=PointForce(100, 5.0))
    rep = solve_standard_galerkin(prob, cg)
    r = prob.residual(rep.u)
    assert np.abs(cg.phi @ r).max() <= 1e-11 * prob.residual_scale()


def test_full_resolution_galerkin_is_atomistic():
    chain = Chain(64, Harmonic(), DirichletExtrapolated())
    prob = ChainProblem(chain, PointForce(20))
    cg = build_cgmap(chain.free, Layout.all_atomistic().discretize(64))
    assert np.allclose(solve_standard_galerkin(prob, cg).u, solve_atomistic(chain, prob.force), atol=1e-13)


def test_galerkin_error_is_confined_near_the_continuum():
    # load in the atomistic region: the coarse mesh only sees the linear far field
    chain, prob, cg, _, _ = _setup(256, Uniform(1 / 16), bc=DirichletExtrapolated(), force=PointForce(200))
    err = solve_standard_galerkin(prob, cg).u - solve_atomistic(chain, prob.force)
    scale = np.abs(solve_atomistic(chain, prob.force)).max()
    assert np.abs(err).max() < 1e-2 * scale
    assert np.abs(np.diff(err[160:250], 2)).max() < 1e-12  # linear past the interface


def test_extra_columns_enter_space(rng):
    chain, prob, cg, a, _ = _setup(64)
    v = rng.standard_normal((cg.phi.shape[1], 2))
    rep = galerkin_solve(prob, cg, extra=v)
    assert rep.dofs == cg.n + 2
    h = reduced_hessian(prob, cg, rep.u, extra=v)
    assert h.shape == (cg.n + 2, cg.n + 2)
    assert np.allclose(h, h.T, atol=1e-10)


def test_errors():
    chain, prob, cg, a, _ = _setup(64)
    with pytest.raises(DimensionMismatch):
        assemble_a0(cg, sp.identity(5))
    with pytest.raises(OracleCapExceeded):
        exact_a1_oracle(cg, a, cap=10)
    with pytest.raises(DimensionMismatch):
        galerkin_solve(prob, cg, extra=np.ones((3, 1)))
