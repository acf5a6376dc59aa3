import numpy as np
import pytest

from enrichqc.cgspace import Layout, Uniform, build_cgmap
from enrichqc.enrichment import (
    EnrichmentConfig,
    RankDeficient,
    SeedExhausted,
    approx_a1,
    block_lanczos,
    build_krylov_basis,
    extend_space,
    seed_block,
    select_seeds,
    solve_enriched,
)
from enrichqc.model import Chain, ChainProblem, DirichletPinned, Harmonic, PointForce, solve_atomistic
from enrichqc.reduction import complement_basis, exact_a1_oracle, galerkin_solve, solve_standard_galerkin
from oracles import krylov_span, principal_angles


def _setup(n=128, h=1 / 16, force=None):
    chain = Chain(n, Harmonic(4.0, 1.4), DirichletPinned())
    prob = ChainProblem(chain, force or PointForce(n // 2 + 1))
    cg = build_cgmap(chain.free, Layout.two_region(Uniform(h)).discretize(n))
    a = prob.krylov_operator()
    return chain, prob, cg, a


def test_config_validation():
    with pytest.raises(ValueError):
        EnrichmentConfig(m=-1)
    with pytest.raises(ValueError):
        EnrichmentConfig(atomistic_share=1.5)


def test_seed_selection_splits_across_interface():
    _, _, cg, _ = _setup()
    rows = select_seeds(cg, 6, 0.5)
    atoms = cg.node_atoms[rows]
    assert atoms.tolist() == [48, 56, 64, 65, 66, 67]
    assert select_seeds(cg, 0).size == 0


def test_lanczos_invariants():
    _, _, cg, a = _setup()
    kb = build_krylov_basis(ChainProblem(Chain(128, Harmonic(4.0, 1.4), DirichletPinned())), cg,
                            EnrichmentConfig(6, 4))
    v = kb.vectors
    assert np.allclose(v.T @ v, np.eye(kb.k), atol=1e-12)
    assert np.abs(cg.phi @ v).max() < 1e-12
    t = kb.t_matrix()
    assert np.allclose(v.T @ (a @ v), t, atol=1e-10)
    # block three-term recurrence on all but the last block
    k_last = kb.k - kb.block_sizes[-1]
    lhs = cg.apply_q(a @ v[:, :k_last])
    assert np.allclose(lhs, v @ t[:, :k_last], atol=1e-10)
    # seed block recovered
    w = seed_block(cg, a, kb.seed_rows)
    assert np.allclose(kb.blocks()[0] @ kb.seed_factor, w, atol=1e-12)


@pytest.mark.parametrize("ell", [0, 1, 3])
def test_span_matches_direct_krylov(ell):
    _, _, cg, a = _setup()
    w = seed_block(cg, a, select_seeds(cg, 4))
    kb = block_lanczos(lambda x: a @ x, cg.apply_q, w, ell)
    ref = krylov_span(lambda x: cg.apply_q(a @ x), w, ell)
    assert kb.k == ref.shape[1]
    assert principal_angles(kb.vectors, ref).max() < 1e-6
    if ell == 0:
        assert kb.block_sizes == [4]


def test_approx_a1_converges_to_oracle():
    _, _, cg, a = _setup(64, 1 / 8)
    exact = exact_a1_oracle(cg, a)
    errs = []
    for ell in range(0, 8):
        kb = block_lanczos(lambda x: a @ x, cg.apply_q, seed_block(cg, a, select_seeds(cg, 4)), ell)
        kb.seed_rows = select_seeds(cg, 4)
        s = kb.seed_rows
        errs.append(np.abs(approx_a1(kb, cg)[np.ix_(s, s)] - exact[np.ix_(s, s)]).max())
    assert errs[-1] < 1e-3 * errs[0]
    assert all(b <= a * (1 + 1e-8) + 1e-14 for a, b in zip(errs, errs[1:]))


def test_error_monotone_in_depth():
    # load just inside the continuum, where the interface enrichment matters
    chain, prob, cg, a = _setup(force=PointForce(60))
    exact = solve_atomistic(chain, prob.force)
    ad = a.toarray()

    def energy_err(u):
        e = (u - exact)[chain.free]
        return float(e @ ad @ e)

    errs = [energy_err(solve_standard_galerkin(prob, cg).u)]
    for ell in range(4):
        errs.append(energy_err(solve_enriched(prob, cg, EnrichmentConfig(6, ell)).u))
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2 * errs[0]


def test_full_complement_recovers_atomistic():
    chain, prob, cg, _ = _setup(64, 1 / 8)
    rep = galerkin_solve(prob, cg, extra=complement_basis(cg).T)
    exact = solve_atomistic(chain, prob.force)
    assert np.abs(rep.u - exact).max() <= 1e-11 * np.abs(exact).max()


def test_basis_decays_away_from_interface():
    _, _, cg, a = _setup(512, 1 / 32)
    kb = build_krylov_basis(ChainProblem(Chain(512, Harmonic(4.0, 1.4), DirichletPinned())), cg,
                            EnrichmentConfig(6, 3))
    mag = np.abs(kb.vectors).max(axis=1)
    x = (cg.free - 256) / 512.0
    near = mag[np.abs(x) < 0.05].max()
    far = mag[np.abs(x) > 0.35].max()
    assert far < 1e-3 * near


def test_error_paths():
    chain, prob, cg, a = _setup()
    with pytest.raises(SeedExhausted):
        build_krylov_basis(prob, cg, EnrichmentConfig(m=0))
    with pytest.raises(SeedExhausted):
        block_lanczos(lambda x: a @ x, cg.apply_q, cg.phi[:3].T.toarray(), 2)
    kb = build_krylov_basis(prob, cg, EnrichmentConfig(4, 1))
    kb.vectors = np.hstack([kb.vectors, kb.vectors[:, :1]])
    with pytest.raises(RankDeficient):
        extend_space(cg, kb)
