"""End-to-end acceptance checks, one test per criterion.

Every test prints a single ``[NN] name: PASS|FAIL detail`` line (visible even
under capture) and then asserts. Thresholds are the contractual ones; where a
check fails, the failure is genuine and left visible.

Most checks drive the experiment configs under ``experiments/`` through the
same functions the command line uses.
"""

import functools
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from enrichqc import cli
from enrichqc.baselines import ForceBasedProblem, QNLProblem
from enrichqc.cgspace import Layout, Uniform, build_cgmap
from enrichqc.crack import crack_problem
from enrichqc.enrichment import EnrichmentConfig, block_lanczos, build_krylov_basis, seed_block, select_seeds
from enrichqc.model import (
    Chain,
    ChainProblem,
    DirichletExtrapolated,
    DirichletPinned,
    Harmonic,
    LennardJones,
    Zero,
    hessian,
)
from enrichqc.quadrature import QuadratureRows
from enrichqc.reduction import effective_system, exact_a1_oracle, interpolate_fine
from oracles import krylov_span, principal_angles, two_stage_minimizer

ROOT = Path(__file__).resolve().parents[1]
EXP = ROOT / "experiments"
OUT = Path(tempfile.mkdtemp(prefix="enrichqc-acceptance-"))
NORMS = ("w11", "h1", "w1inf")


@pytest.fixture
def verdict(capsys):
    def report(num, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{num:02d}] {name}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return report


def _cfg(name):
    return cli.load_config(EXP / f"{name}.ini")


@functools.lru_cache(maxsize=None)
def converge(name):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = cli.run_converge(_cfg(name), OUT)
    return res, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def compare(name):
    return cli.run_compare(_cfg(name), OUT)


def _w1inf(name, token):
    return compare(name)[token][4].w1inf


def _rates_ok(rates, target, tol):
    return all(abs(r - t) <= tol for r, t in zip(rates, target))


def _fmt(v):
    return "(" + ", ".join(f"{x:.3f}" for x in v) + ")"


def _enriched_bases(name):
    """Every Krylov basis produced by an enriched convergence config, with its operator and CG map."""
    cfg = _cfg(name)
    sched = cfg.get("enrichment", "m_schedule")
    for k, n in enumerate(cfg.get("study", "n_atoms")):
        chain = cli.build_chain(cfg, n)
        cg = build_cgmap(chain.free, cli.build_layout(cfg, n).discretize(n))
        if cfg.has("crack"):
            prob = crack_problem(cli.build_crack(cfg, n))
        else:
            prob = ChainProblem(chain, cli.build_force(cfg, n))
        m = sched[k] if sched else None
        kb = build_krylov_basis(prob, cg, cli.enrichment_config(cfg, m))
        yield f"{name}@N={n}", kb, prob.krylov_operator(), cg


# ---------------------------------------------------------------------------


def test_harmonic_stencil_exact(verdict):
    chain = Chain(64, Harmonic(4.0, 1.4), DirichletExtrapolated())
    row = hessian(chain).toarray()[32, 30:35].tolist()
    want = [-1.4, -4.0, 2 * 4.0 + 2 * 1.4, -4.0, -1.4]
    verdict(1, "stencil exactness", row == want, f"row {row}")


def test_patch_tests(verdict):
    worst = {}
    for pot in (Harmonic(4.0, 1.4), LennardJones.calibrated()):
        chain = Chain(256, pot, DirichletExtrapolated())
        prob = ChainProblem(chain, Zero())
        cg = build_cgmap(chain.free, Layout.two_region(Uniform(1 / 32)).discretize(256))
        kb = build_krylov_basis(prob, cg, EnrichmentConfig(6, 4))
        qr = QuadratureRows(cg, prob)
        for s in (0.01, -0.02):
            u = s * chain.x
            r = prob.residual(u)
            res = {
                "atomistic": r,
                "galerkin": cg.phi @ r,
                "enriched": np.concatenate([cg.phi @ r, kb.vectors.T @ r]),
                "qnl": QNLProblem(chain, Zero(), 128).residual(u),
                "force_based": ForceBasedProblem(chain, Zero(), 128).residual(u),
                "quadrature_rows": qr.internal(u),
            }
            for k, v in res.items():
                worst[k] = max(worst.get(k, 0.0), float(np.abs(v).max()))
    ok = all(v <= 1e-12 for v in worst.values())
    verdict(2, "patch tests", ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_oracle_matches_two_stage_minimizer(verdict, rng):
    errs = []
    for n in (64, 128):
        chain = Chain(n, Harmonic(4.0, 1.4), DirichletPinned())
        cg = build_cgmap(chain.free, Layout.two_region(Uniform(1 / 8)).discretize(n))
        a = hessian(chain)[chain.free][:, chain.free]
        f = cg.phi.T @ rng.standard_normal(cg.n)  # load in Range(Phi^T)
        p = effective_system(cg, a, f, with_a1=True).solve()
        u = interpolate_fine(cg, a, cg.mass @ p, f)
        u_ref, _ = two_stage_minimizer(a.toarray(), cg.phi.toarray(), f)
        errs.append(float(np.abs(u - u_ref).max()))
    verdict(3, "oracle equivalence", max(errs) <= 1e-10, f"max-norm gaps N=64,128: {errs[0]:.2e}, {errs[1]:.2e}")


def test_a1_localized_at_interface(verdict):
    n = 1024
    chain = Chain(n, Harmonic(4.0, 1.4), DirichletExtrapolated())
    cg = build_cgmap(chain.free, Layout.two_region(Uniform(8 / n)).discretize(n))
    a = ChainProblem(chain).krylov_operator()
    a1 = exact_a1_oracle(cg, a)
    rows = np.linalg.norm(a1, axis=1)
    dist = np.abs(np.arange(cg.n) - cg.row_of_atom[cg.partition.interfaces[0]])
    near, far = rows[dist <= 8].max(), rows[dist > 24].max()
    verdict(4, "A1 localization", near > 10 * far,
            f"near {near:.3f} far {far:.3f} ratio {near / far:.2f} (need > 10)")


def test_lanczos_invariants(verdict):
    worst = {"orth": 0.0, "leak": 0.0, "recur": 0.0}
    count = 0
    for name in ("enriched_uniform_table", "enriched_graded_table", "crack_enriched_table"):
        for _, kb, a, cg in _enriched_bases(name):
            v = kb.vectors
            worst["orth"] = max(worst["orth"], float(np.abs(v.T @ v - np.eye(kb.k)).max()))
            worst["leak"] = max(worst["leak"], float(np.abs(cg.apply_p(v)).max()))
            k1 = kb.k - kb.block_sizes[-1]
            r = cg.apply_q(a @ v[:, :k1]) - v @ kb.t_matrix()[:, :k1]
            worst["recur"] = max(worst["recur"], float(np.abs(r).max()))
            count += 1
    chain = Chain(64, Harmonic(4.0, 1.4), DirichletPinned())
    cg = build_cgmap(chain.free, Layout.two_region(Uniform(1 / 16)).discretize(64))
    a = ChainProblem(chain).krylov_operator()
    w = seed_block(cg, a, select_seeds(cg, 4))
    angle = 0.0
    for ell in range(4):
        kb = block_lanczos(lambda x: a @ x, cg.apply_q, w, ell)
        ref = krylov_span(lambda x: cg.apply_q(a @ x), w, ell)
        angle = max(angle, float(principal_angles(kb.vectors, ref).max()) if kb.k == ref.shape[1] else np.inf)
    ok = worst["orth"] <= 1e-10 and worst["leak"] <= 1e-10 and worst["recur"] <= 1e-8 and angle <= 1e-8
    verdict(5, "Lanczos invariants", ok,
            f"{count} bases: orth {worst['orth']:.1e} leak {worst['leak']:.1e} "
            f"recurrence {worst['recur']:.1e}; span angle {angle:.1e}")


def test_full_recovery_uniform(verdict):
    (res, _) = converge("enriched_uniform_table")
    err = [c[4] for c in res["cells"] if c[1] == 512][0]
    vals = [err.norm(k) for k in NORMS]
    verdict(6, "full recovery, uniform mesh", max(vals) <= 1e-12,
            "N=512 " + " ".join(f"{k}={v:.2e}" for k, v in zip(NORMS, vals)))


def test_enriched_graded_scaling(verdict):
    (res, _) = converge("enriched_graded_table")
    vals = [(c[1], c[2], c[4].w1inf) for c in res["cells"]]
    verdict(7, "enriched graded scaling", all(v <= 1e-10 for _, _, v in vals),
            " ".join(f"N={n},m={m}:{v:.1e}" for n, m, v in vals))


def test_point_force_rates(verdict):
    (res, secs) = converge("point_force_rates")
    target = {
        "galerkin": (1.93, 1.47, 0.93),
        "galerkin@graded": (2.00, 1.50, 1.00),
        "qnl": (2.00, 1.52, 1.01),
        "force_based": (1.00, 1.00, 1.00),
    }
    fits = {t: res["fits"][t][0] for t in target}
    ok = all(_rates_ok(fits[t], target[t], 0.15) for t in target) and secs <= 300
    verdict(8, "point-force rates", ok,
            " ".join(f"{t}={_fmt(fits[t])}" for t in target) + f" in {secs:.1f}s")


def test_prefactor_ordering(verdict):
    (res, _) = converge("point_force_rates")
    c = {t: res["fits"][t][1][2] for t in ("galerkin@graded", "qnl", "force_based")}
    ok = c["galerkin@graded"] * 10 <= c["qnl"] and c["galerkin@graded"] * 100 <= c["force_based"]
    verdict(9, "prefactor ordering", ok,
            f"W1inf prefactors graded {c['galerkin@graded']:.2e} qnl {c['qnl']:.2e} "
            f"force_based {c['force_based']:.2e}")


def test_nonlocal_force_degradation(verdict):
    (res, _) = converge("full_sine_rates")
    fits = {t: res["fits"][t][0] for t in ("galerkin", "qnl", "force_based")}
    rates_ok = all(_rates_ok(r, (1.0, 1.0, 1.0), 0.15) for r in fits.values())
    g = compare("full_sine_galerkin")["galerkin"][4]
    e = compare("full_sine_enriched_m12")["enriched"][4]
    gain_max = g.parts["linf"] / e.parts["linf"]
    gain_w1inf = g.w1inf / e.w1inf
    ok = rates_ok and gain_max >= 5 and gain_w1inf >= 5
    verdict(10, "nonlocal-force degradation", ok,
            " ".join(f"{t}={_fmt(r)}" for t, r in fits.items())
            + f"; enriched gain at N=256: max|e| {gain_max:.2f}x, W1inf {gain_w1inf:.2f}x")


def test_quadrature_subdominant(verdict):
    rel = {}
    for base in ("galerkin", "enriched"):
        a, b = _w1inf("quadrature_effect", base), _w1inf("quadrature_effect", base + "+quad")
        rel[base] = abs(b - a) / a
    verdict(11, "quadrature subdominance", max(rel.values()) <= 0.10,
            " ".join(f"{k} change {100 * v:.3f}%" for k, v in rel.items()))


def test_crack_rates(verdict):
    (res, _) = converge("crack_rates")
    target = {"galerkin": (2.00, 1.50, 1.00), "qnl": (1.00, 1.00, 1.00), "force_based": (1.91, 1.50, 1.00)}
    fits = {t: res["fits"][t][0] for t in target}
    ok = all(_rates_ok(fits[t], target[t], 0.2) for t in target)
    verdict(12, "crack rates", ok, " ".join(f"{t}={_fmt(fits[t])} want {_fmt(target[t])}" for t in target))


def test_crack_enriched_stability(verdict):
    (res, _) = converge("crack_enriched_table")
    worst = [(c[1], max(c[4].norm(k) for k in NORMS)) for c in res["cells"]]
    verdict(13, "crack enriched stability", all(v <= 1e-10 for _, v in worst),
            " ".join(f"N={n}:{v:.1e}" for n, v in worst))


def test_bifurcation_agreement(verdict):
    t0 = time.perf_counter()
    res = cli.run_bifurcate(_cfg("crack_bifurcation"), OUT)
    secs = time.perf_counter() - t0
    a, g = res["atomistic"], res["galerkin"]
    msgs, ok = [], secs <= 120
    for br in ("up", "down"):
        fa, fg = a.folds.get(br), g.folds.get(br)
        if fa is None or fg is None:
            ok = False
            msgs.append(f"{br} fold: atomistic {fa} galerkin {fg}")
        else:
            ok &= abs(fa - fg) <= 0.02 * abs(fa)
            msgs.append(f"{br} fold {fa:.6g} vs {fg:.6g}")
    for label, r in (("atomistic", a), ("galerkin", g)):
        mid = r.branch("middle")
        outer = r.branch("up") + r.branch("down")
        ok &= bool(mid) and all(p.negative_count == 1 for p in mid)
        ok &= all(p.negative_count == 0 for p in outer)
        msgs.append(f"{label}: {len(mid)} middle points")
    verdict(14, "bifurcation agreement", ok, "; ".join(msgs) + f" in {secs:.1f}s")


def test_five_region_coupling(verdict):
    g = _w1inf("crack_five_region", "galerkin+quad")
    e = _w1inf("crack_five_region", "enriched+quad")
    verdict(15, "five-region coupling", e <= 0.1 * g, f"W1inf galerkin {g:.2e} enriched {e:.2e} ratio {e / g:.1e}")
