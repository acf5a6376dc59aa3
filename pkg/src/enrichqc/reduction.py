"""Effective coarse model and the (possibly extended) Galerkin solver.

For a quadratic energy the exact coarse equation is ``(A0 - A1) p = Phi f``
with ``A0 = Phi A Phi^T`` and the Schur correction
``A1 = Phi A Psi^T (Psi A Psi^T)^{-1} Psi A Phi^T``. Dropping ``A1`` is the
standard Galerkin method; :func:`galerkin_solve` also accepts extra basis
vectors, which is how the enriched method reuses it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cgspace import CGMap
from .quadrature import QuadratureRows
from .solvers import newton

ORACLE_CAP = 4096


class DimensionMismatch(ValueError):
    pass


class OracleCapExceeded(ValueError):
    pass


@dataclass
class SolveReport:
    u: np.ndarray  # reconstructed displacement on all atoms
    coeffs: np.ndarray
    residual_norm: float
    newton_iters: int
    method_tag: str
    dofs: int = 0
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class EffectiveSystem:
    a0: np.ndarray
    rhs: np.ndarray
    mass: sp.csr_matrix
    a1: np.ndarray | None = None

    def solve(self):
        """Coefficients ``p`` of ``(A0 - A1) p = Phi f`` (``A1`` omitted if absent)."""
        a = self.a0 if self.a1 is None else self.a0 - self.a1
        return sla.solve(np.asarray(a), self.rhs)


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def assemble_a0(cg: CGMap, a):
    """``A0 = Phi A Phi^T`` (sparse in, sparse out)."""
    if a.shape != (cg.phi.shape[1], cg.phi.shape[1]):
        raise DimensionMismatch(f"A is {a.shape}, Phi is {cg.phi.shape}")
    if sp.issparse(a):
        return (cg.phi @ a @ cg.phi.T).tocsr()
    return cg.phi @ (cg.phi @ np.asarray(a)).T


def complement_basis(cg: CGMap) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of ``Range(Phi^T)``."""
    return sla.null_space(cg.phi.toarray()).T


def exact_a1_oracle(cg: CGMap, a, cap: int = ORACLE_CAP) -> np.ndarray:
    """Dense ``A1`` through an explicit complement basis ``Psi`` (O(N^3))."""
    nf = cg.phi.shape[1]
    if nf > cap:
        raise OracleCapExceeded(f"{nf} free atoms exceed the oracle cap {cap}")
    if a.shape != (nf, nf):
        raise DimensionMismatch(f"A is {a.shape}, Phi is {cg.phi.shape}")
    psi = complement_basis(cg)
    if psi.shape[0] == 0:
        return np.zeros((cg.n, cg.n))
    ad = _dense(a)
    phi = cg.phi.toarray()
    coupling = psi @ ad @ phi.T  # Psi A Phi^T
    inner = psi @ ad @ psi.T
    return coupling.T @ sla.solve(inner, coupling)


def effective_system(cg: CGMap, a, load, with_a1: bool = False) -> EffectiveSystem:
    """Effective coarse system for scaled stiffness ``a`` and scaled load ``load`` (free atoms)."""
    a0 = _dense(assemble_a0(cg, a))
    a1 = exact_a1_oracle(cg, a) if with_a1 else None
    return EffectiveSystem(a0, cg.phi @ load, cg.mass, a1)


def interpolate_fine(cg: CGMap, a, q, load) -> np.ndarray:
    """Minimizer of the constrained problem at fixed ``q = Phi u``.

    ``u = R q + Q_u A^{-1} f`` with ``R = A^{-1} Phi^T (Phi A^{-1} Phi^T)^{-1}``.
    """
    ad = _dense(a)
    phi = cg.phi.toarray()
    ainv_phit = sla.solve(ad, phi.T)
    s = phi @ ainv_phit
    r = ainv_phit @ sla.inv(s)
    ainv_f = sla.solve(ad, load)
    return r @ q + ainv_f - r @ (phi @ ainv_f)


# ---------------------------------------------------------------------------
# Galerkin engine


class GalerkinSpace:
    """Rows of ``Phi`` plus optional dense extra columns ``V`` (free-atom vectors)."""

    def __init__(self, cg: CGMap, extra=None):
        self.cg = cg
        self.extra = np.zeros((cg.phi.shape[1], 0)) if extra is None else np.asarray(extra)
        if self.extra.shape[0] != cg.phi.shape[1]:
            raise DimensionMismatch("extra basis vectors must live on the free atoms")

    @property
    def dim(self):
        return self.cg.n + self.extra.shape[1]

    def reconstruct(self, c):
        n = self.cg.n
        return self.cg.phi.T @ c[:n] + self.extra @ c[n:]

    def project(self, r):
        return np.concatenate([self.cg.phi @ r, self.extra.T @ r])

    def project_matrix(self, j):
        """``X J X^T`` (sparse when there are no extra vectors)."""
        phi, v = self.cg.phi, self.extra
        pj = phi @ j
        if v.shape[1] == 0:
            return (pj @ phi.T).tocsr()
        jv = j @ v
        top = np.hstack([(pj @ phi.T).toarray(), phi @ jv])
        bottom = np.hstack([(phi @ (j.T @ v)).T, v.T @ jv])
        return np.vstack([top, bottom])

    def columns(self):
        """``X^T`` as a (dense if enriched) ``N_free x dim`` operator."""
        if self.extra.shape[1] == 0:
            return self.cg.phi.T.tocsr()
        return np.hstack([self.cg.phi.T.toarray(), self.extra])


def galerkin_solve(problem, cg: CGMap, extra=None, quadrature: bool = False,
                   tol: float = 1e-12, max_iters: int = 50, coeffs0=None,
                   method_tag: str = "galerkin") -> SolveReport:
    """Force-balance Galerkin projection of ``problem`` onto ``Phi`` (+ ``extra``).

    Solves ``X r(X^T c) = 0`` by Newton, where ``r`` is the scaled atomistic
    residual on the free atoms; with ``quadrature=True`` the rows of nodes
    deep in the continuum use the Cauchy-Born midpoint rule instead. On-site
    terms (``problem.onsite(u)``, if present) are pointwise and stay exactly
    summed on those rows.
    """
    t0 = time.perf_counter()
    if not np.array_equal(cg.free, problem.free):
        raise DimensionMismatch("CG map and problem disagree on the free atoms")
    space = GalerkinSpace(cg, extra)
    qr = QuadratureRows(cg, problem) if quadrature else None
    rows = qr.rows if qr is not None else np.array([], dtype=int)
    eps2 = problem.epsilon**2
    xt = space.columns()
    onsite = getattr(problem, "onsite", None) if rows.size else None
    phi_rows = cg.phi[rows] if onsite is not None else None

    def fine(c):
        return problem.embed(space.reconstruct(c))

    def residual(c):
        u = fine(c)
        rc = space.project(problem.residual(u))
        if rows.size:
            rc[rows] = qr.internal(u) - eps2 * qr.load
            if onsite is not None:
                rc[rows] += phi_rows @ onsite(u)[0][problem.free]
        return rc

    def jacobian(c):
        u = fine(c)
        jc = space.project_matrix(problem.jacobian(u))
        if rows.size:
            jq = qr.jacobian(u)
            if onsite is not None:
                jq = jq + phi_rows @ sp.diags(onsite(u)[1][problem.free])
            jq = jq @ xt
            if sp.issparse(jc):
                jc = jc.tolil()
                jq = sp.csr_matrix(jq)
                for i, r in enumerate(rows):
                    jc[r, :] = jq[i, :]
                jc = jc.tocsr()
            else:
                jc[rows, :] = jq.toarray() if sp.issparse(jq) else jq
        return jc

    c0 = np.zeros(space.dim) if coeffs0 is None else np.asarray(coeffs0, dtype=float)
    res = newton(residual, jacobian, c0, tol=tol * problem.residual_scale(),
                 max_iters=max_iters, step_control="halving")
    return SolveReport(
        u=fine(res.x),
        coeffs=res.x,
        residual_norm=res.residual,
        newton_iters=res.iterations,
        method_tag=method_tag,
        dofs=space.dim,
        seconds=time.perf_counter() - t0,
        extra={"history": res.history},
    )


def solve_standard_galerkin(problem, cg: CGMap, quadrature: bool = False, **kw) -> SolveReport:
    """Standard Galerkin on ``X0 = Range(Phi^T)``."""
    kw.setdefault("method_tag", "galerkin" + ("+quad" if quadrature else ""))
    return galerkin_solve(problem, cg, None, quadrature=quadrature, **kw)


def reduced_hessian(problem, cg: CGMap, u, extra=None) -> np.ndarray:
    """``X J(u) X^T``, used for stability of reduced equilibria."""
    space = GalerkinSpace(cg, extra)
    return _dense(space.project_matrix(problem.jacobian(u)))
