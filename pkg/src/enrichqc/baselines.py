"""Quasi-nonlocal and force-based quasicontinuum baselines.

Both keep every atom as a degree of freedom. The chain is split at
``interface_index``: atoms ``< interface_index`` are local (continuum),
the rest are nonlocal (atomistic). Boundary ghosts are handled exactly as
in :class:`enrichqc.model.Chain`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .model import _PAD, Chain, ChainProblem, ExternalForce, Traction, Zero
from .quadrature import CauchyBorn
from .reduction import SolveReport
from .solvers import newton


def _check_interface(chain: Chain, interface_index: int):
    if not 0 < interface_index < chain.n_atoms - 1:
        raise ValueError(f"interface index {interface_index} outside (0, {chain.n_atoms - 1})")


@dataclass(frozen=True)
class QNLProblem(ChainProblem):
    """Quasi-nonlocal coupling.

    A second-neighbour bond ``(j, j+2)`` is kept exactly when both ends are
    nonlocal; otherwise it is replaced by ``(U2(2 r_j) + U2(2 r_{j+1})) / 2``
    on the two nearest-neighbour bonds it spans. Splitting per site instead
    (half of the bond to each end) would reintroduce ghost forces.
    """

    interface_index: int = 0

    @cached_property
    def terms(self):
        """``(a, b, order, factor, weight)`` in padded indices."""
        chain = self.chain
        n = chain.n_atoms
        lo = 0 if isinstance(chain.boundary, Traction) else -_PAD
        hi = n - 1 + _PAD
        local = lambda j: j < self.interface_index
        a_, b_, o_, f_, w_ = [], [], [], [], []

        def add(a, b, order, factor, weight):
            if b < 0 or a > n - 1:
                return  # touches no real atom
            a_.append(a), b_.append(b), o_.append(order), f_.append(factor), w_.append(weight)

        for j in range(lo, hi):
            add(j, j + 1, 1, 1.0, 1.0)
        for j in range(lo, hi - 1):
            if local(j):
                add(j, j + 1, 2, 2.0, 0.5)
                add(j + 1, j + 2, 2, 2.0, 0.5)
            else:
                add(j, j + 2, 2, 1.0, 1.0)
        arr = lambda v, t=float: np.asarray(v, dtype=t)
        return (arr(a_, int) + _PAD, arr(b_, int) + _PAD, arr(o_, int), arr(f_), arr(w_))

    def _stretch(self, u):
        a, b, order, fac, w = self.terms
        ue = self.chain.padded(u)
        return fac * (ue[b] - ue[a]) / self.epsilon

    def energy(self, u) -> float:
        a, b, order, fac, w = self.terms
        e, _, _ = self.potential.bond(self._stretch(u), order)
        return float(np.sum(w * e)) - float(np.dot(self.load, u))

    def internal_gradient(self, u):
        a, b, order, fac, w = self.terms
        _, de, _ = self.potential.bond(self._stretch(u), order)
        g = self.epsilon * w * fac * de
        m = self.n_atoms + 2 * _PAD
        grad = np.bincount(b, weights=g, minlength=m) - np.bincount(a, weights=g, minlength=m)
        return grad[_PAD:_PAD + self.n_atoms]

    def internal_stiffness(self, u) -> sp.csr_matrix:
        a, b, order, fac, w = self.terms
        _, _, c = self.potential.bond(self._stretch(u), order)
        c = w * fac * fac * c
        m = self.n_atoms + 2 * _PAD
        h = sp.coo_matrix((np.concatenate([c, c, -c, -c]),
                           (np.concatenate([a, b, a, b]), np.concatenate([a, b, b, a]))),
                          shape=(m, m)).tocsr()
        return (h[_PAD:_PAD + self.n_atoms] @ self.chain.ghost_map).tocsr()

    def residual(self, u):
        g = self.internal_gradient(u) - self.epsilon**2 * self.load
        return g[self.free]

    def jacobian(self, u):
        return self.internal_stiffness(u)[self.free][:, self.free].tocsr()


@dataclass(frozen=True)
class ForceBasedProblem(ChainProblem):
    """Row-wise mixing: atomistic forces on nonlocal atoms, local Cauchy-Born forces elsewhere.

    The local force on atom ``i`` is ``W'(r_i) - W'(r_{i-1})`` with the
    Cauchy-Born density ``W(s) = U1(s) + U2(2 s)``; the resulting system has
    no energy and is nonsymmetric near the interface.
    """

    interface_index: int = 0

    @cached_property
    def _local_rows(self):
        return np.arange(self.n_atoms) < self.interface_index

    def _local_gradient(self, u):
        cb = CauchyBorn(self.potential)
        ue = self.chain.padded(u)
        eps = self.epsilon
        r = np.diff(ue) / eps  # r[k] is the bond between padded k and k+1
        p = eps * cb.dw(r)
        if isinstance(self.chain.boundary, Traction):
            p[:_PAD] = 0.0  # free end: no bonds to the left of atom 0
        i = np.arange(self.n_atoms) + _PAD
        # d/du_i of sum W(r): W'(r_{i-1}) - W'(r_i)
        return p[i - 1] - p[i]

    def _local_stiffness(self, u):
        cb = CauchyBorn(self.potential)
        ue = self.chain.padded(u)
        eps = self.epsilon
        c = cb.d2w(np.diff(ue) / eps)
        if isinstance(self.chain.boundary, Traction):
            c[:_PAD] = 0.0
        n, m = self.n_atoms, ue.size
        i = np.arange(n) + _PAD
        rows = np.concatenate([np.arange(n)] * 3)
        cols = np.concatenate([i - 1, i, i + 1])
        vals = np.concatenate([-c[i - 1], c[i - 1] + c[i], -c[i]])
        k = sp.csr_matrix((vals, (rows, cols)), shape=(n, m))
        return (k @ self.chain.ghost_map).tocsr()

    def residual(self, u):
        g = np.where(self._local_rows, self._local_gradient(u), self.chain.internal_gradient(u))
        return (g - self.epsilon**2 * self.load)[self.free]

    def jacobian(self, u):
        loc = sp.diags(self._local_rows.astype(float))
        k = loc @ self._local_stiffness(u) + (sp.identity(self.n_atoms) - loc) @ self.chain.internal_stiffness(u)
        return sp.csr_matrix(k)[self.free][:, self.free].tocsr()


def _solve(problem, tag, tol, max_iters, u0):
    t0 = time.perf_counter()
    free = problem.free
    x0 = np.zeros(free.size) if u0 is None else np.asarray(u0, dtype=float)[free]
    res = newton(lambda v: problem.residual(problem.embed(v)),
                 lambda v: problem.jacobian(problem.embed(v)),
                 x0, tol=tol * problem.residual_scale(), max_iters=max_iters,
                 step_control="halving")
    return SolveReport(u=problem.embed(res.x), coeffs=res.x, residual_norm=res.residual,
                       newton_iters=res.iterations, method_tag=tag, dofs=free.size,
                       seconds=time.perf_counter() - t0, extra={"history": res.history})


def solve_qnl(chain: Chain, interface_index: int, f: ExternalForce = Zero(), tol: float = 1e-12,
              max_iters: int = 50, u0=None) -> SolveReport:
    """Quasi-nonlocal QC with every atom a rep-atom."""
    _check_interface(chain, interface_index)
    return _solve(QNLProblem(chain, f, interface_index), "qnl", tol, max_iters, u0)


def solve_force_based(chain: Chain, interface_index: int, f: ExternalForce = Zero(),
                      tol: float = 1e-12, max_iters: int = 50, u0=None) -> SolveReport:
    """Force-based QC with every atom a rep-atom."""
    _check_interface(chain, interface_index)
    return _solve(ForceBasedProblem(chain, f, interface_index), "force_based", tol, max_iters, u0)
