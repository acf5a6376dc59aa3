"""Cauchy-Born continuum and midpoint quadrature on coarse elements.

Quadrature replaces the Galerkin rows of nodes whose whole support lies in
non-interbedded continuum elements. Every other row (atomistic, interface,
interbedded, enriched) keeps exact summation over atoms, which is what makes
the interbedded band a transition zone of quasi-atoms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .cgspace import CGMap
from .model import _PAD, Traction


@dataclass(frozen=True)
class CauchyBorn:
    """Energy density per unit cell of the homogeneously deformed chain.

    Functions take the scaled strain ``s = F - 1``; :meth:`energy`,
    :meth:`stress` and :meth:`stiffness` take the deformation gradient ``F``.
    """

    potential: object

    def w(self, s):
        e1, _, _ = self.potential.bond(s, 1)
        e2, _, _ = self.potential.bond(2.0 * np.asarray(s, dtype=float), 2)
        return e1 + e2

    def dw(self, s):
        _, d1, _ = self.potential.bond(s, 1)
        _, d2, _ = self.potential.bond(2.0 * np.asarray(s, dtype=float), 2)
        return d1 + 2.0 * d2

    def d2w(self, s):
        _, _, c1 = self.potential.bond(s, 1)
        _, _, c2 = self.potential.bond(2.0 * np.asarray(s, dtype=float), 2)
        return c1 + 4.0 * c2

    def energy(self, F):
        return self.w(np.asarray(F, dtype=float) - 1.0)

    def stress(self, F):
        return self.dw(np.asarray(F, dtype=float) - 1.0)

    def stiffness(self, F):
        return self.d2w(np.asarray(F, dtype=float) - 1.0)


def cauchy_born(potential) -> CauchyBorn:
    return CauchyBorn(potential)


class QuadratureRows:
    """Midpoint-rule replacement of the Galerkin rows deep in the continuum.

    All quantities are ``eps**2`` scaled like the exact residual rows.
    """

    def __init__(self, cg: CGMap, problem):
        self.cg = cg
        self.problem = problem
        self.cb = CauchyBorn(problem.potential)
        part = cg.partition
        quad = {(e.a, e.b) for e in part.quadrature_elements}
        nodes = list(part.nodes)
        chain = getattr(problem, "chain", None)
        free_layer = _PAD if chain is not None and isinstance(chain.boundary, Traction) else 0
        pos = {int(a): i for i, a in enumerate(nodes)}
        rows = []
        for r, a in enumerate(cg.node_atoms):
            i = pos[int(a)]
            if 0 < i < len(nodes) - 1 and (nodes[i - 1], a) in quad and (a, nodes[i + 1]) in quad:
                if nodes[i - 1] < free_layer:
                    continue  # hat reaches the loaded free end: keep exact summation
                rows.append(r)
        self.rows = np.array(rows, dtype=int)
        self.elements = [e for e in part.quadrature_elements]
        col = {int(a): j for j, a in enumerate(cg.free)}
        self._col = col

    def _element_strains(self, u):
        eps = self.problem.epsilon
        a = np.array([e.a for e in self.elements], dtype=int)
        b = np.array([e.b for e in self.elements], dtype=int)
        h = (b - a).astype(float)
        return a, b, h, (u[b] - u[a]) / (h * eps)

    def internal(self, u) -> np.ndarray:
        """Quadrature internal force for every row of ``cg`` (zero off ``rows``)."""
        out = np.zeros(self.cg.n)
        if not self.elements:
            return out[self.rows]
        eps = self.problem.epsilon
        a, b, h, s = self._element_strains(u)
        p = eps * self.cb.dw(s)
        rmap = self.cg.row_of_atom
        for ai, bi, pi in zip(a, b, p):
            if ai in rmap:
                out[rmap[ai]] -= pi
            if bi in rmap:
                out[rmap[bi]] += pi
        return out[self.rows]

    def jacobian(self, u) -> sp.csr_matrix:
        """Derivative of :meth:`internal` w.r.t. the free-atom displacements."""
        rows, cols, vals = [], [], []
        if self.elements:
            a, b, h, s = self._element_strains(u)
            k = self.cb.d2w(s) / h
            rmap = self.cg.row_of_atom
            for ai, bi, ki in zip(a, b, k):
                for node, sign in ((ai, -1.0), (bi, 1.0)):
                    if node not in rmap:
                        continue
                    for other, osign in ((ai, -1.0), (bi, 1.0)):
                        if other in self._col:
                            rows.append(rmap[node])
                            cols.append(self._col[other])
                            vals.append(sign * osign * ki)
        full = sp.csr_matrix((vals, (rows, cols)), shape=(self.cg.n, self.cg.free.size))
        return full[self.rows]

    @cached_property
    def load(self) -> np.ndarray:
        """Quadrature of ``Phi f`` on the replaced rows (exact for point loads)."""
        prob = self.problem
        f = prob.load
        exact = self.cg.phi @ f[self.cg.free]
        if prob.point_load:
            return exact[self.rows]
        out = np.zeros(self.cg.n)
        rmap = self.cg.row_of_atom
        x = prob.x
        for e in self.elements:
            fm = float(_force_at(prob, 0.5 * (x[e.a] + x[e.b])))
            for node in (e.a, e.b):
                if node in rmap:
                    out[rmap[node]] += 0.5 * e.atoms * fm
        return out[self.rows]


def _force_at(problem, x):
    return problem.force.values(np.array([x]))[0]


def assemble_quadrature(cg: CGMap, cb: CauchyBorn, problem, rule: str = "midpoint"):
    """Return ``(M_hat, F_hat, K_hat)`` for a linear (or linearized at zero) problem.

    Rows touching atomistic or interbedded elements are the exact sums
    ``Phi Phi^T``, ``Phi f`` and ``Phi A Phi^T``; the remaining rows use the
    midpoint rule on each element.
    """
    if rule != "midpoint":
        raise ValueError(f"only the midpoint rule is implemented, got {rule!r}")
    if cb.potential != problem.potential:
        raise ValueError("Cauchy-Born model and problem use different potentials")
    qr = QuadratureRows(cg, problem)
    u0 = np.zeros(problem.n_atoms)
    phi = cg.phi
    a = problem.jacobian(u0)
    m_hat = cg.mass.tolil()
    k_hat = (phi @ a @ phi.T).tolil()
    f_hat = phi @ (problem.epsilon**2 * problem.load[cg.free])

    rows = qr.rows
    if rows.size:
        k_rows = (qr.jacobian(u0) @ phi.T).tolil()
        rmap = cg.row_of_atom
        mq = sp.lil_matrix(m_hat.shape)
        for e in qr.elements:
            ra, rb = rmap.get(e.a), rmap.get(e.b)
            # midpoint rule on phi_i phi_j: every product equals 1/4 at the midpoint
            for r1 in (ra, rb):
                for r2 in (ra, rb):
                    if r1 is not None and r2 is not None:
                        mq[r1, r2] += 0.25 * e.atoms
        for i, r in enumerate(rows):
            k_hat[r, :] = k_rows[i, :]
            m_hat[r, :] = mq[r, :]
        f_hat[rows] = problem.epsilon**2 * qr.load
    return m_hat.tocsr(), f_hat, k_hat.tocsr()
