"""Enriched interface bases from a block Krylov space of ``QA``.

The seed block is ``W = Q A Phi_s^T`` for a few coarse basis functions
``Phi_s`` around each atomistic/continuum interface. Block Lanczos (with
column-pivoted QR for deflation and full re-orthogonalization) returns an
orthonormal basis ``V`` of ``span{W, QAW, ..., (QA)^ell W}`` that lives in
the orthogonal complement of ``Range(Phi^T)``; the extended Galerkin space
is ``Range(Phi^T) + Range(V)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .cgspace import CGMap
from .reduction import GalerkinSpace, SolveReport, galerkin_solve


class SeedExhausted(RuntimeError):
    pass


class RankDeficient(RuntimeError):
    pass


class SingularT(RuntimeError):
    pass


@dataclass(frozen=True)
class EnrichmentConfig:
    """``m`` seed bases, Krylov depth ``ell``.

    ``atomistic_share`` is the fraction of the ``m`` seeds taken on the
    atomistic side of each interface (the rest on the continuum side).
    """

    m: int = 6
    ell: int = 5
    atomistic_share: float = 0.5
    deflation_tol: float = 1e-10

    def __post_init__(self):
        if self.m < 0 or self.ell < 0:
            raise ValueError("need m >= 0 and ell >= 0")
        if not 0.0 <= self.atomistic_share <= 1.0:
            raise ValueError("atomistic_share must lie in [0, 1]")


@dataclass
class KrylovBasis:
    vectors: np.ndarray  # N_free x k, orthonormal
    t_diag: list  # A_j blocks
    t_offdiag: list  # B_j blocks, B_j maps level j to level j+1 (p_{j+1} x p_j)
    block_sizes: list
    seed_factor: np.ndarray | None = None  # W = V_1 @ seed_factor
    seed_rows: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def blocks(self):
        out, start = [], 0
        for p in self.block_sizes:
            out.append(self.vectors[:, start:start + p])
            start += p
        return out

    def t_matrix(self) -> np.ndarray:
        sizes = self.block_sizes
        off = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        t = np.zeros((off[-1], off[-1]))
        for j, a in enumerate(self.t_diag):
            t[off[j]:off[j + 1], off[j]:off[j + 1]] = a
        for j, b in enumerate(self.t_offdiag):
            if j + 1 >= len(sizes):
                break
            t[off[j + 1]:off[j + 2], off[j]:off[j + 1]] = b
            t[off[j]:off[j + 1], off[j + 1]:off[j + 2]] = b.T
        return t


def _orthogonalize(z, basis, apply_q):
    """Project ``z`` off ``basis`` twice and back into the complement."""
    if basis is not None and basis.shape[1]:
        for _ in range(2):
            z = z - basis @ (basis.T @ z)
    return apply_q(z)


def _rrqr(z, tol, scale=0.0):
    """Rank-revealing QR: ``z = V @ B`` with ``V`` orthonormal.

    Directions with ``|R_ii| <= tol * max(|R_00|, scale)`` are dropped.
    """
    if z.shape[1] == 0:
        return z[:, :0], np.zeros((0, 0))
    q, r, piv = sla.qr(z, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0.0:
        return z[:, :0], np.zeros((0, z.shape[1]))
    p = int(np.sum(d > tol * max(d[0], scale)))
    b = np.empty((p, z.shape[1]))
    b[:, piv] = r[:p, :]
    return q[:, :p], b


def block_lanczos(apply_a, apply_q, seed, ell: int, deflation_tol: float = 1e-10,
                  scale: float = 0.0) -> KrylovBasis:
    """Orthonormal basis of ``span{W, (QA) W, ..., (QA)^ell W}``.

    ``apply_a`` and ``apply_q`` act on blocks of free-atom vectors. Every new
    block is re-orthogonalized against all earlier ones and re-projected by
    Q; directions whose pivoted-QR diagonal falls below ``deflation_tol``
    times the larger of the block's leading diagonal and ``scale`` (a norm
    estimate of ``A``, so near-invariant blocks are not promoted to noise)
    are dropped.
    """
    seed = np.asarray(seed, dtype=float)
    if seed.ndim == 1:
        seed = seed[:, None]
    # measured against the raw seed so a seed inside Range(Phi^T) counts as exhausted
    v, seed_factor = _rrqr(apply_q(seed), deflation_tol, float(np.linalg.norm(seed, axis=0).max()))
    if v.shape[1] == 0:
        raise SeedExhausted("seed block vanishes in the complement of Range(Phi^T)")
    basis = np.zeros((seed.shape[0], 0))
    t_diag, t_off, sizes = [], [], []
    v_prev = b_prev = None
    for j in range(ell + 1):
        basis = np.hstack([basis, v])
        sizes.append(v.shape[1])
        w = apply_q(apply_a(v))
        if v_prev is not None:
            w = w - v_prev @ b_prev.T
        a = v.T @ w
        a = 0.5 * (a + a.T)
        t_diag.append(a)
        if j == ell:
            break
        w = _orthogonalize(w - v @ a, basis, apply_q)
        vn, bn = _rrqr(w, deflation_tol, scale)
        if vn.shape[1] == 0:
            break  # invariant subspace reached
        vn = apply_q(vn - basis @ (basis.T @ vn))
        vn, r2 = sla.qr(vn, mode="economic")
        bn = r2 @ bn
        t_off.append(bn)
        v_prev, b_prev, v = v, bn, vn
    return KrylovBasis(basis, t_diag, t_off, sizes, seed_factor)


def select_seeds(cg: CGMap, m: int, atomistic_share: float = 0.5) -> np.ndarray:
    """Rows of ``Phi`` nearest the interfaces, split between both sides.

    The ``m`` seeds are spread over the interfaces; at each one the interface
    node and continuum nodes make up the continuum share and the atomistic
    share comes from the atoms just inside the atomistic region.
    """
    part = cg.partition
    ifaces = list(part.interfaces)
    if not ifaces or m == 0:
        return np.array([], dtype=int)
    rows_atoms = np.asarray(cg.node_atoms)
    chosen = []
    per = [m // len(ifaces) + (1 if k < m % len(ifaces) else 0) for k in range(len(ifaces))]
    for a, mk in zip(ifaces, per):
        at_right = a + 1 < part.n_atoms and part.atomistic[a + 1]
        n_at = int(round(mk * atomistic_share))
        n_co = mk - n_at
        if at_right:
            co = rows_atoms[rows_atoms <= a][::-1]
            at = rows_atoms[rows_atoms > a]
        else:
            co = rows_atoms[rows_atoms >= a]
            at = rows_atoms[rows_atoms < a][::-1]
        # only take atomistic nodes, not the far continuum on the other side
        at = np.array([k for k in at if part.atomistic[k]], dtype=int)
        picks = list(co[:n_co]) + list(at[:n_at])
        chosen.extend(cg.row_of_atom[int(k)] for k in picks)
    return np.array(sorted(set(chosen)), dtype=int)


def seed_block(cg: CGMap, a, rows) -> np.ndarray:
    """``W = Q A Phi_s^T`` for the selected rows ``Phi_s``."""
    phis = cg.phi[rows].T.toarray()
    return cg.apply_q(a @ phis)


def build_krylov_basis(problem, cg: CGMap, config: EnrichmentConfig, u=None) -> KrylovBasis:
    """Seeds, seed block and block Lanczos for ``problem`` (operator frozen at ``u``)."""
    a = problem.krylov_operator(u)
    rows = select_seeds(cg, config.m, config.atomistic_share)
    if rows.size == 0:
        raise SeedExhausted("no seed rows: the layout has no interface or m = 0")
    scale = float(abs(a).sum(axis=1).max())
    kb = block_lanczos(lambda x: a @ x, cg.apply_q, seed_block(cg, a, rows),
                       config.ell, config.deflation_tol, scale)
    kb.seed_rows = rows
    return kb


def extend_space(cg: CGMap, kb: KrylovBasis, tol: float = 1e-8) -> GalerkinSpace:
    """``Range(Phi^T) + Range(V)``; raises if the union is numerically rank deficient."""
    v = kb.vectors
    if v.shape[1]:
        s = sla.svdvals(v)
        leak = np.abs(cg.phi @ v).max() / max(1.0, float(np.abs(cg.phi.data).max()))
        if s.min() < tol or leak > math.sqrt(tol):
            raise RankDeficient(f"enriched basis degenerate (min sv {s.min():.2e}, leak {leak:.2e})")
    return GalerkinSpace(cg, v)


def solve_enriched(problem, cg: CGMap, basis, quadrature: bool = False, **kw) -> SolveReport:
    """Galerkin on the extended space.

    ``basis`` is either a :class:`KrylovBasis` or an :class:`EnrichmentConfig`
    (in which case the Krylov operator is frozen at the reference state).
    """
    t0 = time.perf_counter()
    kb = build_krylov_basis(problem, cg, basis) if isinstance(basis, EnrichmentConfig) else basis
    space = extend_space(cg, kb)
    kw.setdefault("method_tag", "enriched" + ("+quad" if quadrature else ""))
    rep = galerkin_solve(problem, cg, space.extra, quadrature=quadrature, **kw)
    rep.seconds = time.perf_counter() - t0
    rep.extra["krylov_dim"] = kb.k
    rep.extra["block_sizes"] = list(kb.block_sizes)
    return rep


def approx_a1(kb: KrylovBasis, cg: CGMap, cond_max: float = 1e12) -> np.ndarray:
    """Krylov estimate of the Schur correction on the seed rows.

    ``A1[s, s] ~ B0^T [T^{-1}]_{11} B0`` where ``W = V_1 B0``; it converges to
    the exact block as ``ell`` grows. Rows outside the seeds are zero.
    """
    t = kb.t_matrix()
    if t.size == 0:
        raise SingularT("empty Krylov basis")
    c = np.linalg.cond(t)
    if not np.isfinite(c) or c > cond_max:
        raise SingularT(f"block tridiagonal matrix is singular (cond {c:.2e})")
    p1 = kb.block_sizes[0]
    e1 = np.zeros((t.shape[0], p1))
    e1[:p1] = np.eye(p1)
    tinv11 = sla.solve(t, e1, assume_a="sym")[:p1]
    b0 = kb.seed_factor
    out = np.zeros((cg.n, cg.n))
    rows = kb.seed_rows
    out[np.ix_(rows, rows)] = b0.T @ tinv11 @ b0
    return out
