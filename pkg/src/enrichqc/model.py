"""One-dimensional atomistic chain with first- and second-neighbour bonds.

Conventions
-----------
Atoms are indexed ``0..N-1`` with reference positions ``x_i = i * eps`` and
``eps = 1/N``. A bond of order ``k`` (k = 1, 2) between atoms ``i`` and
``i + k`` has reference length ``k * eps``; its energy is ``U_k(s)`` with the
scaled stretch ``s = (u_{i+k} - u_i) / eps``.

The total energy is ``V(u) = sum_bonds U_k(s) - sum_i f_i u_i``. Everything
that feeds a linear solve is multiplied by ``eps**2`` so that the harmonic
interior stiffness row is ``[-K1, -K0, 2K0+2K1, -K0, -K1]`` and the load is
``eps**2 * f``.

Boundary atoms that do not have a full stencil see *ghost* atoms. Their
displacements are a linear function of the real displacements (zero for the
pinned variant, quadratic extrapolation for the extrapolated one); the ghost
values are substituted into the equilibrium equations of the real atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.sparse as sp

from .solvers import NonConvergence, SingularSystem, newton

# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Harmonic:
    """Harmonic springs measured from the reference bond lengths."""

    k0: float = 4.0
    k1: float = 1.4

    def __post_init__(self):
        if not self.k0 > 0 or not self.k1 >= 0:
            raise ValueError(f"need K0 > 0 and K1 >= 0, got {self.k0}, {self.k1}")

    def bond(self, s, order):
        """Energy, first and second derivative of ``U_order`` at stretch ``s``."""
        k = np.where(np.asarray(order) == 1, self.k0, self.k1)
        s = np.asarray(s, dtype=float)
        return 0.5 * k * s * s, k * s, k * np.ones_like(s)

    def linearized(self):
        return self.k0, self.k1


@dataclass(frozen=True)
class LennardJones:
    """12-6 potential ``depth * ((sigma/r)**12 - 2 (sigma/r)**6)`` in units of eps.

    Use :meth:`calibrated` for the parameterization where the undeformed
    chain (first and second neighbours) is stress free and the first-neighbour
    curvature equals ``k0``.
    """

    depth: float
    sigma: float

    def __post_init__(self):
        if not self.depth > 0 or not self.sigma > 0:
            raise ValueError("LennardJones needs depth > 0 and sigma > 0")

    @classmethod
    def calibrated(cls, k0: float = 4.0) -> "LennardJones":
        # U'(1) + 2 U'(2) = 0  <=>  sigma^6 = (1 + 2^-6) / (1 + 2^-12)
        a = (1.0 + 2.0**-6) / (1.0 + 2.0**-12)
        depth = k0 / (156.0 * a * a - 84.0 * a)
        return cls(depth=depth, sigma=a ** (1.0 / 6.0))

    def pair(self, r):
        r = np.asarray(r, dtype=float)
        x6 = (self.sigma / r) ** 6
        x12 = x6 * x6
        e = self.depth * (x12 - 2.0 * x6)
        de = self.depth * (-12.0 * x12 + 12.0 * x6) / r
        d2e = self.depth * (156.0 * x12 - 84.0 * x6) / (r * r)
        return e, de, d2e

    def bond(self, s, order):
        return self.pair(np.asarray(order, dtype=float) + np.asarray(s, dtype=float))

    def linearized(self):
        _, _, k0 = self.pair(1.0)
        _, _, k1 = self.pair(2.0)
        return float(k0), float(k1)


Potential = Union[Harmonic, LennardJones]

# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class DirichletPinned:
    """``u_0 = u_{N-1} = 0``; ghost atoms outside the chain are pinned at zero."""


@dataclass(frozen=True)
class DirichletExtrapolated:
    """``u_0 = u_{N-1} = 0``; ghost atoms from one-sided quadratic extrapolation."""


@dataclass(frozen=True)
class Traction:
    """Free left end carrying load ``load``; right end pinned (crack model only)."""

    load: float = 1.0


BoundaryCondition = Union[DirichletPinned, DirichletExtrapolated, Traction]


def ghost_extrapolation(u_interior) -> float:
    """Ghost displacement one site beyond ``u_interior[0]``.

    Solves ``(u_2 - u_0) / 2 = (-3 u_1 + 4 u_2 - u_3) / 2`` for ``u_0``
    (atoms numbered from the boundary), i.e. ``u_0 = 3 u_1 - 3 u_2 + u_3``.
    Exact on quadratic sequences.
    """
    u1, u2, u3 = (float(v) for v in u_interior[:3])
    return 3.0 * u1 - 3.0 * u2 + u3


# ---------------------------------------------------------------------------
# external forces


@dataclass(frozen=True)
class Zero:
    def values(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class PointForce:
    """Force ``magnitude`` on atom ``index`` (0-based)."""

    index: int
    magnitude: float = 1.0

    def values(self, x):
        x = np.asarray(x, dtype=float)
        if not 0 <= self.index < x.size:
            raise ValueError(f"point force index {self.index} outside [0, {x.size})")
        f = np.zeros_like(x)
        f[self.index] = self.magnitude
        return f


@dataclass(frozen=True)
class HalfSine:
    """``sin(pi x)`` on ``(1/2, 1]``, zero elsewhere."""

    def values(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0.5, np.sin(np.pi * x), 0.0)


@dataclass(frozen=True)
class FullSine:
    """``sin(pi x)`` on the whole chain."""

    def values(self, x):
        return np.sin(np.pi * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Custom:
    data: tuple

    def values(self, x):
        v = np.asarray(self.data, dtype=float)
        if v.shape != np.shape(x):
            raise ValueError(f"custom force has length {v.size}, chain has {np.size(x)}")
        return v


ExternalForce = Union[Zero, PointForce, HalfSine, FullSine, Custom]


def is_point_force(f) -> bool:
    return isinstance(f, PointForce)


# ---------------------------------------------------------------------------
# chain

_PAD = 2  # ghost atoms on each side


@dataclass(frozen=True)
class Chain:
    n_atoms: int
    potential: Potential = field(default_factory=Harmonic)
    boundary: BoundaryCondition = field(default_factory=DirichletExtrapolated)

    def __post_init__(self):
        if self.n_atoms < 8:
            raise ValueError(f"need at least 8 atoms, got {self.n_atoms}")

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n_atoms

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.n_atoms) * self.epsilon

    @cached_property
    def free(self) -> np.ndarray:
        """Indices of atoms carrying unknowns."""
        n = self.n_atoms
        if isinstance(self.boundary, Traction):
            return np.arange(0, n - 1)
        return np.arange(1, n - 1)

    def with_boundary(self, boundary) -> "Chain":
        return Chain(self.n_atoms, self.potential, boundary)

    # -- topology ----------------------------------------------------------

    @cached_property
    def ghost_map(self) -> sp.csr_matrix:
        """``(N+4) x N`` map from real displacements to the padded vector."""
        n = self.n_atoms
        rows = list(range(_PAD, _PAD + n))
        cols = list(range(n))
        vals = [1.0] * n
        if isinstance(self.boundary, DirichletExtrapolated):
            # quadratic through the three outermost atoms, evaluated at -1 and -2
            for ghost, w in ((-1, (3.0, -3.0, 1.0)), (-2, (6.0, -8.0, 3.0))):
                for j, wj in enumerate(w):
                    rows.append(_PAD + ghost)
                    cols.append(j)
                    vals.append(wj)
                    rows.append(_PAD + n - 1 - ghost)
                    cols.append(n - 1 - j)
                    vals.append(wj)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n + 2 * _PAD, n))

    @cached_property
    def bonds(self):
        """``(a, b, order)`` in padded indices; only bonds touching a real atom."""
        n = self.n_atoms
        a_list, b_list, o_list = [], [], []
        lo = 0 if isinstance(self.boundary, Traction) else -_PAD
        for order in (1, 2):
            a = np.arange(lo, n + _PAD - order)
            b = a + order
            keep = (b >= 0) & (a <= n - 1)
            a_list.append(a[keep])
            b_list.append(b[keep])
            o_list.append(np.full(keep.sum(), order))
        return (np.concatenate(a_list) + _PAD, np.concatenate(b_list) + _PAD,
                np.concatenate(o_list))

    def padded(self, u) -> np.ndarray:
        return self.ghost_map @ np.asarray(u, dtype=float)

    def embed(self, u_free) -> np.ndarray:
        u = np.zeros(self.n_atoms)
        u[self.free] = u_free
        return u

    # -- bond kernels ------------------------------------------------------

    def bond_energy(self, u) -> float:
        a, b, order = self.bonds
        ue = self.padded(u)
        e, _, _ = self.potential.bond((ue[b] - ue[a]) / self.epsilon, order)
        return float(np.sum(e))

    def internal_gradient(self, u) -> np.ndarray:
        """``eps**2 * dV_bonds/du_i`` for every real atom, ghosts substituted."""
        a, b, order = self.bonds
        eps = self.epsilon
        ue = self.padded(u)
        _, de, _ = self.potential.bond((ue[b] - ue[a]) / eps, order)
        g = eps * de
        m = ue.size
        grad = np.bincount(b, weights=g, minlength=m) - np.bincount(a, weights=g, minlength=m)
        return grad[_PAD:_PAD + self.n_atoms]

    def internal_stiffness(self, u) -> sp.csr_matrix:
        """``N x N`` derivative of :meth:`internal_gradient` (ghost map applied)."""
        a, b, order = self.bonds
        eps = self.epsilon
        ue = self.padded(u)
        _, _, c = self.potential.bond((ue[b] - ue[a]) / eps, order)
        m = ue.size
        h = sp.coo_matrix(
            (np.concatenate([c, c, -c, -c]),
             (np.concatenate([a, b, a, b]), np.concatenate([a, b, b, a]))),
            shape=(m, m),
        ).tocsr()
        return (h[_PAD:_PAD + self.n_atoms] @ self.ghost_map).tocsr()


# ---------------------------------------------------------------------------
# chain + load: the problem protocol used by every solver


@dataclass(frozen=True)
class ChainProblem:
    """A chain under a fixed external force.

    Implements the interface the reduced solvers consume: ``residual`` and
    ``jacobian`` act on the free atoms and are ``eps**2`` scaled.
    """

    chain: Chain
    force: ExternalForce = field(default_factory=Zero)

    @property
    def n_atoms(self):
        return self.chain.n_atoms

    @property
    def epsilon(self):
        return self.chain.epsilon

    @property
    def x(self):
        return self.chain.x

    @property
    def free(self):
        return self.chain.free

    @property
    def potential(self):
        return self.chain.potential

    @property
    def linear(self) -> bool:
        return isinstance(self.chain.potential, Harmonic)

    @cached_property
    def load(self) -> np.ndarray:
        """External force per atom, unscaled."""
        f = np.asarray(self.force.values(self.chain.x), dtype=float)
        if isinstance(self.chain.boundary, Traction):
            f = f + traction_load(self.chain)
        return f

    @property
    def point_load(self) -> bool:
        return is_point_force(self.force) or isinstance(self.chain.boundary, Traction)

    def embed(self, u_free):
        return self.chain.embed(u_free)

    def residual(self, u) -> np.ndarray:
        g = self.chain.internal_gradient(u) - self.epsilon**2 * self.load
        return g[self.free]

    def jacobian(self, u) -> sp.csr_matrix:
        k = self.chain.internal_stiffness(u)
        return k[self.free][:, self.free].tocsr()

    def krylov_operator(self, u=None) -> sp.csr_matrix:
        """Symmetric stiffness for building Krylov spaces.

        Extrapolated boundary rows are nonsymmetric; their pinned counterpart
        is used instead (the boundary lies far from any interface).
        """
        chain = self.chain
        if isinstance(chain.boundary, DirichletExtrapolated):
            chain = chain.with_boundary(DirichletPinned())
        u = np.zeros(self.n_atoms) if u is None else u
        k = chain.internal_stiffness(u)
        return k[self.free][:, self.free].tocsr()

    def residual_scale(self) -> float:
        s = float(np.max(np.abs(self.epsilon**2 * self.load[self.free]))) if self.free.size else 0.0
        return max(s, self.epsilon**2)


def traction_load(chain: Chain) -> np.ndarray:
    """Loads on the first two atoms producing a uniform gradient near the free end."""
    k0, k1 = chain.potential.linearized()
    p = chain.boundary.load
    f = np.zeros(chain.n_atoms)
    f[0] = (k0 + 2 * k1) / (k0 + 4 * k1) * p
    f[1] = 2 * k1 / (k0 + 4 * k1) * p
    return f


# ---------------------------------------------------------------------------
# public operations


def total_energy(chain: Chain, u, f: ExternalForce = Zero()) -> float:
    """Bond energy (ghosts substituted) minus the work of the external force."""
    u = np.asarray(u, dtype=float)
    _check_field(chain, u)
    return chain.bond_energy(u) - float(np.dot(f.values(chain.x), u))


def force(chain: Chain, u, f: ExternalForce = Zero()) -> np.ndarray:
    """Net force ``-dV/du_i`` per atom; zero on constrained atoms.

    Ghost displacements are substituted into the equations of the atoms next
    to the boundary, so for the extrapolated boundary this is not the
    gradient of :func:`total_energy` in the first and last rows.
    """
    u = np.asarray(u, dtype=float)
    _check_field(chain, u)
    out = np.zeros(chain.n_atoms)
    g = -chain.internal_gradient(u) / chain.epsilon**2 + f.values(chain.x)
    out[chain.free] = g[chain.free]
    return out


def hessian(chain: Chain, u=None) -> sp.csr_matrix:
    """Scaled force-constant matrix ``eps**2 d^2V/du^2`` (``N x N``).

    Rows and columns of constrained atoms are replaced by identity rows.
    """
    n = chain.n_atoms
    u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
    k = chain.internal_stiffness(u).tolil()
    fixed = np.setdiff1d(np.arange(n), chain.free)
    for i in fixed:
        k[i, :] = 0.0
        k[:, i] = 0.0
        k[i, i] = 1.0
    return k.tocsr()


def solve_atomistic(chain: Chain, f: ExternalForce = Zero(), tol: float = 1e-12,
                    max_iters: int = 50, u0=None) -> np.ndarray:
    """Reference (fully atomistic) equilibrium displacement."""
    return solve_problem(ChainProblem(chain, f), tol=tol, max_iters=max_iters, u0=u0)


def solve_problem(problem, tol=1e-12, max_iters=50, u0=None, step_control="halving"):
    """Newton on the free atoms of any problem exposing residual/jacobian."""
    free = problem.free
    x0 = np.zeros(free.size) if u0 is None else np.asarray(u0, dtype=float)[free]
    scale = problem.residual_scale()
    res = newton(
        lambda v: problem.residual(problem.embed(v)),
        lambda v: problem.jacobian(problem.embed(v)),
        x0,
        tol=tol * scale,
        max_iters=max_iters,
        step_control=step_control,
    )
    return problem.embed(res.x)


def _check_field(chain, u):
    if u.shape != (chain.n_atoms,):
        raise ValueError(f"displacement must have length {chain.n_atoms}, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("displacement has non-finite entries")


__all__ = [
    "Chain", "ChainProblem", "Harmonic", "LennardJones", "DirichletPinned",
    "DirichletExtrapolated", "Traction", "Zero", "PointForce", "HalfSine", "FullSine",
    "Custom", "ghost_extrapolation", "total_energy", "force", "hessian",
    "solve_atomistic", "solve_problem", "NonConvergence", "SingularSystem",
]
