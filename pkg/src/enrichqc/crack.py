"""One-dimensional lattice crack: the upper chain of a symmetric two-chain model.

Atoms ``0..N-1`` (0-based). The left end is free and carries the traction
load ``P`` through the first two atoms; the right end is pinned. The first
``n_broken - 1`` vertical bonds are cracked (constant surface energy
``gamma0`` each), atom ``n_broken - 1`` is the crack tip with the breakable
bond ``gamma(u)``, and every atom to its right has a harmonic vertical bond
``K2 (u/eps)^2``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .baselines import ForceBasedProblem, QNLProblem
from .cgspace import CGMap
from .model import Chain, ChainProblem, Harmonic, Traction, Zero
from .reduction import SolveReport, galerkin_solve, reduced_hessian
from .solvers import SolverError, newton

METHODS = ("atomistic", "galerkin", "enriched", "qnl", "force_based")


class BranchLost(RuntimeError):
    pass


@dataclass(frozen=True)
class CrackModel:
    """Crack parameters on top of a traction-loaded chain.

    ``gamma_scaling = "printed"`` keeps the ``1/eps^2`` of the tip-bond
    integrand; ``"unscaled"`` drops it. ``vertical = "harmonic"`` gives the
    intact bonds right of the tip the energy ``K2 (u/eps)^2``;
    ``"breakable"`` gives them the tip-bond energy ``gamma`` instead (only
    then can the equilibrium path fold).
    """

    chain: Chain = field(default_factory=lambda: Chain(1024, Harmonic(4.0, 0.4), Traction(1.0)))
    k2: float = 0.5
    u_cut: float = 0.5
    n_broken: int = 514
    gamma_scaling: str = "printed"
    vertical: str = "harmonic"

    def __post_init__(self):
        if not isinstance(self.chain.boundary, Traction):
            raise ValueError("crack model needs a traction boundary")
        if not self.k2 > 0 or not self.u_cut > 0:
            raise ValueError("need K2 > 0 and u_cut > 0")
        if not 1 <= self.n_broken < self.chain.n_atoms - 1:
            raise ValueError(f"crack tip {self.n_broken} outside [1, {self.chain.n_atoms - 1})")
        if self.gamma_scaling not in ("printed", "unscaled"):
            raise ValueError(f"unknown gamma scaling {self.gamma_scaling!r}")
        if self.vertical not in ("harmonic", "breakable"):
            raise ValueError(f"unknown vertical bond model {self.vertical!r}")

    @property
    def load(self) -> float:
        return self.chain.boundary.load

    @property
    def tip(self) -> int:
        """0-based index of the tip atom."""
        return self.n_broken - 1

    @property
    def epsilon(self) -> float:
        return self.chain.epsilon

    def with_load(self, p: float) -> "CrackModel":
        return replace(self, chain=self.chain.with_boundary(Traction(p)))

    # -- tip bond ----------------------------------------------------------

    @property
    def _gamma_coef(self):
        c = self.k2 / self.u_cut**2
        return c / self.epsilon**2 if self.gamma_scaling == "printed" else c

    @property
    def gamma0(self) -> float:
        uc = self.u_cut
        return self._gamma_coef * uc**4 / 12.0

    def gamma_derivs(self, u):
        """``gamma``, ``gamma'`` and ``gamma''`` (zero integrand outside ``[0, u_cut]``)."""
        u = np.asarray(u, dtype=float)
        uc, c = self.u_cut, self._gamma_coef
        v = np.clip(u, 0.0, uc)
        g = c * (v**4 / 4 - 2 * uc * v**3 / 3 + uc**2 * v**2 / 2)
        inside = (u >= 0) & (u <= uc)
        dg = np.where(inside, c * u * (u - uc) ** 2, 0.0)
        d2g = np.where(inside, c * (u - uc) * (3 * u - uc), 0.0)
        return g, dg, d2g


def gamma(u, model: CrackModel):
    """Tip-bond energy; constant ``gamma0`` beyond the cutoff."""
    g, _, _ = model.gamma_derivs(u)
    return g if np.ndim(u) else float(g)


def traction_forces(model: CrackModel):
    """``(f1, f2)`` on the first two atoms, from the linearized bond constants."""
    k0, k1 = model.chain.potential.linearized()
    p = model.load
    return (k0 + 2 * k1) / (k0 + 4 * k1) * p, 2 * k1 / (k0 + 4 * k1) * p


def crack_energy(model: CrackModel, u) -> float:
    """Total energy: lattice bonds, surface energy, tip bond, intact vertical bonds, load."""
    u = np.asarray(u, dtype=float)
    chain, eps, t = model.chain, model.epsilon, model.tip
    f1, f2 = traction_forces(model)
    e = chain.bond_energy(u)
    e += (model.n_broken - 1) * model.gamma0 + float(gamma(u[t], model))
    if model.vertical == "breakable":
        e += float(np.sum(gamma(u[t + 1:], model)))
    else:
        e += model.k2 * float(np.sum((u[t + 1:] / eps) ** 2))
    return e - f1 * u[0] - f2 * u[1]


@dataclass(frozen=True)
class CrackProblem:
    """Problem protocol for a crack model on top of an energy/force base.

    ``base`` supplies the lattice part (exact, QNL or force-based); the
    on-site vertical bonds are added unchanged.
    """

    model: CrackModel
    base: object

    def __getattr__(self, name):
        # delegate n_atoms, epsilon, x, free, potential, load, point_load, embed
        return getattr(self.base, name)

    @property
    def linear(self):
        return False

    @property
    def point_load(self):
        return True

    def onsite(self, u):
        """``eps^2``-scaled on-site gradient and curvature per atom."""
        m, eps2 = self.model, self.model.epsilon**2
        t = m.tip
        g = np.zeros(self.n_atoms)
        c = np.zeros(self.n_atoms)
        if m.vertical == "breakable":
            _, dg, d2g = m.gamma_derivs(u[t:])
            g[t:], c[t:] = eps2 * dg, eps2 * d2g
        else:
            _, dg, d2g = m.gamma_derivs(u[t])
            g[t], c[t] = eps2 * dg, eps2 * d2g
            g[t + 1:] = 2 * m.k2 * u[t + 1:]
            c[t + 1:] = 2 * m.k2
        return g, c

    def residual(self, u):
        g, _ = self.onsite(u)
        return self.base.residual(u) + g[self.free]

    def jacobian(self, u):
        _, c = self.onsite(u)
        return (self.base.jacobian(u) + sp.diags(c[self.free])).tocsr()

    def krylov_operator(self, u=None):
        u = np.zeros(self.n_atoms) if u is None else u
        j = self.jacobian(u)
        return (0.5 * (j + j.T)).tocsr()

    def residual_scale(self):
        return self.base.residual_scale()


def crack_problem(model: CrackModel, method: str = "atomistic", interface_index: int | None = None):
    """The crack problem for a solution method (QNL/force-based need ``interface_index``)."""
    if method in ("atomistic", "galerkin", "enriched"):
        base = ChainProblem(model.chain, Zero())
    elif method == "qnl":
        base = QNLProblem(model.chain, Zero(), _iface(model, interface_index))
    elif method == "force_based":
        base = ForceBasedProblem(model.chain, Zero(), _iface(model, interface_index))
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return CrackProblem(model, base)


def _iface(model, k):
    if k is None:
        raise ValueError("quasicontinuum baselines need an interface index")
    if not 0 < k < model.chain.n_atoms - 1:
        raise ValueError(f"interface index {k} outside the chain")
    return k


def solve_crack(model: CrackModel, method: str = "atomistic", cg: CGMap | None = None,
                enrichment=None, interface_index: int | None = None, tol: float = 1e-12,
                max_iters: int = 50, u0=None, quadrature: bool = False) -> SolveReport:
    """Newton equilibrium of the crack model.

    ``galerkin``/``enriched`` need ``cg``; ``enriched`` also takes an
    :class:`~enrichqc.enrichment.EnrichmentConfig` or a prebuilt basis, which
    stays frozen through the Newton iteration.
    """
    t0 = time.perf_counter()
    if interface_index is None and cg is not None and cg.partition.interfaces:
        interface_index = cg.partition.interfaces[0]
    prob = crack_problem(model, method, interface_index)
    if method in ("galerkin", "enriched"):
        if cg is None:
            raise ValueError(f"method {method!r} needs a CG map")
        extra = None
        info = {}
        if method == "enriched":
            from .enrichment import EnrichmentConfig, build_krylov_basis, extend_space

            kb = enrichment
            if kb is None or isinstance(kb, EnrichmentConfig):
                kb = build_krylov_basis(prob, cg, kb or EnrichmentConfig())
            extra = extend_space(cg, kb).extra
            info = {"krylov_dim": kb.k}
        c0 = None
        if u0 is not None:
            from .reduction import GalerkinSpace

            sp_ = GalerkinSpace(cg, extra)
            c0 = _project_coeffs(sp_, np.asarray(u0)[cg.free])
        rep = galerkin_solve(prob, cg, extra, tol=tol, max_iters=max_iters,
                             coeffs0=c0, method_tag=method + ("+quad" if quadrature else ""),
                             quadrature=quadrature)
        rep.extra.update(info)
        rep.extra["basis"] = extra
    else:
        free = prob.free
        x0 = np.zeros(free.size) if u0 is None else np.asarray(u0, dtype=float)[free]
        res = newton(lambda v: prob.residual(prob.embed(v)), lambda v: prob.jacobian(prob.embed(v)),
                     x0, tol=tol * prob.residual_scale(), max_iters=max_iters, step_control="halving")
        rep = SolveReport(u=prob.embed(res.x), coeffs=res.x, residual_norm=res.residual,
                          newton_iters=res.iterations, method_tag=method, dofs=free.size,
                          extra={"history": res.history})
    rep.seconds = time.perf_counter() - t0
    return rep


def _project_coeffs(space, v):
    """Least-squares coefficients of ``v`` in the (possibly extended) Galerkin space."""
    x = space.columns()
    x = x.toarray() if sp.issparse(x) else x
    return np.linalg.lstsq(x, v, rcond=None)[0]


# ---------------------------------------------------------------------------
# bifurcation diagrams


@dataclass
class BranchPoint:
    load: float
    u: np.ndarray
    min_eigenvalue: float
    stable: bool
    method_tag: str
    branch: str = ""
    negative_count: int = 0

    def row(self, tip):
        return (self.load, float(self.u[0]), float(self.u[tip]), self.min_eigenvalue,
                int(self.stable), self.method_tag)


BRANCH_HEADER = ("P", "u_1", "u_n", "min_eigenvalue", "stable_flag", "method_tag")


def hessian_spectrum(model: CrackModel, u, method="atomistic", cg: CGMap | None = None,
                     extra=None, k: int = 2) -> np.ndarray:
    """``k`` smallest eigenvalues of the scaled Hessian.

    Reduced methods use the projected Hessian ``X H X^T`` against the Gram
    matrix ``X X^T`` of the basis; the inertia is that of ``X H X^T``.
    """
    prob = crack_problem(model, "atomistic")
    if method in ("galerkin", "enriched"):
        from .reduction import GalerkinSpace

        h = reduced_hessian(prob, cg, u, extra)
        x = GalerkinSpace(cg, extra).columns()
        x = x.toarray() if sp.issparse(x) else x
        k = min(k, h.shape[0])
        return sla.eigh(0.5 * (h + h.T), x.T @ x, eigvals_only=True, subset_by_index=[0, k - 1])
    j = prob.jacobian(u).toarray()
    k = min(k, j.shape[0])
    return sla.eigh(0.5 * (j + j.T), eigvals_only=True, subset_by_index=[0, k - 1])


def min_hessian_eigenvalue(model: CrackModel, u, method="atomistic", cg: CGMap | None = None,
                           extra=None) -> float:
    return float(hessian_spectrum(model, u, method, cg, extra, k=1)[0])


@dataclass
class SweepResult:
    points: list
    lost: list  # (branch, load, message) where continuation stopped
    folds: dict  # branch label -> last converged load before the branch was lost

    def branch(self, label):
        return [b for b in self.points if b.branch == label]

    def rows(self, tip):
        return [b.row(tip) for b in self.points]


def bifurcation_sweep(model: CrackModel, method: str = "atomistic", load_range=(0.0, 1.0),
                      steps: int = 50, cg: CGMap | None = None, enrichment=None,
                      tol: float = 1e-10, fold_tol: float = 1e-4, middle_guesses: int = 8,
                      spectrum: int = 3, jump_factor: float = 1.0) -> SweepResult:
    """Load continuation upward and downward plus a middle-branch search.

    Each branch is followed with Newton warm starts on a uniform load grid.
    A step is rejected when Newton fails or when some component deviates
    from the secant prediction by more than ``jump_factor`` times its own
    predicted increment, which is how a jump to another branch past a fold
    shows up. Rejected
    steps are bisected; once the step falls below ``fold_tol`` times the
    grid spacing the branch is declared lost there, and the last converged
    load is the fold estimate. Middle-branch points are sought at
    loads covered by both outer branches, from convex combinations of the
    two outer states.
    """
    lo, hi = load_range
    if not hi > lo or steps < 2:
        raise ValueError("need load_range with hi > lo and steps >= 2")
    grid = np.linspace(lo, hi, steps)
    lost, folds = [], {}

    def point(p, u, label):
        m = model.with_load(p)
        rep = solve_crack(m, method, cg, enrichment=enrichment, tol=tol, u0=u)
        ev = hessian_spectrum(m, rep.u, method, cg, rep.extra.get("basis"), k=spectrum)
        return BranchPoint(float(p), rep.u, float(ev[0]), bool(ev[0] > 0), method, label,
                           int(np.sum(ev < 0)))

    def follow(loads, label):
        try:
            out = [point(loads[0], None, label)]
        except SolverError as exc:
            lost.append((label, float(loads[0]), f"no equilibrium: {exc}"))
            return []
        h = loads[1] - loads[0]
        k = 1
        step = h
        while k < len(loads):
            q = out[-1].load
            target = loads[k] if abs(loads[k] - q) <= abs(step) * (1 + 1e-12) else q + step
            try:
                b = point(target, out[-1].u, label)
                if len(out) > 1:
                    a, c = out[-2], out[-1]
                    inc = (c.u - a.u) * (target - q) / (c.load - a.load)
                    dev = np.abs(b.u - c.u - inc)
                    ref = np.abs(inc) + 1e-2 * np.max(np.abs(inc))
                    if np.any(dev > jump_factor * ref + 1e-14):
                        raise SolverError(f"state jumped at P={target}")
            except SolverError as exc:
                step *= 0.5
                if abs(step) < fold_tol * abs(h):
                    lost.append((label, float(q), f"continuation lost past P={q}: {exc}"))
                    folds[label] = float(q)
                    break
                continue
            out.append(b)
            if np.isclose(target, loads[k], rtol=0, atol=1e-12 * max(1.0, abs(h))):
                k += 1
                step = h
        return out

    up = follow(grid, "up")
    down = follow(grid[::-1], "down")
    points = up + down

    key = lambda p: round(p, 9)
    upd = {key(b.load): b for b in up}
    dnd = {key(b.load): b for b in down}
    seen = [b.u for b in points]
    for p in sorted(set(upd) & set(dnd)):
        ua, ub = upd[p].u, dnd[p].u
        scale = max(1.0, float(np.max(np.abs(ua))))
        if np.max(np.abs(ua - ub)) < 1e-8 * scale:
            continue
        for t in np.linspace(0, 1, middle_guesses + 2)[1:-1]:
            try:
                b = point(upd[p].load, (1 - t) * ua + t * ub, "middle")
            except SolverError:
                continue
            if all(np.max(np.abs(b.u - s)) > 1e-6 * scale for s in seen):
                points.append(b)
                seen.append(b.u)
                break
    if lost:
        warnings.warn(f"{len(lost)} branch(es) ended early; first: {lost[0][2]}")
    return SweepResult(points, lost, folds)
