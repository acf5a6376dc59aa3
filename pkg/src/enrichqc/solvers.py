"""Direct linear solves and Newton's method shared by every solver path."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonConvergence(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class SingularJacobian(SingularSystem):
    pass


# reciprocal condition number below which a factorization is rejected
RCOND_MIN = 1e-14
STAGNATION = 64 * np.finfo(float).eps


def direct_solve(matrix, rhs, symmetry: str = "general") -> np.ndarray:
    """Solve ``matrix @ x = rhs`` by a direct factorization.

    ``symmetry`` is one of ``"spd"`` (Cholesky), ``"symmetric"`` (LDL via
    ``assume_a='sym'``) or ``"general"`` (LU). Sparse inputs go through
    SuperLU. Raises :class:`SingularSystem` for (numerically) singular input.
    """
    if symmetry not in ("spd", "symmetric", "general"):
        raise ValueError(f"unknown symmetry {symmetry!r}")
    rhs = np.asarray(rhs, dtype=float)
    if sp.issparse(matrix):
        return _sparse_solve(sp.csc_matrix(matrix), rhs)

    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if a.shape[0] == 0:
        return np.zeros_like(rhs)
    anorm = np.linalg.norm(a, 1)
    if anorm == 0.0:
        raise SingularSystem("zero matrix")
    if symmetry == "spd":
        try:
            c = sla.cho_factor(a, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"Cholesky failed: {exc}") from exc
        rcond = _rcond_from_diag(np.diag(c[0]) ** 2)
        if rcond < RCOND_MIN:
            raise SingularSystem(f"SPD matrix numerically singular (rcond~{rcond:.2e})")
        return sla.cho_solve(c, rhs, check_finite=False)

    with warnings.catch_warnings():
        # singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=False)
    rcond = _lu_rcond(lu, anorm)
    if not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise SingularSystem(f"matrix numerically singular (rcond~{rcond:.2e})")
    return sla.lu_solve((lu, piv), rhs, check_finite=False)


def _rcond_from_diag(d):
    d = np.abs(d)
    if d.max() == 0.0:
        return 0.0
    return d.min() / d.max()


def _lu_rcond(lu, anorm):
    (gecon,) = sla.get_lapack_funcs(("gecon",), (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0:
        return 0.0
    return float(rcond)


def _sparse_solve(a, rhs):
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularSystem(str(exc)) from exc
    d = np.abs(lu.U.diagonal())
    if d.size and (d.min() <= RCOND_MIN * d.max()):
        raise SingularSystem("sparse matrix numerically singular (tiny pivot)")
    return lu.solve(rhs)


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def newton(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], object],
    u0,
    tol: float = 1e-12,
    max_iters: int = 50,
    step_control: str = "none",
    symmetry: str = "general",
) -> NewtonResult:
    """Newton iteration until ``max|residual| <= tol``.

    Iteration also stops once the Newton update is below roundoff relative to
    ``x`` (the residual cannot be reduced further in floating point).
    ``step_control='halving'`` backtracks (up to 30 halvings) whenever a full
    step increases the max-norm residual.
    """
    if step_control not in ("none", "halving"):
        raise ValueError(f"unknown step_control {step_control!r}")
    x = np.array(u0, dtype=float, copy=True)
    r = np.asarray(residual_fn(x), dtype=float)
    rn = float(np.max(np.abs(r))) if r.size else 0.0
    history = [rn]
    it = 0
    while rn > tol:
        if it >= max_iters:
            raise NonConvergence(f"Newton: {max_iters} iterations, residual {rn:.3e} > {tol:.1e}")
        jac = jacobian_fn(x)
        try:
            dx = direct_solve(jac, -r, symmetry=symmetry)
        except SingularSystem as exc:
            raise SingularJacobian(str(exc)) from exc
        if np.max(np.abs(dx)) <= STAGNATION * np.max(np.abs(x)):
            # update below roundoff of the iterate: the residual is at its floor
            log.debug("newton stagnated at residual %.3e", rn)
            break
        step = 1.0
        x_new = x + dx
        r_new = np.asarray(residual_fn(x_new), dtype=float)
        rn_new = float(np.max(np.abs(r_new)))
        if step_control == "halving":
            k = 0
            while not (rn_new < rn) and k < 30:
                step *= 0.5
                x_new = x + step * dx
                r_new = np.asarray(residual_fn(x_new), dtype=float)
                rn_new = float(np.max(np.abs(r_new)))
                k += 1
        if not np.isfinite(rn_new):
            raise NonConvergence("Newton produced a non-finite residual")
        x, r, rn = x_new, r_new, rn_new
        it += 1
        history.append(rn)
        log.debug("newton it=%d residual=%.3e step=%.3g", it, rn, step)
    return NewtonResult(x, it, rn, history)
