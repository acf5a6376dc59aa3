"""Discrete Sobolev error norms, convergence-rate fits and CSV emitters."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SATURATION = 1e-14  # errors below this are treated as machine-precision saturated
NORMS = ("w11", "h1", "w1inf")


class DegenerateFit(ValueError):
    pass


def fmt(v) -> str:
    """Round-trip float formatting (17 significant digits)."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


@dataclass
class ErrorReport:
    per_atom_error: np.ndarray
    w11: float
    h1: float
    w1inf: float
    method_tag: str = ""
    epsilon: float = 0.0
    # function and gradient parts separately (full norm = combination)
    parts: dict = field(default_factory=dict)

    def norm(self, name: str) -> float:
        return float(getattr(self, name))


def error_norms(e, epsilon: float, method_tag: str = "") -> ErrorReport:
    """``W^{1,1}``, ``H^1`` and ``W^{1,inf}`` norms of a per-atom error field.

    With ``De_j = (e_{j+1} - e_j) / eps``:
    ``w11 = eps * sum(|e| + |De|)``, ``h1 = sqrt(eps * sum(e^2 + De^2))``,
    ``w1inf = max(max|e|, max|De|)``.
    """
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("error field has non-finite entries")
    de = np.diff(e) / epsilon
    parts = {
        "l1": epsilon * float(np.sum(np.abs(e))),
        "w11_semi": epsilon * float(np.sum(np.abs(de))),
        "l2": math.sqrt(epsilon * float(np.sum(e * e))),
        "h1_semi": math.sqrt(epsilon * float(np.sum(de * de))),
        "linf": float(np.max(np.abs(e))) if e.size else 0.0,
        "w1inf_semi": float(np.max(np.abs(de))) if de.size else 0.0,
    }
    return ErrorReport(
        per_atom_error=e,
        w11=parts["l1"] + parts["w11_semi"],
        h1=math.sqrt(parts["l2"] ** 2 + parts["h1_semi"] ** 2),
        w1inf=max(parts["linf"], parts["w1inf_semi"]),
        method_tag=method_tag,
        epsilon=epsilon,
        parts=parts,
    )


@dataclass
class ConvergenceStudy:
    points: list  # (epsilon, ErrorReport)
    fitted_rates: tuple = ()
    fitted_prefactors: tuple = ()
    method_tag: str = ""

    def __post_init__(self):
        eps = [p[0] for p in self.points]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")

    def fit(self, min_points: int = 3) -> "ConvergenceStudy":
        rates, pref = [], []
        for name in NORMS:
            r, c = fit_rate([p[0] for p in self.points],
                            [p[1].norm(name) for p in self.points], min_points)
            rates.append(r)
            pref.append(c)
        self.fitted_rates = tuple(rates)
        self.fitted_prefactors = tuple(pref)
        return self


def fit_rate(eps: Sequence[float], err: Sequence[float], min_points: int = 3):
    """Least-squares ``log err = rate * log eps + log C``; returns ``(rate, C)``.

    Points below the saturation level are dropped with a warning.
    """
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = err > SATURATION
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} saturated point(s) from the rate fit")
    if keep.sum() < max(2, min_points):
        raise DegenerateFit(f"{int(keep.sum())} usable point(s), need {max(2, min_points)}")
    x, y = np.log(eps[keep]), np.log(err[keep])
    rate, intercept = np.polyfit(x, y, 1)
    return float(rate), float(math.exp(intercept))


def fit_rates(points, min_points: int = 3):
    """Rates and prefactors for each norm from ``[(epsilon, ErrorReport), ...]``."""
    st = ConvergenceStudy(sorted(points, key=lambda p: -p[0])).fit(min_points)
    return st.fitted_rates, st.fitted_prefactors


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_field_csv(path, x, values, name="error"):
    """Per-atom field: atom index, x, value."""
    write_csv(path, ("atom", "x", name), ((i, float(xi), float(v)) for i, (xi, v) in enumerate(zip(x, values))))


STUDY_HEADER = ("method_tag", "epsilon", "w11", "h1", "w1inf", "w11_semi", "h1_semi",
                "w1inf_semi", "m", "ell", "dofs")


def study_rows(tag, reports, m=0, ell=0, dofs=None):
    dofs = dofs or [0] * len(reports)
    for rep, d in zip(reports, dofs):
        p = rep.parts
        yield (tag, rep.epsilon, rep.w11, rep.h1, rep.w1inf, p["w11_semi"], p["h1_semi"],
               p["w1inf_semi"], m, ell, d)


def rate_rows(tag, rates, prefactors):
    yield (tag + ":rate", "", *rates, "", "", "", "", "", "")
    yield (tag + ":prefactor", "", *prefactors, "", "", "", "", "", "")
