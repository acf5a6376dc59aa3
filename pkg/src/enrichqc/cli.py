"""Config-driven experiment runner.

Usage::

    python3 -m enrichqc.cli solve --config experiments/point_force_galerkin.ini --out results/
    enrichqc converge --config experiments/point_force_rates.ini --out results/ --jobs 4

Configs are INI files validated against :data:`SCHEMA`; unknown sections or
keys and out-of-range values are reported with file and line number. All CSV
floats are written with 17 significant digits.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import analysis
from .analysis import DegenerateFit, error_norms, fit_rates, fmt, write_csv
from .baselines import solve_force_based, solve_qnl
from .cgspace import Graded, InvalidPartition, Layout, Segment, Uniform, build_cgmap
from .crack import BRANCH_HEADER, CrackModel, bifurcation_sweep, solve_crack
from .enrichment import EnrichmentConfig, RankDeficient, SeedExhausted, SingularT, solve_enriched
from .model import (
    Chain,
    ChainProblem,
    DirichletExtrapolated,
    DirichletPinned,
    FullSine,
    HalfSine,
    Harmonic,
    LennardJones,
    PointForce,
    Traction,
    Zero,
    solve_problem,
)
from .reduction import SolveReport, solve_standard_galerkin
from .solvers import SolverError

log = logging.getLogger("enrichqc")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
METHODS = ("atomistic", "galerkin", "enriched", "qnl", "force_based")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _list(conv):
    def parse(v):
        items = [s.strip() for s in v.replace("\n", ",").split(",") if s.strip()]
        return [conv(s) for s in items]
    return parse


def _choice(*opts):
    def parse(v):
        v = v.strip().lower()
        if v not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}, got {v!r}")
        return v
    return parse


def _method_token(v):
    m = re.fullmatch(r"([a-z_]+)(\+quad)?(?:@([A-Za-z0-9_]+))?", v.strip())
    if not m or m.group(1) not in METHODS:
        raise ValueError(f"bad method {v!r}; expected <method>[+quad][@partition] with method in "
                         f"{', '.join(METHODS)}")
    return v.strip()


# key -> (parser, default, check or None); default None means optional
SCHEMA = {
    "experiment": {
        "name": (str, None, None),
        "description": (str, "", None),
    },
    "model": {
        "n_atoms": (_int, 1024, lambda v: v >= 16),
        "potential": (_choice("harmonic", "lennard_jones"), "harmonic", None),
        "k0": (_float, 4.0, lambda v: v > 0),
        "k1": (_float, 1.4, lambda v: v >= 0),
        "boundary": (_choice("extrapolated", "pinned", "traction"), "extrapolated", None),
        "load": (_float, 1.0, None),
    },
    "force": {
        "kind": (_choice("zero", "point", "half_sine", "full_sine"), "zero", None),
        "index": (_int, None, lambda v: v >= 0),
        "fraction": (_float, None, lambda v: 0.0 <= v <= 1.0),
        "magnitude": (_float, 1.0, None),
    },
    "partition": {
        "layout": (_choice("atomistic", "two_region", "five_region"), "two_region", None),
        "interface": (_float, 0.5, lambda v: 0.0 < v < 1.0),
        "atomistic_start": (_float, None, lambda v: 0.0 < v < 1.0),
        "atomistic_end": (_float, None, lambda v: 0.0 < v < 1.0),
        "mesh": (_choice("uniform", "graded"), "uniform", None),
        "h": (_float, None, lambda v: 0.0 < v <= 1.0),
        "stride": (_int, None, lambda v: v >= 1),
        "h_min": (_float, None, lambda v: 0.0 < v <= 1.0),
        "h_max": (_float, None, lambda v: 0.0 < v <= 1.0),
        "growth": (_float, 2.0, lambda v: v >= 1.0),
        "band": (_int, 2, lambda v: v >= 0),
    },
    "method": {
        "name": (_method_token, "galerkin", None),
        "methods": (_list(_method_token), None, lambda v: len(v) > 0),
        "quadrature": (_bool, False, None),
        "tol": (_float, 1e-12, lambda v: 0 < v < 1),
        "max_iters": (_int, 50, lambda v: v >= 1),
        "initial_perturbation": (_float, 0.0, lambda v: v >= 0),
    },
    "enrichment": {
        "m": (_int, 6, lambda v: v >= 1),
        "ell": (_int, 5, lambda v: v >= 0),
        "atomistic_share": (_float, 0.5, lambda v: 0.0 <= v <= 1.0),
        "deflation_tol": (_float, 1e-10, lambda v: 0 < v < 1),
        "m_schedule": (_list(_int), None, lambda v: all(k >= 1 for k in v)),
        "ell_values": (_list(_int), None, lambda v: all(k >= 0 for k in v)),
    },
    "study": {
        "n_atoms": (_list(_int), None, lambda v: all(k >= 16 for k in v)),
        "min_points": (_int, 3, lambda v: v >= 2),
    },
    "crack": {
        "k2": (_float, 0.5, lambda v: v > 0),
        "u_cut": (_float, 0.5, lambda v: v > 0),
        "n_broken": (_int, None, lambda v: v >= 1),
        "tip_offset": (_int, None, None),
        "gamma_scaling": (_choice("printed", "unscaled"), "printed", None),
        "vertical": (_choice("harmonic", "breakable"), "harmonic", None),
    },
    "sweep": {
        "load_min": (_float, 0.0, None),
        "load_max": (_float, 1.0, None),
        "scaled": (_bool, False, None),
        "steps": (_int, 50, lambda v: v >= 2),
        "fold_tol": (_float, 1e-4, lambda v: 0 < v < 1),
        "middle_guesses": (_int, 8, lambda v: v >= 1),
        "methods": (_list(_method_token), None, lambda v: len(v) > 0),
    },
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_.]+)\s*[=:]")


def _base_section(name):
    """``partition.graded`` validates against the ``partition`` schema."""
    return name.split(".", 1)[0]


@dataclass
class Config:
    path: str
    sections: dict  # section -> {key: parsed value} (defaults filled in)
    present: dict  # section -> set of keys given explicitly

    def get(self, section, key):
        sec = self.sections.get(section)
        if sec is None:
            return SCHEMA[_base_section(section)][key][1]
        return sec[key]

    def has(self, section, key=None):
        if key is None:
            return section in self.sections
        return key in self.present.get(section, ())

    @property
    def name(self):
        return self.get("experiment", "name") or Path(self.path).stem


def _line_index(text):
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line.startswith((" ", "\t")):
            lines.setdefault((section, m.group(1).lower()), no)
    return lines


def load_config(path) -> Config:
    """Parse and validate an INI config; raises :class:`ConfigError` with ``file:line``."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    where = _line_index(text)

    def err(section, key, msg):
        no = where.get((section, key), where.get((section, None), 0))
        loc = f"{path}:{no}" if no else path
        target = f"[{section}]" + (f" {key}" if key else "")
        return ConfigError(f"{loc}: {target}: {msg}")

    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        m = re.search(r"line (\d+)", str(exc))
        loc = f"{path}:{m.group(1)}" if m else path
        raise ConfigError(f"{loc}: {exc.message if hasattr(exc, 'message') else exc}") from exc

    sections, present = {}, {}
    for sec in cp.sections():
        base = _base_section(sec)
        if base not in SCHEMA:
            raise err(sec, None, f"unknown section (known: {', '.join(SCHEMA)})")
        if sec != base and base != "partition":
            raise err(sec, None, "only partition sections may carry a label")
        schema = SCHEMA[base]
        vals = {k: d for k, (_, d, _) in schema.items()}
        for key, raw in cp.items(sec):
            if key not in schema:
                raise err(sec, key, f"unknown key (known: {', '.join(schema)})")
            conv, _, check = schema[key]
            try:
                v = conv(raw)
            except ValueError as exc:
                raise err(sec, key, f"invalid value {raw!r}: {exc}") from None
            if check is not None and not check(v):
                raise err(sec, key, f"value {raw!r} out of range")
            vals[key] = v
        sections[sec] = vals
        present[sec] = set(cp.options(sec))
    cfg = Config(path, sections, present)
    _cross_check(cfg, err)
    return cfg


def _cross_check(cfg, err):
    for sec in cfg.sections:
        if _base_section(sec) != "partition":
            continue
        layout, mesh = cfg.get(sec, "layout"), cfg.get(sec, "mesh")
        if layout == "five_region":
            a, b = cfg.get(sec, "atomistic_start"), cfg.get(sec, "atomistic_end")
            if a is None or b is None or not a < b:
                raise err(sec, "atomistic_start", "five_region needs atomistic_start < atomistic_end")
        if layout != "atomistic":
            if mesh == "uniform" and (cfg.has(sec, "h") == cfg.has(sec, "stride")):
                raise err(sec, "mesh", "uniform mesh needs exactly one of h or stride")
            if mesh == "graded" and (cfg.get(sec, "h_min") is None or cfg.get(sec, "h_max") is None):
                raise err(sec, "mesh", "graded mesh needs h_min and h_max")
    if cfg.get("force", "kind") == "point" and cfg.get("force", "index") is None \
            and cfg.get("force", "fraction") is None:
        raise err("force", "kind", "point force needs index or fraction")
    for token in _all_methods(cfg):
        label = _parse_token(token)[2]
        if label and f"partition.{label}" not in cfg.sections:
            raise err("method", None, f"method {token!r} refers to missing section [partition.{label}]")
    if cfg.has("crack") and cfg.get("model", "boundary") != "traction":
        raise err("model", "boundary", "the crack model needs boundary = traction")


def _all_methods(cfg):
    out = [cfg.get("method", "name")]
    out += cfg.get("method", "methods") or []
    out += cfg.get("sweep", "methods") or []
    return out


def _parse_token(token):
    m = re.fullmatch(r"([a-z_]+)(\+quad)?(?:@([A-Za-z0-9_]+))?", token)
    return m.group(1), bool(m.group(2)), m.group(3)


# ---------------------------------------------------------------------------
# building problems from a config


def build_chain(cfg: Config, n_atoms: int | None = None) -> Chain:
    n = n_atoms or cfg.get("model", "n_atoms")
    if cfg.get("model", "potential") == "harmonic":
        pot = Harmonic(cfg.get("model", "k0"), cfg.get("model", "k1"))
    else:
        pot = LennardJones.calibrated(cfg.get("model", "k0"))
    bc = {"extrapolated": DirichletExtrapolated(), "pinned": DirichletPinned(),
          "traction": Traction(cfg.get("model", "load"))}[cfg.get("model", "boundary")]
    return Chain(n, pot, bc)


def build_force(cfg: Config, n_atoms: int):
    kind = cfg.get("force", "kind")
    if kind == "point":
        idx = cfg.get("force", "index")
        if idx is None:
            idx = int(round(cfg.get("force", "fraction") * n_atoms))
        if idx >= n_atoms:
            raise ConfigError(f"{cfg.path}: [force] index {idx} outside a chain of {n_atoms} atoms")
        return PointForce(idx, cfg.get("force", "magnitude"))
    return {"zero": Zero(), "half_sine": HalfSine(), "full_sine": FullSine()}[kind]


def build_layout(cfg: Config, n_atoms: int, label: str | None = None) -> Layout:
    sec = f"partition.{label}" if label else "partition"
    layout = cfg.get(sec, "layout")
    band = cfg.get(sec, "band")
    if layout == "atomistic":
        return Layout.all_atomistic()
    if cfg.get(sec, "mesh") == "uniform":
        stride = cfg.get(sec, "stride")
        mesh = Uniform(stride / n_atoms if stride else cfg.get(sec, "h"))
    else:
        mesh = Graded(cfg.get(sec, "h_min"), cfg.get(sec, "h_max"), cfg.get(sec, "growth"))
    if layout == "two_region":
        return Layout.two_region(mesh, cfg.get(sec, "interface"), band)
    a, b = cfg.get(sec, "atomistic_start"), cfg.get(sec, "atomistic_end")
    return Layout((Segment("continuum", 0.0, a, mesh), Segment("atomistic", a, b),
                   Segment("continuum", b, 1.0, mesh)), band=band)


def build_crack(cfg: Config, n_atoms: int | None = None) -> CrackModel:
    chain = build_chain(cfg, n_atoms)
    n = chain.n_atoms
    n_broken = cfg.get("crack", "n_broken")
    if n_broken is None:
        n_broken = n // 2 + (cfg.get("crack", "tip_offset") or 0)
    if not 1 <= n_broken < n - 2:
        raise ConfigError(f"{cfg.path}: [crack] crack tip {n_broken} outside the chain of {n} atoms")
    return CrackModel(chain, k2=cfg.get("crack", "k2"), u_cut=cfg.get("crack", "u_cut"),
                      n_broken=n_broken, gamma_scaling=cfg.get("crack", "gamma_scaling"),
                      vertical=cfg.get("crack", "vertical"))


def enrichment_config(cfg: Config, m: int | None = None, ell: int | None = None):
    return EnrichmentConfig(m or cfg.get("enrichment", "m"),
                            cfg.get("enrichment", "ell") if ell is None else ell,
                            cfg.get("enrichment", "atomistic_share"),
                            cfg.get("enrichment", "deflation_tol"))


def _start(cfg: Config, n_atoms: int, seed: int | None):
    amp = cfg.get("method", "initial_perturbation")
    if not amp:
        return None
    rng = np.random.default_rng(seed)
    return amp * rng.standard_normal(n_atoms)


@lru_cache(maxsize=16)
def _reference(path: str, n_atoms: int):
    cfg = load_config(path)
    if cfg.has("crack"):
        return solve_crack(build_crack(cfg, n_atoms), tol=cfg.get("method", "tol")).u
    chain = build_chain(cfg, n_atoms)
    prob = ChainProblem(chain, build_force(cfg, n_atoms))
    return solve_problem(prob, tol=cfg.get("method", "tol"))


def run_method(cfg: Config, token: str, n_atoms: int | None = None, m: int | None = None,
               ell: int | None = None, seed: int | None = None):
    """Solve one method on one chain; returns a :class:`~enrichqc.reduction.SolveReport`."""
    method, quad, label = _parse_token(token)
    n = n_atoms or cfg.get("model", "n_atoms")
    quad = quad or cfg.get("method", "quadrature")
    tol, iters = cfg.get("method", "tol"), cfg.get("method", "max_iters")
    u0 = _start(cfg, n, seed)
    chain = build_chain(cfg, n)
    cg = None
    if method != "atomistic":
        part = build_layout(cfg, n, label).discretize(n)
        cg = build_cgmap(chain.free, part)
    iface = None
    if method in ("qnl", "force_based"):
        if cg is None or not cg.partition.interfaces:
            raise ConfigError(f"{cfg.path}: method {token!r} needs a partition with an interface")
        iface = cg.partition.interfaces[0]

    if cfg.has("crack"):
        model = build_crack(cfg, n)
        enr = enrichment_config(cfg, m, ell) if method == "enriched" else None
        rep = solve_crack(model, method, cg, enrichment=enr, interface_index=iface, tol=tol,
                          max_iters=iters, u0=u0, quadrature=quad and method in ("galerkin", "enriched"))
    else:
        f = build_force(cfg, n)
        prob = ChainProblem(chain, f)
        kw = dict(tol=tol, max_iters=iters)
        if method == "atomistic":
            t0 = time.perf_counter()
            u = solve_problem(prob, tol=tol, max_iters=iters, u0=u0)
            rep = SolveReport(u, u[chain.free], 0.0, 0, token, chain.free.size,
                              time.perf_counter() - t0)
        elif method == "galerkin":
            rep = solve_standard_galerkin(prob, cg, quadrature=quad, **kw)
        elif method == "enriched":
            rep = solve_enriched(prob, cg, enrichment_config(cfg, m, ell), quadrature=quad, **kw)
        elif method == "qnl":
            rep = solve_qnl(chain, iface, f, u0=u0, **kw)
        else:
            rep = solve_force_based(chain, iface, f, u0=u0, **kw)
    rep.method_tag = token
    return rep


# ---------------------------------------------------------------------------
# subcommands


def _summary(tag, n, rep, err):
    return (f"{tag} N={n} w11={fmt(err.w11)} h1={fmt(err.h1)} w1inf={fmt(err.w1inf)} "
            f"dofs={rep.dofs} newton={rep.newton_iters} seconds={rep.seconds:.3f}")


def run_solve(cfg: Config, out: Path, seed: int | None = None) -> dict:
    n = cfg.get("model", "n_atoms")
    token = cfg.get("method", "name")
    ref = _reference(cfg.path, n)
    ells = cfg.get("enrichment", "ell_values") if _parse_token(token)[0] == "enriched" else None
    results = {}
    for ell in ells or [None]:
        rep = run_method(cfg, token, n, ell=ell, seed=seed)
        tag = token if ell is None else f"{token}_ell{ell}"
        err = error_norms(rep.u - ref, 1.0 / n, tag)
        x = build_chain(cfg, n).x
        stem = out / f"{cfg.name}_{_safe(tag)}"
        write_csv(f"{stem}_solution.csv", ("atom", "x", "u"),
                  ((i, float(xi), float(ui)) for i, (xi, ui) in enumerate(zip(x, rep.u))))
        analysis.write_field_csv(f"{stem}_error.csv", x, rep.u - ref)
        print(_summary(tag, n, rep, err))
        results[tag] = (rep, err)
    write_csv(out / f"{cfg.name}_summary.csv", analysis.STUDY_HEADER,
              (row for tag, (rep, err) in results.items()
               for row in analysis.study_rows(tag, [err], dofs=[rep.dofs])))
    return results


def _cell(args):
    path, token, n, m, seed = args
    cfg = load_config(path)
    t0 = time.perf_counter()
    rep = run_method(cfg, token, n, m=m, seed=seed)
    err = error_norms(rep.u - _reference(path, n), 1.0 / n, token)
    return token, n, m, rep.dofs, err, time.perf_counter() - t0


def _study_cells(cfg, seed):
    ladder = cfg.get("study", "n_atoms")
    if not ladder:
        raise ConfigError(f"{cfg.path}: [study] n_atoms is required for converge")
    if sorted(set(ladder)) != ladder:
        raise ConfigError(f"{cfg.path}: [study] n_atoms must be strictly increasing")
    sched = cfg.get("enrichment", "m_schedule")
    if sched is not None and len(sched) != len(ladder):
        raise ConfigError(f"{cfg.path}: [enrichment] m_schedule needs {len(ladder)} entries")
    methods = cfg.get("method", "methods") or [cfg.get("method", "name")]
    cells = []
    for token in methods:
        for k, n in enumerate(ladder):
            m = None
            if _parse_token(token)[0] == "enriched":
                m = sched[k] if sched else cfg.get("enrichment", "m")
            cells.append((cfg.path, token, n, m, seed))
    return methods, cells


def _run_cells(cells, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_cell, cells))
    return [_cell(c) for c in cells]


def run_converge(cfg: Config, out: Path, jobs: int = 1, seed: int | None = None) -> dict:
    methods, cells = _study_cells(cfg, seed)
    results = _run_cells(cells, jobs)
    ell = cfg.get("enrichment", "ell")
    rows, fits = [], {}
    for token in methods:
        mine = [r for r in results if r[0] == token]
        for _, n, m, dofs, err, _ in mine:
            rows.extend(analysis.study_rows(token, [err], m or 0,
                                            ell if _parse_token(token)[0] == "enriched" else 0, [dofs]))
        pts = [(1.0 / n, err) for _, n, _, _, err, _ in mine]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rates, pref = fit_rates(pts, cfg.get("study", "min_points"))
        except DegenerateFit as exc:
            if len(pts) < cfg.get("study", "min_points"):
                raise ConfigError(f"{cfg.path}: [study] n_atoms: {exc}") from exc
            rates = pref = (float("nan"),) * 3
            log.warning("%s: no rate fit (%s)", token, exc)
        fits[token] = (rates, pref)
        rows.extend(analysis.rate_rows(token, rates, pref))
        print(f"{token} rates w11={rates[0]:.3f} h1={rates[1]:.3f} w1inf={rates[2]:.3f} "
              f"prefactors {pref[0]:.3e} {pref[1]:.3e} {pref[2]:.3e}")
    write_csv(out / f"{cfg.name}_study.csv", analysis.STUDY_HEADER, rows)
    return {"cells": results, "fits": fits}


def run_compare(cfg: Config, out: Path, jobs: int = 1, seed: int | None = None) -> dict:
    n = cfg.get("model", "n_atoms")
    methods = cfg.get("method", "methods") or [cfg.get("method", "name")]
    ref = _reference(cfg.path, n)
    cells = [(cfg.path, t, n, None, seed) for t in methods]
    results = _run_cells(cells, jobs)
    x = build_chain(cfg, n).x
    cols = [r[4].per_atom_error for r in results]
    write_csv(out / f"{cfg.name}_compare.csv", ("atom", "x", "u_atomistic", *[f"err_{t}" for t in methods]),
              ((i, float(x[i]), float(ref[i]), *[float(c[i]) for c in cols]) for i in range(n)))
    write_csv(out / f"{cfg.name}_compare_norms.csv", analysis.STUDY_HEADER,
              (row for t, _, _, dofs, err, _ in results for row in analysis.study_rows(t, [err], dofs=[dofs])))
    for t, _, _, dofs, err, secs in results:
        print(f"{t} N={n} w11={fmt(err.w11)} h1={fmt(err.h1)} w1inf={fmt(err.w1inf)} "
              f"dofs={dofs} seconds={secs:.3f}")
    return {r[0]: r for r in results}


def run_bifurcate(cfg: Config, out: Path, seed: int | None = None) -> dict:
    if not cfg.has("crack"):
        raise ConfigError(f"{cfg.path}: bifurcate needs a [crack] section")
    n = cfg.get("model", "n_atoms")
    model = build_crack(cfg, n)
    lo, hi = cfg.get("sweep", "load_min"), cfg.get("sweep", "load_max")
    if not hi > lo:
        raise ConfigError(f"{cfg.path}: [sweep] load_max must exceed load_min")
    if cfg.get("sweep", "scaled"):
        lo, hi = lo / model.epsilon**2, hi / model.epsilon**2
    methods = cfg.get("sweep", "methods") or ["atomistic"]
    results = {}
    fold_rows = []
    for token in methods:
        method, _, label = _parse_token(token)
        if method not in ("atomistic", "galerkin", "enriched"):
            raise ConfigError(f"{cfg.path}: [sweep] methods: {method} has no bifurcation sweep")
        cg = None
        if method != "atomistic":
            cg = build_cgmap(model.chain.free, build_layout(cfg, n, label).discretize(n))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = bifurcation_sweep(model, method, (lo, hi), cfg.get("sweep", "steps"), cg,
                                    enrichment=enrichment_config(cfg) if method == "enriched" else None,
                                    tol=min(1e-10, cfg.get("method", "tol") * 100),
                                    fold_tol=cfg.get("sweep", "fold_tol"),
                                    middle_guesses=cfg.get("sweep", "middle_guesses"))
        for p in res.points:
            p.method_tag = token
        write_csv(out / f"{cfg.name}_{_safe(token)}_branches.csv", (*BRANCH_HEADER, "branch", "negative_count"),
                  ((*p.row(model.tip), p.branch, p.negative_count) for p in res.points))
        for label_, q, msg in res.lost:
            log.info("%s %s: %s", token, label_, msg)
        for br in ("up", "down"):
            fold = res.folds.get(br)
            fold_rows.append((token, br, float("nan") if fold is None else fold,
                              float("nan") if fold is None else fold * model.epsilon**2))
        print(f"{token} points={len(res.points)} middle={len(res.branch('middle'))} "
              f"fold_up={res.folds.get('up')} fold_down={res.folds.get('down')}")
        results[token] = res
    write_csv(out / f"{cfg.name}_folds.csv", ("method_tag", "branch", "fold_load", "fold_load_scaled"),
              fold_rows)
    return results


def _safe(tag):
    return re.sub(r"[^A-Za-z0-9_]+", "_", tag)


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="enrichqc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve one method and compare with the atomistic model"),
                           ("converge", "convergence study over a ladder of chain sizes"),
                           ("bifurcate", "crack bifurcation diagram by load continuation"),
                           ("compare", "several methods on one problem, joined error table")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="INI experiment config")
        s.add_argument("--out", default="results", help="output directory (default: results)")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
        s.add_argument("--seed", type=int, default=0, help="seed for random initial states")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            run_solve(cfg, out, args.seed)
        elif args.command == "converge":
            run_converge(cfg, out, args.jobs, args.seed)
        elif args.command == "bifurcate":
            run_bifurcate(cfg, out, args.seed)
        else:
            run_compare(cfg, out, args.jobs, args.seed)
    except (ConfigError, InvalidPartition) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SeedExhausted, RankDeficient, SingularT) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
