"""Coarse-graining operator ``Phi`` built from a region partition and mesh.

A layout is given in physical coordinates on ``[0, 1]`` so that the same mesh
can be re-discretized for every lattice spacing. Once resolved on a chain,
``Phi`` is the matrix of piecewise-linear nodal basis functions over the
node set (every atom of an atomistic region is a node, so those rows are
Kronecker rows and the interface node gets the one-sided hat).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class InvalidPartition(ValueError):
    pass


# ---------------------------------------------------------------------------
# meshes and layouts (physical coordinates)


@dataclass(frozen=True)
class Uniform:
    """Elements of physical length ``h`` (the last one may be shorter)."""

    h: float


@dataclass(frozen=True)
class Graded:
    """Element lengths ``h_min * growth**k`` away from the atomistic side, capped at ``h_max``."""

    h_min: float
    h_max: float
    growth: float = 2.0


Mesh = Union[Uniform, Graded]


@dataclass(frozen=True)
class Segment:
    kind: str  # "atomistic" | "continuum"
    start: float
    end: float
    mesh: Mesh | None = None

    def __post_init__(self):
        if self.kind not in ("atomistic", "continuum"):
            raise InvalidPartition(f"unknown region kind {self.kind!r}")
        if not self.start < self.end:
            raise InvalidPartition(f"empty segment [{self.start}, {self.end}]")
        if self.kind == "continuum" and self.mesh is None:
            raise InvalidPartition("continuum segment needs a mesh")


@dataclass(frozen=True)
class Layout:
    """Ordered, contiguous segments covering ``[0, 1]``.

    ``band`` is the number of continuum elements next to each
    atomistic/continuum interface that keep exact atom summation when
    quadrature is switched on (the interbedded region).
    """

    segments: tuple
    band: int = 2

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise InvalidPartition("layout has no segments")
        if abs(segs[0].start) > 1e-12 or abs(segs[-1].end - 1.0) > 1e-12:
            raise InvalidPartition("segments must cover [0, 1]")
        for s, t in zip(segs, segs[1:]):
            if abs(s.end - t.start) > 1e-12:
                raise InvalidPartition(f"gap or overlap between {s} and {t}")
        if self.band < 0:
            raise InvalidPartition("band must be >= 0")

    @classmethod
    def all_atomistic(cls):
        return cls((Segment("atomistic", 0.0, 1.0),), band=0)

    @classmethod
    def two_region(cls, mesh: Mesh, interface: float = 0.5, band: int = 2):
        """Continuum on ``[0, interface]``, atomistic on the rest."""
        return cls((Segment("continuum", 0.0, interface, mesh),
                    Segment("atomistic", interface, 1.0)), band=band)

    def discretize(self, n_atoms: int) -> "RegionPartition":
        return _discretize(self, n_atoms)


# ---------------------------------------------------------------------------
# resolved partition (atom indices)


@dataclass(frozen=True)
class Element:
    a: int  # left node atom
    b: int  # right node atom
    interbedded: bool

    @property
    def atoms(self):
        return self.b - self.a


@dataclass(frozen=True)
class RegionPartition:
    n_atoms: int
    atomistic: np.ndarray  # bool per atom (interface nodes included)
    nodes: np.ndarray  # increasing atom indices
    elements: tuple  # continuum elements
    interfaces: tuple  # atom indices where atomistic meets continuum

    def __post_init__(self):
        nodes = self.nodes
        if nodes[0] != 0 or nodes[-1] != self.n_atoms - 1:
            raise InvalidPartition("node set must start at atom 0 and end at atom N-1")
        if np.any(np.diff(nodes) < 1):
            raise InvalidPartition("nodes must be strictly increasing")

    @property
    def interbedded_elements(self):
        return tuple(e for e in self.elements if e.interbedded)

    @property
    def quadrature_elements(self):
        return tuple(e for e in self.elements if not e.interbedded)


def _mesh_sizes(mesh, length, eps, grade_left, grade_right):
    """Element sizes (in atoms) filling ``length`` atoms."""
    if isinstance(mesh, Uniform):
        h = max(1, int(round(mesh.h / eps)))
        sizes = [h] * (length // h)
        if length % h:
            sizes.append(length % h)
        return sizes
    if not isinstance(mesh, Graded):
        raise InvalidPartition(f"unknown mesh {mesh!r}")
    h_max = max(1, int(round(mesh.h_max / eps)))
    h0 = max(1, int(round(mesh.h_min / eps)))
    if mesh.growth < 1:
        raise InvalidPartition("growth must be >= 1")

    def seq():
        h = float(h0)
        while True:
            yield min(h_max, max(1, int(round(h))))
            h *= mesh.growth

    if not (grade_left or grade_right):
        return _mesh_sizes(Uniform(h_max * eps), length, eps, False, False)
    left, right = [], []
    gl, gr = seq(), seq()
    rem = length
    turn_left = grade_left
    while rem > 0:
        if grade_left and grade_right:
            side = left if turn_left else right
            h = next(gl) if turn_left else next(gr)
            turn_left = not turn_left
        elif grade_left:
            side, h = left, next(gl)
        else:
            side, h = right, next(gr)
        if h >= rem:
            h = rem
        elif rem - h < h:
            # do not leave a sliver smaller than the current element
            h = rem if rem - h < max(1, h // 2) else h
        side.append(h)
        rem -= h
    return left + right[::-1]


def _discretize(layout: Layout, n: int) -> RegionPartition:
    eps = 1.0 / n
    segs = layout.segments
    bounds = []
    for s in segs:
        a = min(int(round(s.start / eps)), n - 1)
        b = min(int(round(s.end / eps)), n - 1)
        if b <= a:
            raise InvalidPartition(f"segment {s} is empty at N={n}")
        bounds.append((a, b))

    atomistic = np.zeros(n, dtype=bool)
    nodes = set()
    elements = []
    interfaces = []
    for k, (s, (a, b)) in enumerate(zip(segs, bounds)):
        if s.kind == "atomistic":
            atomistic[a:b + 1] = True
            nodes.update(range(a, b + 1))
            continue
        left_at = k > 0 and segs[k - 1].kind == "atomistic"
        right_at = k + 1 < len(segs) and segs[k + 1].kind == "atomistic"
        if left_at:
            interfaces.append(a)
        if right_at:
            interfaces.append(b)
        sizes = _mesh_sizes(s.mesh, b - a, eps, left_at, right_at)
        pos = a
        seg_elems = []
        for h in sizes:
            nodes.update((pos, pos + h))
            seg_elems.append([pos, pos + h])
            pos += h
        assert pos == b
        m = len(seg_elems)
        for i, (ea, eb) in enumerate(seg_elems):
            inter = (left_at and i < layout.band) or (right_at and m - 1 - i < layout.band)
            elements.append(Element(ea, eb, inter))
    return RegionPartition(n, atomistic, np.array(sorted(nodes)), tuple(elements),
                           tuple(sorted(set(interfaces))))


# ---------------------------------------------------------------------------
# CG map


def p1_matrix(nodes, n_atoms) -> sp.csr_matrix:
    """Rows = piecewise-linear nodal basis functions sampled at atom sites."""
    nodes = np.asarray(nodes)
    rows, cols, vals = [], [], []
    for r, k in enumerate(nodes):
        rows.append(r)
        cols.append(k)
        vals.append(1.0)
    for r, (a, b) in enumerate(zip(nodes[:-1], nodes[1:])):
        if b - a < 2:
            continue
        k = np.arange(a + 1, b)
        t = (k - a) / (b - a)
        rows.extend([r] * k.size + [r + 1] * k.size)
        cols.extend(list(k) * 2)
        vals.extend(list(1.0 - t) + list(t))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), n_atoms))


@dataclass(frozen=True, eq=False)
class CGMap:
    """``phi`` is ``n x N_free``: one row per unconstrained node, one column per free atom."""

    phi: sp.csr_matrix
    node_atoms: np.ndarray  # atom index of every row
    free: np.ndarray  # free atom indices (columns)
    partition: RegionPartition

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.partition.n_atoms

    @cached_property
    def row_of_atom(self) -> dict:
        return {int(a): r for r, a in enumerate(self.node_atoms)}

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return (self.phi @ self.phi.T).tocsr()

    @cached_property
    def _mass_cho(self):
        ab = _banded_upper(self.mass, 1)
        return sla.cholesky_banded(ab, lower=False, check_finite=False)

    def solve_mass(self, rhs):
        return sla.cho_solve_banded((self._mass_cho, False), rhs, check_finite=False)

    def apply_p(self, v):
        """Orthogonal projection onto ``Range(phi^T)``."""
        return self.phi.T @ self.solve_mass(self.phi @ v)

    def apply_q(self, v):
        return v - self.apply_p(v)

    def condition_estimate(self) -> float:
        ab = _banded_upper(self.mass, 1)
        w = sla.eigvals_banded(ab, lower=False)
        return float(w.max() / w.min())


def _banded_upper(m, bw):
    m = sp.csr_matrix(m)
    n = m.shape[0]
    ab = np.zeros((bw + 1, n))
    for off in range(bw + 1):
        ab[bw - off, off:] = m.diagonal(off)
    return ab


def build_cgmap(free: Sequence[int], partition: RegionPartition) -> CGMap:
    """Build ``Phi`` on the free atoms of a chain.

    Nodes sitting on constrained atoms are dropped, so ``Phi^T p`` vanishes
    there automatically.
    """
    free = np.asarray(free)
    n = partition.n_atoms
    if free.size and (free.min() < 0 or free.max() >= n):
        raise InvalidPartition("free atoms outside the chain")
    full = p1_matrix(partition.nodes, n)
    free_set = set(int(i) for i in free)
    keep = np.array([int(a) in free_set for a in partition.nodes])
    phi = full[keep][:, free].tocsr()
    phi.eliminate_zeros()
    return CGMap(phi, partition.nodes[keep], free, partition)


def mass_matrix(cg: CGMap) -> sp.csr_matrix:
    """``M = Phi Phi^T`` summed over atom sites."""
    return cg.mass


def projections(cg: CGMap):
    """Return ``(apply_P, apply_Q)`` as callables on free-atom vectors/blocks."""
    return cg.apply_p, cg.apply_q
