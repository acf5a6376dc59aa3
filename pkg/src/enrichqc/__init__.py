"""Atomistic-to-continuum coupling with enriched Krylov interface bases.

Modules:

- ``model``: second-neighbour chain, potentials, boundary treatments, loads
- ``cgspace``: region layouts, coarse meshes and the coarse-graining map ``Phi``
- ``reduction``: exact Schur-complement oracle and the Galerkin engine
- ``enrichment``: block Lanczos enriched bases
- ``quadrature``: Cauchy-Born midpoint rows and the interbedded band
- ``baselines``: quasi-nonlocal and force-based quasicontinuum
- ``crack``: one-dimensional crack model and bifurcation sweeps
- ``analysis``: error norms, rate fits, CSV emitters
- ``cli``: config-driven experiment runner
"""

from .analysis import ConvergenceStudy, ErrorReport, error_norms, fit_rates
from .cgspace import CGMap, Graded, Layout, Segment, Uniform, build_cgmap
from .enrichment import EnrichmentConfig, KrylovBasis, block_lanczos, build_krylov_basis, solve_enriched
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
    solve_atomistic,
)
from .reduction import SolveReport, exact_a1_oracle, solve_standard_galerkin

__version__ = "0.1.0"
