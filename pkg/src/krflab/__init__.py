"""krflab: Kahler-Ricci flow and its energy functionals on reduced geometries.

Metrics invariant under a torus or unitary symmetry (zonal metrics on S^2,
U(n)-invariant metrics on CP^n) are described by one-variable potentials on
the moment interval [0, 1].  On top of that reduction the package provides
curvature and Laplacians (:mod:`krflab.geometry`), energy functionals
(:mod:`krflab.functionals`), the normalized flow and its diagnostics
(:mod:`krflab.flow`), invariant spectra (:mod:`krflab.spectrum`) and the
Monge-Ampere continuity path (:mod:`krflab.ma_path`).
"""

from __future__ import annotations

from .flow import FlowSettings, FlowTrace, normalize_trace, run_flow
from .functionals import (EnergyReport, RicciPotential, all_energies, energy_E0, energy_Ek,
                          energy_Ek0, energy_IJ, energy_Jk, pali_residual, ricci_potential)
from .geometry import (DegenerateMetricError, GeometryKind, MetricState, MomentGrid,
                       PotentialField, canonical_state, make_grid)
from .ma_path import MAPathResult, continuity_path, ma_solve, normalizing_constant
from .spectrum import SpectrumReport, dirichlet_eigs, restricted_gap, spectrum_report

__version__ = "0.1.0"

__all__ = [
    "DegenerateMetricError", "EnergyReport", "FlowSettings", "FlowTrace", "GeometryKind",
    "MAPathResult", "MetricState", "MomentGrid", "PotentialField", "RicciPotential",
    "SpectrumReport", "all_energies", "canonical_state", "continuity_path", "dirichlet_eigs",
    "energy_E0", "energy_Ek", "energy_Ek0", "energy_IJ", "energy_Jk", "make_grid", "ma_solve",
    "normalize_trace", "normalizing_constant", "pali_residual", "restricted_gap",
    "ricci_potential", "run_flow", "spectrum_report",
]
