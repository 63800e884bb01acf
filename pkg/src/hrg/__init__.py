"""Numerical laboratory for the hierarchical Anderson model and its renormalization group."""

from .disorder import Cauchy, CauchyConvolved, Gaussian, GridDensity, Mixture, SeedSchedule, derive_seed, sample_potential
from .hamiltonian import HamiltonianSystem, SpectralData, assemble, diagonalize, green_entry
from .hierarchy import TAIL_CORRECTED, HoppingModel, Mode, apply_averaging, apply_laplacian, hier_distance, truncated
from .renorm import estimate_decoupling, green_recursion, phi_statistic, renormalize, schur_recover
from .rgflow import assumption_verdict, cauchy_flow_exact, flow_step_grid, flow_step_mc, harmonic_step, run_flow

__version__ = "0.1.0"

__all__ = [
    "Cauchy", "CauchyConvolved", "Gaussian", "GridDensity", "HamiltonianSystem", "HoppingModel", "Mixture", "Mode",
    "SeedSchedule", "SpectralData", "TAIL_CORRECTED", "apply_averaging", "apply_laplacian", "assemble",
    "assumption_verdict", "cauchy_flow_exact", "derive_seed", "diagonalize", "estimate_decoupling", "flow_step_grid",
    "flow_step_mc", "green_entry", "green_recursion", "harmonic_step", "hier_distance", "phi_statistic",
    "renormalize", "run_flow", "sample_potential", "schur_recover", "truncated",
]
