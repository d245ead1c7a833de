"""Numerical laboratory for model Dirac-type operators, spectral flow and lattice arithmetic."""

__version__ = "0.1.0"

from vwspec.clifford import CliffordRep, build_clifford_rep, joint_eigenprojectors, verify_relations
from vwspec.oscillator import OscBasisSpec, build_D0, build_model_1d, d0_spectrum_closedform, d0_spectrum_numeric, gaussian_decay_fit
from vwspec.circle_model import MatrixLoop, PerturbationData, berry_alpha, build_D_circle, low_spectrum_fit, prop48_lattice, tau_scaling_study
from vwspec.flow_engine import OperatorFamily, brute_force_flow, spectral_flow, staged_flow
from vwspec.torus_model import TorusModelSpec, crossing_predictions, dbar_kernel_dim, sector_flow_check
from vwspec.lattice_cohomology import (
    index_formula,
    kahler_t_search,
    pontrjagin_class_search,
    symplectic_zeta_search,
)

__all__ = [
    "CliffordRep", "build_clifford_rep", "verify_relations", "joint_eigenprojectors",
    "OscBasisSpec", "build_D0", "build_model_1d", "d0_spectrum_closedform", "d0_spectrum_numeric", "gaussian_decay_fit",
    "MatrixLoop", "PerturbationData", "build_D_circle", "berry_alpha", "low_spectrum_fit", "tau_scaling_study",
    "prop48_lattice",
    "OperatorFamily", "spectral_flow", "brute_force_flow", "staged_flow",
    "TorusModelSpec", "crossing_predictions", "dbar_kernel_dim", "sector_flow_check",
    "pontrjagin_class_search", "kahler_t_search", "symplectic_zeta_search", "index_formula",
]
