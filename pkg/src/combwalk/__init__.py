"""Continuous-time quantum walks on random comb graphs.

Modules: ``comb`` (configurations and ensembles), ``chainspec`` (spine
chain spectra), ``boundstates`` (E > 4 states), ``smatrix`` (scattering
matrix), ``riccati`` (Lyapunov exponents and IDOS), ``diffusion``
(localization and escape probabilities), ``cli`` (batch front end).
"""
__version__ = "0.1.0"

from .boundstates import BoundState, BoundStates, solve_bound_states
from .comb import CombConfig, sample_comb, sample_ensemble
from .diffusion import p_esc_all, p_loc, p_loc_profile
from .errors import (CombError, DegeneracyError, InternalConsistencyError, InvalidArgument, PoleError,
                     SingularThetaError, SpecialThetaError)
from .smatrix import compute_smatrix

__all__ = [
    "BoundState", "BoundStates", "CombConfig", "CombError", "DegeneracyError",
    "InternalConsistencyError", "InvalidArgument", "PoleError", "SingularThetaError",
    "SpecialThetaError", "compute_smatrix", "p_esc_all", "p_loc", "p_loc_profile",
    "sample_comb", "sample_ensemble", "solve_bound_states",
]
