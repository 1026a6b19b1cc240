"""Identification of interconnected quadratic-bilinear descriptor networks."""

from .errors import DomainError, NumericError, ParameterError, QBNetError
from .model import (LumpedQBTI, NetworkBlocks, SCMBasis, SubsystemQBTI, as_theta, lump,
                    network_blocks, normalize_gamma_xx, scm, well_posed)
from .pencil import (PencilSpectrum, generalized_eigs, is_impulse_free, is_regular, rank_E,
                     residues, resolvent, transfer_poles)
from .psgs import PSGS, PSGSEigen, check_assumptions, eigen, multisine, u_at
from .volterra import g1, gk, hk, phi_u, psi_s, steady_state, y_steady
from .simulate import (SampledRecord, Trajectory, sample_outputs, simulate_cascade,
                       simulate_dae)
from .estimate import (FitProblem, FitResult, TangentialEstimate, alias_sets, corr_estimate,
                       fit_theta, lemma4_sum, lft_h1, residuals)

__version__ = "0.1.0"

__all__ = ["alias_sets", "as_theta", "check_assumptions", "corr_estimate", "DomainError",
           "eigen", "fit_theta", "FitProblem", "FitResult", "g1", "generalized_eigs", "gk",
           "hk", "is_impulse_free", "is_regular", "lemma4_sum", "lft_h1", "lump", "LumpedQBTI",
           "multisine", "network_blocks", "NetworkBlocks", "normalize_gamma_xx",
           "NumericError", "ParameterError", "PencilSpectrum", "phi_u", "PSGS", "PSGSEigen",
           "psi_s", "QBNetError", "rank_E", "residuals", "residues", "resolvent",
           "sample_outputs", "SampledRecord", "scm", "SCMBasis", "simulate_cascade",
           "simulate_dae", "steady_state", "SubsystemQBTI", "TangentialEstimate", "Trajectory",
           "transfer_poles", "u_at", "well_posed", "y_steady"]
