"""Bi-sparse blind deconvolution and blind demixing via hierarchical
hard-thresholding pursuit.

The lifted filter-message tensor of a circular convolution is
hierarchically sparse, so recovering both filter and message reduces to a
structured sparse linear inverse problem: gradient step, exact hierarchical
projection to identify the support, then least squares restricted to it.
"""

from .hier_sparse import (
    HiSparseVector,
    HiSupport,
    SparsityLevels,
    project_hisparse,
    project_three_level,
    restrict,
)
from .operators import (
    BlindConvOp,
    DemixOp,
    IdentityCodebook,
    MatrixCodebook,
    circular_convolve,
    conv_adjoint,
    conv_apply,
    demix_adjoint,
    demix_apply,
    load_operator,
    rank_one_factor,
    save_operator,
)
from .solver import SolveReport, SolverConfig, StopReason, hihtp_solve, relative_error, restricted_least_squares
from .ensembles import (
    EnsembleSpec,
    RipEstimate,
    estimate_hirip,
    gen_filter,
    gen_message,
    gen_mixing,
    gen_U,
)

__version__ = "0.1.0"

__all__ = [
    "BlindConvOp",
    "DemixOp",
    "EnsembleSpec",
    "HiSparseVector",
    "HiSupport",
    "IdentityCodebook",
    "MatrixCodebook",
    "RipEstimate",
    "SolveReport",
    "SolverConfig",
    "SparsityLevels",
    "StopReason",
    "circular_convolve",
    "conv_adjoint",
    "conv_apply",
    "demix_adjoint",
    "demix_apply",
    "estimate_hirip",
    "gen_U",
    "gen_filter",
    "gen_message",
    "gen_mixing",
    "hihtp_solve",
    "load_operator",
    "project_hisparse",
    "project_three_level",
    "rank_one_factor",
    "relative_error",
    "restrict",
    "restricted_least_squares",
    "save_operator",
]
