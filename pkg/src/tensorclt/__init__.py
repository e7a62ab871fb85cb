"""Resolvent traces of tensor-product sample covariance matrices.

The ensemble is ``M = sum_a tau_a Y_a Y_a^T`` with ``Y_a = y1_a (x) y2_a`` a
Kronecker product of two independent uniform unit vectors in ``R^n`` and
``m = round(c n^2)`` terms.  The package provides

* :mod:`tensorclt.measures` -- the weight distribution ``sigma`` of the ``tau``;
* :mod:`tensorclt.sampler` -- reproducible draws of the ensemble;
* :mod:`tensorclt.resolvent` -- spectra, resolvent traces and index contractions;
* :mod:`tensorclt.limit` -- the limiting Stieltjes transform and covariance kernels;
* :mod:`tensorclt.mc` -- replica experiments and their estimators;
* :mod:`tensorclt.config`, :mod:`tensorclt.verification`, :mod:`tensorclt.cli` --
  the command-line laboratory.
"""
from .errors import (
    BranchError,
    ConsistencyError,
    ConvergenceError,
    DomainError,
    MeasureError,
    PrecisionWarning,
    SizeGuardError,
)
from .limit import (
    LimitParams,
    covariance_matrix_sigma,
    kernel_C,
    kernel_K,
    mp_closed_form,
    solve_f,
)
from .measures import TauMeasure
from .sampler import EnsembleConfig, draw_ensemble

__version__ = "0.1.0"

__all__ = [
    "BranchError",
    "ConsistencyError",
    "ConvergenceError",
    "DomainError",
    "MeasureError",
    "PrecisionWarning",
    "SizeGuardError",
    "LimitParams",
    "covariance_matrix_sigma",
    "kernel_C",
    "kernel_K",
    "mp_closed_form",
    "solve_f",
    "TauMeasure",
    "EnsembleConfig",
    "draw_ensemble",
]
