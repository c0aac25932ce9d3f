"""Derivatives of coefficient functions identified by moment conditions.

Quantile regression and distribution regression coefficient paths
``theta(u)`` are differentiated in ``u`` through the implicit function
theorem, with kernel estimates of the moment Jacobians.
"""
from .applications import (AuctionSpec, EvalPoint, auction_quantile, density_quantile, dr_density,
                           dr_quantile, powell_variance, qpe, qr_cdf, qr_density)
from .competitors import augmented_qr, smoothed_process_deriv
from .data import Dataset, DataError, IndexInterval, load_csv, write_csv
from .derivative import (DerivEstimate, dr_theta_u, dr_variance, qr_theta_u, qr_variance)
from .dr import dr_fit, dr_process
from .kernels import KernelSpec
from .montecarlo import StudyConfig, dgp_sample, population_oracle, run_study, true_theta, true_theta_u
from .qr import CoefEstimate, CoefProcess, qr_fit, qr_process

__version__ = "0.1.0"
