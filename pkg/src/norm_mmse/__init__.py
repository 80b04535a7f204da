"""MMSE estimation of the norm of a Gaussian vector seen through random erasures and noise."""

from .api import NormMMSEEstimator
from .estimator import (CoefficientTable, EnumerationCapError, EstimateResult, McEstimate,
                        coefficients, conditional_estimate_mc, conditional_estimate_series,
                        full_estimate, full_estimates)
from .model import MaskPattern, ModelParams, RngSeed, Sample, draw_sample, draw_samples, sample_mask
from .montecarlo import (McConfig, MseComparison, PairedComparison, compare, empirical_mmse,
                         paired_plugin_comparison)
from .mse import (HTable, LargeNBound, MseResult, h_entry, h_table, mmse_closed_form,
                  mmse_large_n_bound, mmse_limit_sigma_inf, mmse_limit_sigma_zero,
                  subset_pair_weight)
from .specfun import (ConvergenceError, LogSigned, SeriesControl, hypergeometric_pfq, log_gamma,
                      noncentral_chi2_pdf, pochhammer, r_function)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
