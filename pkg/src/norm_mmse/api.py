"""scikit-learn style wrapper around the norm estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .estimator import DEFAULT_ENUMERATION_CAP, full_estimates
from .model import ModelParams
from .mse import MseResult, mmse_closed_form
from .specfun import SeriesControl


class NormMMSEEstimator(RegressorMixin, BaseEstimator):
    """Estimate ``||x||`` from observations ``y = Bx + noise`` (one per row).

    Parameters
    ----------
    n_retained : int or None
        Number of entries kept by the erasure mask. ``None`` keeps all of them.
    sigma : float
        Noise standard deviation.
    mode : {"exact", "sampled"}
        Average over every retained-set candidate, or over ``n_subsets``
        random draws of them.
    n_subsets : int or None
        Number of candidates drawn per row in sampled mode.
    weighting : {"uniform", "posterior"}
        How candidate retained sets are averaged.
    rel_tol, max_terms : float, int
        Series truncation controls.
    random_state : int, Generator or None
        Seed for sampled mode.

    Nothing is learned from data: ``fit`` only validates inputs and fixes
    the dimension, so the estimator composes with pipelines and
    cross-validation utilities.
    """

    def __init__(self, n_retained=None, sigma=1.0, mode="exact", n_subsets=None,
                 weighting="uniform", rel_tol=1e-12, max_terms=10_000,
                 enumeration_cap=DEFAULT_ENUMERATION_CAP, random_state=None):
        self.n_retained = n_retained
        self.sigma = sigma
        self.mode = mode
        self.n_subsets = n_subsets
        self.weighting = weighting
        self.rel_tol = rel_tol
        self.max_terms = max_terms
        self.enumeration_cap = enumeration_cap
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[1]
        k = n if self.n_retained is None else self.n_retained
        if k > n:
            raise ValueError(f"n_retained={k} exceeds the number of features {n}")
        if self.mode not in ("exact", "sampled"):
            raise ValueError(f"mode must be 'exact' or 'sampled', got {self.mode!r}")
        if self.mode == "sampled" and not self.n_subsets:
            raise ValueError("sampled mode needs n_subsets")
        self.params_ = ModelParams(n, k, self.sigma)
        self.ctrl_ = SeriesControl(rel_tol=self.rel_tol, max_terms=self.max_terms)
        self._rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = n
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return full_estimates(X, self.params_, self.ctrl_, mode=self.mode,
                              n_subsets=self.n_subsets, rng=self._rng,
                              weighting=self.weighting, enumeration_cap=self.enumeration_cap)

    def closed_form_mse(self) -> MseResult:
        check_is_fitted(self, "params_")
        return mmse_closed_form(self.params_, self.ctrl_)
