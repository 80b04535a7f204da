"""MMSE estimator of ||X|| from the erased, noisy observation Y.

Given the retained set S, the conditional estimate depends on y only
through ``z = ||y_S||^2 / (2 sigma^2 (sigma^2 + 1))``::

    E[||X|| | y, S] = sqrt(2) (sigma^2/(sigma^2+1))^((J+1)/2) e^{-z} sum_l a_l z^l

and the full estimate averages that over all K-subsets S.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy import special

from .model import ModelParams, as_generator, sample_masks
from .specfun import (DEFAULT_CONTROL, ConvergenceError, SeriesControl,
                      log_pochhammer, sqrt_mean_from_laplace)

DEFAULT_ENUMERATION_CAP = 2_000_000


class EnumerationCapError(ValueError):
    """Exact subset enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class EstimateResult:
    value: float
    terms_used: int
    truncated_cleanly: bool = True
    std_error: float | None = None


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int

    @classmethod
    def from_samples(cls, values) -> "McEstimate":
        values = np.asarray(values, dtype=float)
        n = values.size
        sd = values.std(ddof=1) if n > 1 else 0.0
        return cls(float(values.mean()), float(sd / math.sqrt(n)), int(n))

    def z_score(self, reference: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean == reference else math.copysign(math.inf, self.mean - reference)
        return (self.mean - reference) / self.std_error


def z_statistic(y_s_sq_norm, sigma: float):
    """Map ``||y_S||^2`` to the series argument ``z``."""
    s2 = sigma * sigma
    return np.asarray(y_s_sq_norm, dtype=float) / (2 * s2 * (s2 + 1))


def log_prefactor(params: ModelParams) -> float:
    s2 = params.sigma2
    return 0.5 * math.log(2) + 0.5 * (params.j_missing + 1) * (math.log(s2) - math.log1p(s2))


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients ``a_0 .. a_L`` stored as logs (they span many decades)."""

    params: ModelParams
    log_a: np.ndarray = field(repr=False)
    inner_terms: int = 0

    def __post_init__(self):
        self.log_a.setflags(write=False)

    @property
    def a(self) -> np.ndarray:
        return np.exp(self.log_a)

    @property
    def L(self) -> int:
        return len(self.log_a) - 1

    def __len__(self):
        return len(self.log_a)


def coefficients(params: ModelParams, L: int, ctrl: SeriesControl = DEFAULT_CONTROL) -> CoefficientTable:
    """Compute ``a_l = (1/l!) sum_k (J/2)_k Gamma((n+1)/2+k+l) / (Gamma(n/2+k+l) k! (sigma^2+1)^k)``.

    The inner sum over ``k`` is vectorized across ``l``; it collapses to its
    ``k = 0`` term when no entries are missing.
    """
    if L < 0:
        raise ValueError(f"L must be nonnegative, got {L}")
    n, J = params.n, params.j_missing
    l = np.arange(L + 1, dtype=float)[:, None]
    head = (n + 1) / 2 + l
    tail = n / 2 + l
    log_fact_l = special.gammaln(l[:, 0] + 1)
    if J == 0:
        log_a = special.gammaln(head[:, 0]) - special.gammaln(tail[:, 0]) - log_fact_l
        return CoefficientTable(params, log_a, inner_terms=1)

    log_x = -math.log1p(params.sigma2)
    log_tol = math.log(ctrl.rel_tol)
    acc = np.full(L + 1, -np.inf)
    block = 128
    k0 = 0
    while True:
        if k0 >= ctrl.max_terms:
            raise ConvergenceError(
                f"a_l inner series did not converge in {ctrl.max_terms} terms for {params}")
        k = np.arange(k0, min(k0 + block, ctrl.max_terms), dtype=float)[None, :]
        log_t = (log_pochhammer(J / 2, k) + special.gammaln(head + k) - special.gammaln(tail + k)
                 - special.gammaln(k + 1) + k * log_x)
        acc = np.logaddexp(acc, special.logsumexp(log_t, axis=1))
        k0 += k.shape[1]
        last, prev = log_t[:, -1], log_t[:, -2] if k.shape[1] > 1 else log_t[:, -1]
        done = (last < acc + log_tol) & (prev < acc + log_tol) & (last <= prev)
        if done.all():
            break
        block *= 2
    return CoefficientTable(params, acc - log_fact_l, inner_terms=k0)


@lru_cache(maxsize=256)
def _cached_table(params: ModelParams, L: int, ctrl: SeriesControl) -> CoefficientTable:
    return coefficients(params, L, ctrl)


def coefficient_table(params: ModelParams, min_length: int,
                      ctrl: SeriesControl = DEFAULT_CONTROL) -> CoefficientTable:
    """Shared table with at least ``min_length`` entries (length rounded up to a power of two)."""
    length = 1 << max(5, int(min_length - 1).bit_length())
    return _cached_table(params, length - 1, ctrl)


def _log_series(z: np.ndarray, params: ModelParams, ctrl: SeriesControl) -> tuple[np.ndarray, int]:
    """``log(e^{-z} sum_l a_l z^l)`` for an array of ``z``, auto-extending ``L``.

    The relative size of the last terms grows with ``z``, so the stop rule is
    checked on the largest ``z`` only.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        return z.copy(), 0
    zmax = float(z.max())
    length = int(zmax + 10 * math.sqrt(zmax) + 32)
    log_tol = math.log(ctrl.rel_tol)
    l = np.arange(ctrl.max_terms + 1, dtype=float)
    while True:
        if length > ctrl.max_terms:
            raise ConvergenceError(
                f"estimator series needs more than {ctrl.max_terms} terms (max z = {zmax:g})")
        log_a = coefficient_table(params, length, ctrl).log_a[:length]
        lt = log_a - zmax
        if zmax > 0:
            lt = lt + l[:length] * math.log(zmax)
        total = special.logsumexp(lt)
        if zmax == 0 or (lt[-1] < total + log_tol and lt[-2] < total + log_tol):
            break
        length *= 2
    if zmax <= 600:
        return _horner_log_series(z, log_a, zmax), length
    out = np.empty_like(z)
    chunk = max(1, 4_000_000 // length)
    with np.errstate(divide="ignore"):
        log_z = np.log(z)
    for s in range(0, z.size, chunk):
        with np.errstate(invalid="ignore"):
            lt = np.where(l[:length] == 0, 0.0, l[:length] * log_z[s:s + chunk, None])
        out[s:s + chunk] = special.logsumexp(lt + log_a, axis=1) - z[s:s + chunk]
    return out, length


def _horner_log_series(z, log_a, zmax):
    # rescale to w = z / scale <= 1 so every coefficient stays representable
    scale = max(zmax, 1.0)
    log_b = log_a + np.arange(len(log_a)) * math.log(scale)
    shift = float(log_b.max())
    b = np.exp(log_b - shift)
    w = z / scale
    acc = np.full_like(z, b[-1])
    for coef in b[-2::-1]:
        acc *= w
        acc += coef
    return np.log(acc) + shift - z


def conditional_estimates(y_s_sq_norms, params: ModelParams,
                          ctrl: SeriesControl = DEFAULT_CONTROL) -> np.ndarray:
    """Vectorized :func:`conditional_estimate_series` returning bare values."""
    y_s_sq_norms = np.asarray(y_s_sq_norms, dtype=float)
    if np.any(y_s_sq_norms < 0):
        raise ValueError("squared norms must be nonnegative")
    logs, _ = _log_series(z_statistic(y_s_sq_norms, params.sigma), params, ctrl)
    return np.exp(log_prefactor(params) + logs).reshape(y_s_sq_norms.shape)


def conditional_estimate_series(y_s_sq_norm: float, params: ModelParams,
                                ctrl: SeriesControl = DEFAULT_CONTROL) -> EstimateResult:
    """``E[||X|| | Y = y, supp(B) = S]`` from the power series in ``z``.

    Only ``||y_S||^2`` enters.  With ``K = 0`` the retained block is empty,
    so the argument must be zero and the result is the prior mean.
    """
    if not y_s_sq_norm >= 0:
        raise ValueError(f"||y_S||^2 must be nonnegative, got {y_s_sq_norm!r}")
    if params.k_retained == 0 and y_s_sq_norm != 0:
        raise ValueError("with k_retained = 0 the retained block is empty; ||y_S||^2 must be 0")
    logs, terms = _log_series(z_statistic([y_s_sq_norm], params.sigma), params, ctrl)
    return EstimateResult(float(np.exp(log_prefactor(params) + logs[0])), terms, True)


def conditional_estimate_laplace(y_s_sq_norms, params: ModelParams) -> np.ndarray:
    """Conditional estimate by numerical inversion of the Laplace transform.

    Independent of the series: ``E sqrt(c U1 + U2)`` with ``c = s^2/(s^2+1)``,
    ``U1`` noncentral chi-square (K dof, noncentrality ``2z``) and ``U2``
    central chi-square (J dof).
    """
    z = np.atleast_1d(z_statistic(y_s_sq_norms, params.sigma))
    c = params.sigma2 / (params.sigma2 + 1)
    K, J = params.k_retained, params.j_missing

    def log_laplace(t):
        ct = c * t
        return (-0.5 * K * np.log1p(2 * ct) - 0.5 * J * np.log1p(2 * t)
                - 2 * z[:, None] * ct / (1 + 2 * ct))

    return sqrt_mean_from_laplace(log_laplace).reshape(np.shape(y_s_sq_norms))


def conditional_estimate_mc(y_s_sq_norm: float, params: ModelParams, n_samples: int,
                            rng=None, chunk: int = 250_000) -> McEstimate:
    """Monte-Carlo mean of ``sqrt(c U1 + U2)`` with the chi-square variables built from Gaussians."""
    if not y_s_sq_norm >= 0:
        raise ValueError(f"||y_S||^2 must be nonnegative, got {y_s_sq_norm!r}")
    K, J = params.k_retained, params.j_missing
    if K == 0 and y_s_sq_norm != 0:
        raise ValueError("with k_retained = 0, ||y_S||^2 must be 0")
    rng = as_generator(rng)
    s2 = params.sigma2
    c = s2 / (s2 + 1)
    lam = y_s_sq_norm / (s2 * (s2 + 1))
    # any offset vector with squared norm lam gives the same law
    mu = math.sqrt(lam / K) if K else 0.0
    values = np.empty(n_samples)
    for s in range(0, n_samples, chunk):
        m = min(chunk, n_samples - s)
        u1 = ((rng.standard_normal((m, K)) + mu) ** 2).sum(axis=1)
        u2 = (rng.standard_normal((m, J)) ** 2).sum(axis=1)
        values[s:s + m] = np.sqrt(c * u1 + u2)
    return McEstimate.from_samples(values)


def iter_subsets(n: int, k: int, block: int = 16_384) -> Iterator[np.ndarray]:
    """All K-subsets of ``range(n)`` in lexicographic order, as ``(block, k)`` index arrays."""
    it = itertools.combinations(range(n), k)
    while True:
        rows = list(itertools.islice(it, block))
        if not rows:
            return
        yield np.asarray(rows, dtype=np.intp).reshape(len(rows), k)


def _check_cap(params: ModelParams, enumeration_cap: int):
    count = params.n_subsets
    if count > enumeration_cap:
        raise EnumerationCapError(
            f"exact mode needs C({params.n},{params.k_retained}) = {count} subsets, above the cap "
            f"of {enumeration_cap}; use sampled mode (mode='sampled', n_subsets=m) instead")


def _combine(values: np.ndarray, z: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "uniform":
        return values.mean(axis=-1)
    # posterior P(S | y) is proportional to exp(z_S)
    w = np.exp(z - z.max(axis=-1, keepdims=True))
    return (w * values).sum(axis=-1) / w.sum(axis=-1)


def full_estimates(Y, params: ModelParams, ctrl: SeriesControl = DEFAULT_CONTROL,
                   mode: str = "exact", n_subsets: int | None = None, rng=None,
                   weighting: str = "uniform",
                   enumeration_cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Full estimates for each row of ``Y`` (shape ``(m, n)``)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != params.n:
        raise ValueError(f"expected an array of shape (m, {params.n}), got {Y.shape}")
    if weighting not in ("uniform", "posterior"):
        raise ValueError(f"weighting must be 'uniform' or 'posterior', got {weighting!r}")
    sq = Y * Y
    if mode == "exact":
        _check_cap(params, enumeration_cap)
        if weighting == "uniform":
            acc = np.zeros(len(Y))
            for idx in iter_subsets(params.n, params.k_retained):
                acc += conditional_estimates(sq[:, idx].sum(axis=-1), params, ctrl).sum(axis=1)
            return acc / params.n_subsets
        blocks = [sq[:, idx].sum(axis=-1) for idx in iter_subsets(params.n, params.k_retained)]
        ssq = np.concatenate(blocks, axis=1)
        return _combine(conditional_estimates(ssq, params, ctrl), z_statistic(ssq, params.sigma),
                        weighting)
    if mode == "sampled":
        if not n_subsets or n_subsets < 1:
            raise ValueError("sampled mode needs n_subsets >= 1")
        rng = as_generator(rng)
        masks = sample_masks(params, len(Y) * n_subsets, rng).reshape(len(Y), n_subsets, params.n)
        ssq = np.einsum("mn,msn->ms", sq, masks.astype(float))
        return _combine(conditional_estimates(ssq, params, ctrl), z_statistic(ssq, params.sigma),
                        weighting)
    raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")


def full_estimate(y, params: ModelParams, ctrl: SeriesControl = DEFAULT_CONTROL,
                  mode: str = "exact", n_subsets: int | None = None, rng=None,
                  weighting: str = "uniform",
                  enumeration_cap: int = DEFAULT_ENUMERATION_CAP) -> EstimateResult:
    """``E[||X|| | Y = y]`` as the average of conditional estimates over K-subsets.

    ``mode="exact"`` walks every subset; ``mode="sampled"`` averages over
    ``n_subsets`` uniformly drawn subsets and reports the subset-sampling
    standard error.  ``weighting="posterior"`` replaces the uniform average
    by the posterior subset weights ``P(S | y)``, which depend on ``y``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (params.n,):
        raise ValueError(f"y must have length {params.n}, got shape {y.shape}")
    if weighting not in ("uniform", "posterior"):
        raise ValueError(f"weighting must be 'uniform' or 'posterior', got {weighting!r}")
    sq = y * y
    if mode == "exact":
        _check_cap(params, enumeration_cap)
        ssq = np.concatenate([sq[idx].sum(axis=-1)
                              for idx in iter_subsets(params.n, params.k_retained)])
        logs, terms = _log_series(z_statistic(ssq, params.sigma), params, ctrl)
        values = np.exp(log_prefactor(params) + logs)
        value = _combine(values, z_statistic(ssq, params.sigma), weighting)
        return EstimateResult(float(value), terms, True)
    if mode == "sampled":
        if not n_subsets or n_subsets < 1:
            raise ValueError("sampled mode needs n_subsets >= 1")
        masks = sample_masks(params, n_subsets, as_generator(rng))
        ssq = masks.astype(float) @ sq
        logs, terms = _log_series(z_statistic(ssq, params.sigma), params, ctrl)
        values = np.exp(log_prefactor(params) + logs)
        if weighting == "uniform":
            mc = McEstimate.from_samples(values)
            return EstimateResult(mc.mean, terms, True, std_error=mc.std_error)
        value = _combine(values, z_statistic(ssq, params.sigma), weighting)
        return EstimateResult(float(value), terms, True)
    raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
