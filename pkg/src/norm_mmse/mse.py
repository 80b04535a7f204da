"""Closed-form mean-square error of the norm estimator and its limits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .estimator import coefficient_table, log_prefactor
from .model import ModelParams
from .specfun import (DEFAULT_CONTROL, ConvergenceError, SeriesControl, hypergeometric_pfq,
                      log_beta, log_gamma, sqrt_mean_from_laplace)


@dataclass(frozen=True)
class MseResult:
    value: float
    i_max: int
    j_max: int
    tail_bound: float
    method: str = "series"


@dataclass(frozen=True)
class HTable:
    """``h_ij(r)`` for ``0 <= i <= i_max``, ``0 <= j <= j_max`` and every admissible overlap ``r``."""

    params: ModelParams
    r_values: tuple[int, ...]
    entries: np.ndarray = field(repr=False)

    def get(self, i: int, j: int, r: int) -> float:
        return float(self.entries[self.r_values.index(r), i, j])


def r_min(params: ModelParams) -> int:
    return max(0, 2 * params.k_retained - params.n)


def _log_moment(p, dof: int, sigma2: float, q: int):
    """``log E[Z^p e^{-q Z}]`` where ``2 sigma^2 Z`` is chi-square with ``dof`` degrees of freedom.

    ``dof = 0`` is the point mass at zero.
    """
    p = np.asarray(p, dtype=float)
    if dof == 0:
        return np.where(p == 0, 0.0, -np.inf)
    half = dof / 2
    return (half * math.log(sigma2) + special.gammaln(p + half)
            - (p + half) * math.log(sigma2 + q) - special.gammaln(half))


def h_entry(i: int, j: int, r: int, params: ModelParams) -> float:
    """``E[Z_S^i Z_T^j exp(-(Z_S + Z_T))]`` for two K-subsets overlapping in ``r`` entries."""
    K = params.k_retained
    if not r_min(params) <= r <= K:
        raise ValueError(f"overlap r={r} outside [{r_min(params)}, {K}]")
    if i < 0 or j < 0:
        raise ValueError("i and j must be nonnegative")
    s2 = params.sigma2
    if K == 0:
        return 1.0 if i == j == 0 else 0.0
    lg = math.lgamma
    if r == 0:
        return math.exp(K * math.log(s2) + lg(i + K / 2) + lg(j + K / 2)
                        - (K + i + j) * math.log1p(s2) - 2 * lg(K / 2))
    if r == K:
        return math.exp(K / 2 * math.log(s2) + lg(i + j + K / 2)
                        - (i + j + K / 2) * math.log(s2 + 2) - lg(K / 2))
    d = K - r
    s = np.arange(i + 1)[:, None]
    t = np.arange(j + 1)[None, :]
    u = i + j - s - t
    log_terms = (_log_binom(i, s) + _log_binom(j, t) + (2 * K - r) / 2 * math.log(s2)
                 + special.gammaln(s + d / 2) + special.gammaln(t + d / 2) + special.gammaln(u + r / 2)
                 - (s + t + d) * math.log1p(s2) - (u + r / 2) * math.log(s2 + 2)
                 - 2 * lg(d / 2) - lg(r / 2))
    return float(np.exp(log_terms).sum())


def _log_binom(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def h_table(params: ModelParams, i_max: int, j_max: int) -> HTable:
    rs = tuple(range(r_min(params), params.k_retained + 1))
    entries = np.array([[[h_entry(i, j, r, params) for j in range(j_max + 1)]
                         for i in range(i_max + 1)] for r in rs])
    return HTable(params, rs, entries)


def subset_pair_weight(r: int, params: ModelParams) -> int:
    """Number of K-subsets T meeting a fixed K-subset S in exactly ``r`` entries."""
    K, n = params.k_retained, params.n
    if not 0 <= r <= K:
        raise ValueError(f"r must lie in [0, {K}], got {r}")
    if r < 2 * K - n:
        return 0
    return math.comb(K, r) * math.comb(n - K, K - r)


def _log_pair_sum(r: int, params: ModelParams, log_alpha: np.ndarray) -> float:
    """``log sum_{i,j<=T} a_i a_j h_ij(r)`` with ``log_alpha[i] = log(a_i i!)``.

    Expanding the binomials in ``h_ij(r)`` and regrouping by the powers that
    fall on the private parts (``s``, ``t``) and the shared part (``u``, ``v``)
    turns the quadruple sum into two matrix reductions of size ``T^2``.
    """
    K, s2 = params.k_retained, params.sigma2
    T = len(log_alpha) - 1
    idx = np.arange(T + 1)
    log_fact = special.gammaln(idx + 1.0)
    log_mp = _log_moment(idx, K - r, s2, 1) - log_fact
    log_mr = _log_moment(np.arange(2 * T + 1), r, s2, 2)
    # A_u = sum_{s <= T-u} alpha_{s+u} m_P(s) / s!
    su = idx[:, None] + idx[None, :]
    with np.errstate(invalid="ignore"):
        grid = np.where(su <= T, log_alpha[np.minimum(su, T)] + log_mp[:, None], -np.inf)
    log_A = special.logsumexp(grid, axis=0) - log_fact
    log_A = np.where(np.isnan(log_A), -np.inf, log_A)
    keep = np.isfinite(log_A)
    a_idx = idx[keep]
    la = log_A[keep]
    pair = la[:, None] + la[None, :] + log_mr[a_idx[:, None] + a_idx[None, :]]
    return float(special.logsumexp(pair))


def _log_total(params: ModelParams, log_alpha: np.ndarray) -> float:
    K, n = params.k_retained, params.n
    logs = []
    for r in range(r_min(params), K + 1):
        w = subset_pair_weight(r, params)
        logs.append(math.log(w) + _log_pair_sum(r, params, log_alpha))
    return float(special.logsumexp(logs)) - math.log(math.comb(n, K))


def _predicted_terms(params: ModelParams, ctrl: SeriesControl) -> float:
    """Rough count of terms the series route needs before its tails are negligible."""
    s2 = params.sigma2
    budget = math.log(1 / ctrl.rel_tol) + (params.n / 2 + 2) * math.log(2 + 2 / s2)
    # inner series of a_l decays like (1/(s^2+1))^k; the shared-overlap
    # moments like (2/(s^2+2))^m
    inner = budget / math.log1p(s2) if params.j_missing else 1.0
    outer = budget / math.log1p(s2 / 2) if params.k_retained else 1.0
    return max(inner, outer)


def _mmse_series(params: ModelParams, ctrl: SeriesControl) -> MseResult:
    # 2 (s^2/(s^2+1))^(J+1) is the square of the estimator prefactor
    second_prefactor = 2 * log_prefactor(params)
    T = 16
    prev_total = None
    quiet = 0
    while True:
        if T > ctrl.max_terms:
            raise ConvergenceError(f"MSE double series did not converge within {ctrl.max_terms} orders for {params}")
        table = coefficient_table(params, T + 1, ctrl)
        log_alpha = table.log_a[:T + 1] + special.gammaln(np.arange(T + 1) + 1.0)
        total = math.exp(second_prefactor + _log_total(params, log_alpha))
        if prev_total is not None:
            frame = total - prev_total
            if abs(frame) <= ctrl.rel_tol * abs(total):
                quiet += 1
                if quiet == 2:
                    return MseResult(params.n - total, T, T, abs(frame), "series")
            else:
                quiet = 0
        prev_total = total
        T *= 2


_LAGUERRE_NODES = 96
# above this predicted frame size the T^2 series is slower than the quadrature route
_SERIES_TERM_LIMIT = 256


def _mmse_integral(params: ModelParams) -> MseResult:
    """Same quantity with the (i, j) sums exchanged for expectations.

    ``sum_ij a_i a_j h_ij(r)`` equals ``E[F(Z_P + Z_R) F(Z_Q + Z_R)]`` where
    ``F`` is the conditional estimator up to its prefactor; the inner
    expectation over the private part is done through the Laplace transform
    and the shared part by generalized Gauss-Laguerre quadrature.
    """
    n, K, J, s2 = params.n, params.k_retained, params.j_missing, params.sigma2
    c = s2 / (s2 + 1)
    if K == 0:
        g0 = sqrt_mean_from_laplace(lambda t: -0.5 * J * np.log1p(2 * t))
        return MseResult(n - float(g0) ** 2, 0, 0, 0.0, "integral")

    def shared_mean(z_r: np.ndarray, d: int) -> np.ndarray:
        # E over the private block (d dof) of the conditional estimate at z_r + Z_P
        def log_laplace(t):
            ct = c * t
            b = ct / (1 + 2 * ct)
            return (-0.5 * K * np.log1p(2 * ct) - 0.5 * J * np.log1p(2 * t)
                    - 2 * z_r[:, None] * b - 0.5 * d * np.log1p(2 * b / s2))
        return sqrt_mean_from_laplace(log_laplace)

    terms = []
    for r in range(r_min(params), K + 1):
        w = subset_pair_weight(r, params)
        if r == 0:
            val = float(shared_mean(np.zeros(1), K)[0]) ** 2
        else:
            x, wts = special.roots_genlaguerre(_LAGUERRE_NODES, r / 2 - 1)
            # Z_R = x / sigma^2 with x ~ Gamma(r/2, 1)
            g = shared_mean(x / s2, K - r)
            val = float(np.sum(wts * g * g) / math.gamma(r / 2))
        terms.append(w * val)
    second = math.fsum(terms) / math.comb(n, K)
    return MseResult(n - second, _LAGUERRE_NODES, _LAGUERRE_NODES, 0.0, "integral")


def mmse_closed_form(params: ModelParams, ctrl: SeriesControl = DEFAULT_CONTROL,
                     method: str = "auto") -> MseResult:
    """``n - 2 (s^2/(s^2+1))^(J+1) / C(n,K) * sum_{r,i,j} C(K,r) C(n-K,K-r) a_i a_j h_ij(r)``.

    ``method="series"`` sums square frames ``i, j <= T`` with ``T`` doubling
    until two successive frames add less than ``rel_tol`` of the total.  For
    small noise the coefficients decay too slowly for that, and
    ``method="auto"`` switches to the exchanged-sum ``"integral"`` route.
    """
    if method == "auto":
        method = "series" if _predicted_terms(params, ctrl) <= _SERIES_TERM_LIMIT else "integral"
    if method == "series":
        return _mmse_series(params, ctrl)
    if method == "integral":
        return _mmse_integral(params)
    raise ValueError(f"unknown method {method!r}")


def mmse_limit_sigma_zero(n: int, k_retained: int, ctrl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Noiseless limit of the MSE; only the erased entries leave residual error."""
    if n < 1 or not 0 <= k_retained <= n:
        raise ValueError(f"need n >= 1 and 0 <= K <= n, got n={n}, K={k_retained}")
    J = n - k_retained
    log_ratio = log_beta((n + J) / 2, (n + 1) / 2) - log_beta((n + J + 1) / 2, n / 2)
    f32 = hypergeometric_pfq([(n + 1) / 2, J / 2, -0.5], [(n + J + 1) / 2, n / 2], 1.0, ctrl)
    return n - (n + J) * math.exp(log_ratio) * f32


def mmse_limit_sigma_inf(n: int) -> float:
    """Large-noise limit: the variance of a chi-distributed norm."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return n - 2 * math.exp(2 * (log_gamma((n + 1) / 2) - log_gamma(n / 2)))


@dataclass(frozen=True)
class LargeNBound:
    value: float
    saturated: bool


def mmse_large_n_bound(n: int, sigma: float) -> LargeNBound:
    """Asymptotic upper bound on ``mmse / n``; advisory, derived for large ``n``."""
    if n < 1 or not sigma > 0:
        raise ValueError("need n >= 1 and sigma > 0")
    eps = math.sqrt(sigma ** 2 + 1) / (4 * n * sigma ** 3)
    if eps > 1:
        return LargeNBound(1.0, True)
    return LargeNBound(1 - (1 - eps) ** 2, False)
