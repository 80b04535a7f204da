"""Special functions used by the estimator and MSE formulas.

Everything that can overflow (Gamma ratios, Pochhammer symbols, series
terms) is carried in log-domain with an explicit sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special


class ConvergenceError(ArithmeticError):
    """A truncated series did not meet its stop rule within ``max_terms``."""


@dataclass(frozen=True)
class SeriesControl:
    """Truncation policy shared by every infinite series in the package."""

    rel_tol: float = 1e-12
    abs_floor: float = 1e-300
    max_terms: int = 10_000

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol!r}")
        if not self.abs_floor > 0:
            raise ValueError(f"abs_floor must be positive, got {self.abs_floor!r}")
        if int(self.max_terms) != self.max_terms or self.max_terms < 1:
            raise ValueError(f"max_terms must be a positive integer, got {self.max_terms!r}")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class LogSigned:
    """A real number stored as ``sign * exp(log_abs)``."""

    log_abs: float
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign!r}")

    @classmethod
    def zero(cls) -> "LogSigned":
        return cls(-math.inf, 0)

    @classmethod
    def from_float(cls, x: float) -> "LogSigned":
        if x == 0:
            return cls.zero()
        return cls(math.log(abs(x)), 1 if x > 0 else -1)

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_abs)

    def __mul__(self, other):
        if not isinstance(other, LogSigned):
            other = LogSigned.from_float(float(other))
        if self.sign == 0 or other.sign == 0:
            return LogSigned.zero()
        return LogSigned(self.log_abs + other.log_abs, self.sign * other.sign)

    __rmul__ = __mul__

    def isclose(self, other: "LogSigned", rel_tol: float = 1e-12) -> bool:
        if self.sign != other.sign:
            return False
        if self.sign == 0:
            return True
        return abs(self.log_abs - other.log_abs) <= rel_tol


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for positive real ``x``."""
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def log_beta(a: float, b: float) -> float:
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b)


def pochhammer(a: float, k: int) -> LogSigned:
    """Rising factorial ``(a)_k = a (a+1) ... (a+k-1)`` as a :class:`LogSigned`."""
    k = int(k)
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if k == 0:
        return LogSigned(0.0, 1)
    if a <= 0 and float(a).is_integer() and -a < k:
        return LogSigned.zero()
    if a > 0:
        return LogSigned(math.lgamma(a + k) - math.lgamma(a), 1)
    if float(a).is_integer():
        # every factor is a negative integer: (a)_k = (-1)^k Gamma(1-a) / Gamma(1-a-k)
        sign = -1 if k % 2 else 1
        return LogSigned(math.lgamma(1 - a) - math.lgamma(1 - a - k), sign)
    # math.lgamma returns log|Gamma| for negative non-integers
    n_negative = min(k, math.ceil(-a))
    sign = -1 if n_negative % 2 else 1
    return LogSigned(math.lgamma(a + k) - math.lgamma(a), sign)


def log_pochhammer(a, k):
    """Vectorized ``log (a)_k`` for ``a > 0``."""
    a = np.asarray(a, dtype=float)
    return special.gammaln(a + k) - special.gammaln(a)


def _is_nonpositive_integer(x: float) -> bool:
    return x <= 0 and float(x).is_integer()


def hypergeometric_pfq(a_params: Sequence[float], b_params: Sequence[float], x: float,
                       ctrl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Generalized hypergeometric series ``pFq(a; b; x)``.

    Summation stops once two consecutive terms fall below
    ``rel_tol * |partial sum|`` (or below ``abs_floor``), or when a
    nonpositive-integer numerator parameter terminates the series.  At
    ``x == 1`` with ``p == q + 1`` the terms decay only algebraically, so the
    direct sum is completed with an Euler-Maclaurin tail estimate instead.
    """
    a_params = [float(a) for a in a_params]
    b_params = [float(b) for b in b_params]
    for b in b_params:
        if _is_nonpositive_integer(b):
            raise ValueError(f"denominator parameter {b} is zero or a negative integer")
    terminates = any(_is_nonpositive_integer(a) for a in a_params)
    if x == 0:
        return 1.0
    if x == 1.0 and len(a_params) == len(b_params) + 1 and not terminates:
        return _pfq_unit_argument(a_params, b_params, ctrl)

    total = 1.0
    term = 1.0
    quiet = 0
    for k in range(ctrl.max_terms):
        num = math.prod(a + k for a in a_params)
        if num == 0.0:
            return total
        den = math.prod(b + k for b in b_params) * (k + 1)
        term *= num / den * x
        total += term
        if abs(term) < max(ctrl.rel_tol * abs(total), ctrl.abs_floor):
            quiet += 1
            if quiet == 2:
                return total
        else:
            quiet = 0
    raise ConvergenceError(
        f"pFq({a_params}; {b_params}; {x}) did not converge in {ctrl.max_terms} terms")


def _pfq_unit_argument(a_params, b_params, ctrl):
    excess = sum(b_params) - sum(a_params)
    if excess <= 0:
        raise ConvergenceError(
            f"pFq at x=1 diverges: sum(b) - sum(a) = {excess} <= 0")
    # Past this index every factor (a_i + k) has a fixed sign and the term
    # magnitude is a smooth function of k.
    start = max([0.0] + [-a for a in a_params] + [-b for b in b_params])
    n_direct = int(max(64, 4 * start + 64))
    n_direct = min(n_direct, ctrl.max_terms)

    total = 1.0
    term = 1.0
    for k in range(n_direct):
        term *= math.prod(a + k for a in a_params) / (
            math.prod(b + k for b in b_params) * (k + 1))
        total += term
    # ``term`` is now t_N with N = n_direct; tail = sum_{k >= N} t_k.
    N = n_direct
    t_N = term

    def phi(k):
        return (sum(special.gammaln(a + k) for a in a_params)
                - sum(special.gammaln(b + k) for b in b_params)
                - special.gammaln(k + 1))

    def dphi(k, order):
        return (sum(special.polygamma(order - 1, a + k) for a in a_params)
                - sum(special.polygamma(order - 1, b + k) for b in b_params)
                - special.polygamma(order - 1, k + 1))

    phi_N = phi(N)
    ratio_integral, _ = integrate.quad(lambda k: math.exp(phi(k) - phi_N), N, math.inf,
                                       epsabs=0.0, epsrel=1e-13, limit=200)
    d1, d2, d3 = dphi(N, 1), dphi(N, 2), dphi(N, 3)
    # Euler-Maclaurin: sum_{k>=N} f(k) = int_N^inf f + f(N)/2 - f'(N)/12 + f'''(N)/720 - ...
    tail = t_N * (ratio_integral + 0.5 - d1 / 12 + (d1 ** 3 + 3 * d1 * d2 + d3) / 720)
    # t_N was already added to ``total``
    return total + tail - t_N


_LAPLACE_GRID = np.arange(-90.0, 90.0 + 1e-9, 0.05)


def sqrt_mean_from_laplace(log_laplace) -> np.ndarray:
    """``E[sqrt(V)]`` for ``V >= 0`` from its log Laplace transform.

    Uses ``sqrt(v) = (4 pi)^(-1/2) int_0^inf (1 - exp(-t v)) t^(-3/2) dt``
    with ``t = exp(u)``; the integrand decays exponentially in ``u`` at both
    ends, so a plain trapezoid rule on a wide grid is accurate to rounding.
    ``log_laplace(t)`` must accept an array ``t`` of shape ``(G,)`` and return
    ``log E[exp(-t V)]`` broadcast to ``(..., G)``.
    """
    u = _LAPLACE_GRID
    integrand = -np.expm1(log_laplace(np.exp(u))) * np.exp(-u / 2)
    h = u[1] - u[0]
    area = h * (integrand.sum(axis=-1) - 0.5 * (integrand[..., 0] + integrand[..., -1]))
    return area / (2 * math.sqrt(math.pi))


def central_chi2_pdf(u: float, dof: int) -> float:
    if u < 0:
        raise ValueError(f"u must be nonnegative, got {u!r}")
    half = dof / 2
    if u == 0:
        return math.inf if dof == 1 else (0.5 if dof == 2 else 0.0)
    return math.exp(-u / 2 + (half - 1) * math.log(u) - half * math.log(2) - math.lgamma(half))


def noncentral_chi2_pdf(u: float, dof: int, lam: float,
                        ctrl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Density of a noncentral chi-square written with a ``0F1`` factor.

    Reduces exactly to :func:`central_chi2_pdf` at ``lam == 0``.
    """
    if u < 0:
        raise ValueError(f"u must be nonnegative, got {u!r}")
    if lam < 0:
        raise ValueError(f"noncentrality must be nonnegative, got {lam!r}")
    if int(dof) != dof or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof!r}")
    if lam == 0:
        return central_chi2_pdf(u, dof)
    if u == 0:
        return math.exp(-lam / 2) * central_chi2_pdf(0.0, dof)
    f01 = hypergeometric_pfq([], [dof / 2], lam * u / 4, ctrl)
    return math.exp(-lam / 2) * f01 * central_chi2_pdf(u, dof)


def r_function(alpha: float, beta: float, gamma: float, nu: float, epsilon: float,
               ctrl: SeriesControl = DEFAULT_CONTROL, form: str = "auto") -> float:
    """``int_0^1 exp(-alpha x) x^(beta-1) (1-x)^(gamma-1) 0F1(;nu;epsilon x) dx``.

    Evaluated as a double power series in ``alpha`` and ``epsilon`` summed
    over anti-diagonals ``k + l = d``.  ``form="beta"`` uses the reduced
    series valid for ``nu == beta``; ``form="general"`` keeps the
    ``(beta)_l / (nu)_l`` factor; ``"auto"`` picks the former when it applies.
    """
    if alpha < 0 or epsilon < 0 or beta <= 0 or gamma <= 0 or nu <= 0:
        raise ValueError("r_function requires alpha, epsilon >= 0 and beta, gamma, nu > 0")
    if form == "auto":
        form = "beta" if nu == beta else "general"
    if form == "beta" and nu != beta:
        raise ValueError("form='beta' requires nu == beta")
    if form not in ("beta", "general"):
        raise ValueError(f"unknown form {form!r}")

    log_alpha = math.log(alpha) if alpha > 0 else -math.inf
    log_eps = math.log(epsilon) if epsilon > 0 else -math.inf
    total = 0.0
    quiet = 0
    terms = 0
    for d in range(ctrl.max_terms):
        k = np.arange(d + 1, dtype=float)
        l = d - k
        with np.errstate(invalid="ignore"):
            log_t = (np.where(k > 0, k * log_alpha, 0.0) + np.where(l > 0, l * log_eps, 0.0)
                     + log_pochhammer(gamma, k) - special.gammaln(k + 1) - special.gammaln(l + 1)
                     - log_pochhammer(beta + gamma, d))
            if form == "general":
                log_t = log_t + log_pochhammer(beta, l) - log_pochhammer(nu, l)
        diagonal = float(np.exp(log_t).sum())
        total += diagonal
        terms += d + 1
        if diagonal < max(ctrl.rel_tol * total, ctrl.abs_floor):
            quiet += 1
            if quiet == 2:
                return math.exp(-alpha + log_beta(beta, gamma)) * total
        else:
            quiet = 0
    raise ConvergenceError(f"r_function did not converge in {ctrl.max_terms} diagonals")
