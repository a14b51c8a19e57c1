"""Upper incomplete gamma function for real order and the exponential integral.

The Rayleigh service kernel needs ``Gamma(s, x)`` with ``x = 1/mean_snr`` and
an order ``s`` that runs far into the negative axis.  Internally everything is
carried in the scaled form ``G(s, x) = exp(x) * x**(-s) * Gamma(s, x)``, which
stays O(1) where ``Gamma`` itself overflows, and satisfies the downward
recurrence ``G(s, x) = (x * G(s + 1, x) - 1) / s``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from scipy import integrate, special

from .errors import DomainError, LossOfAccuracyError, QuadratureError

#: Deepest downward recurrence allowed by default; covers orders down to -1e6.
DEFAULT_MAX_DEPTH = 1_000_100

# Seeds closer than this to a non-positive integer from above are taken from
# a quadratic through Gamma(0, x), Gamma(h, x), Gamma(2h, x); the first
# recurrence step would otherwise divide a cancelled numerator by ~0.
_NEAR_INTEGER = 1e-6
_EXTRAP_STEP = 1e-3

# The downward recurrence amplifies seed error by x/|s| per step, so for
# x >= 1 the continued fraction (which converges fast there) is used instead.
_CF_MIN_X = 1.0
_CF_MAX_ITER = 10_000
_CF_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class Quadrature:
    """Settings for the brute-force integration oracle."""

    rel_tol: float = 1e-10
    max_subdivisions: int = 500

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


def _check_domain(s: float, x: float) -> None:
    if not (math.isfinite(s) and math.isfinite(x)):
        raise DomainError(f"non-finite argument: s={s!r}, x={x!r}")
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x!r}")
    if x == 0 and s <= 0:
        raise DomainError(f"Gamma(s, 0) diverges for s <= 0 (s={s!r})")


def _positive_order(s: float, x: float) -> float:
    # s > 0: regularized Q from scipy is accurate to ~1e-14 on (0, 2]
    return special.gammaincc(s, x) * special.gamma(s)


def _near_zero_order(s: float, x: float) -> float:
    """Gamma(s, x) for s in (-_NEAR_INTEGER, 0] by quadratic extrapolation."""
    h = _EXTRAP_STEP
    g0 = special.exp1(x)
    g1 = _positive_order(h, x)
    g2 = _positive_order(2 * h, x)
    return (g0 * (s - h) * (s - 2 * h) / (2 * h * h)
            - g1 * s * (s - 2 * h) / (h * h)
            + g2 * s * (s - h) / (2 * h * h))


def _scaled_continued_fraction(s: float, x: float) -> float:
    """G(s, x) from Legendre's continued fraction (modified Lentz)."""
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _CF_MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise LossOfAccuracyError(f"continued fraction did not converge for s={s}, x={x}")


def _scaled_recurrence(s: float, x: float, max_depth: int) -> float:
    """G(s, x) for s <= 0, x < 1 by downward recurrence from a seed in [-1e-6, 1)."""
    frac = s - math.floor(s)
    if frac == 0.0:
        s0 = 0.0
        g = math.exp(x) * special.exp1(x)
    elif frac > 1.0 - _NEAR_INTEGER:
        s0 = frac - 1.0
        g = math.exp(x - s0 * math.log(x)) * _near_zero_order(s0, x)
    else:
        s0 = frac
        g = math.exp(x - s0 * math.log(x)) * _positive_order(s0, x)

    steps = int(round(s0 - s))
    if steps > max_depth:
        raise LossOfAccuracyError(
            f"order {s} needs {steps} recurrence steps (limit {max_depth})")
    for _ in range(steps):
        s0 -= 1.0
        g = (x * g - 1.0) / s0
    return g


def log_gamma_upper_scaled(s: float, x: float, max_depth: int = DEFAULT_MAX_DEPTH) -> float:
    """Return ``log(exp(x) * x**(-s) * Gamma(s, x))`` for ``x > 0``."""
    _check_domain(s, x)
    if x == 0:
        raise DomainError("scaled form is undefined at x = 0")
    if s > 0:
        return x - s * math.log(x) + math.log(_positive_order(s, x))
    if x >= _CF_MIN_X:
        return math.log(_scaled_continued_fraction(s, x))
    return math.log(_scaled_recurrence(s, x, max_depth))


def log_gamma_upper(s: float, x: float, max_depth: int = DEFAULT_MAX_DEPTH) -> float:
    """Natural log of the upper incomplete gamma function.

    ``Gamma(s, x)`` is strictly positive for every real ``s`` when ``x > 0``,
    so no sign is needed.  Use this instead of :func:`gamma_upper` whenever
    the order is far below zero.
    """
    _check_domain(s, x)
    if x == 0:
        return special.gammaln(s)
    return log_gamma_upper_scaled(s, x, max_depth) + s * math.log(x) - x


def gamma_upper(s: float, x: float, max_depth: int = DEFAULT_MAX_DEPTH) -> float:
    """Upper incomplete gamma ``Gamma(s, x) = int_x^inf t**(s-1) exp(-t) dt``.

    Args:
        s: Real order; negative orders are handled by downward recurrence.
        x: Lower limit, ``x >= 0`` (``x == 0`` only for ``s > 0``).
        max_depth: Largest number of recurrence steps before giving up.

    Returns:
        The function value, or ``inf`` when it exceeds the float range.

    Raises:
        DomainError: ``x < 0`` or ``x == 0`` with ``s <= 0``.
        LossOfAccuracyError: the recurrence would exceed ``max_depth``.
    """
    _check_domain(s, x)
    if x == 0:
        return float(special.gamma(s))
    if s > 0:
        return float(_positive_order(s, x))
    try:
        return math.exp(log_gamma_upper(s, x, max_depth))
    except OverflowError:
        return math.inf


def exp_integral_e1(x: float) -> float:
    """Exponential integral ``E1(x) = Gamma(0, x)`` for ``x > 0``."""
    if not x > 0:
        raise DomainError(f"E1 requires x > 0, got {x!r}")
    return float(special.exp1(x))


def gamma_upper_oracle(s: float, x: float, q: Quadrature = Quadrature()) -> float:
    """Brute-force ``Gamma(s, x)`` by adaptive quadrature of the defining integral.

    Only meant as an independent check of :func:`gamma_upper`.
    """
    _check_domain(s, x)

    def integrand(t):
        return math.exp((s - 1.0) * math.log(t) - t)

    pieces = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if x == 0:
            # t**(s-1) singularity at 0 handled by the algebraic weight
            pieces.append(integrate.quad(
                lambda t: math.exp(-t), 0.0, 1.0, weight="alg", wvar=(s - 1.0, 0.0),
                epsrel=q.rel_tol, epsabs=0.0, limit=q.max_subdivisions, full_output=1))
            lower = 1.0
        else:
            lower = x
        # split the tail so the peak near the lower limit is resolved
        split = lower + max(1.0, abs(s))
        pieces.append(integrate.quad(integrand, lower, split, epsrel=q.rel_tol, epsabs=0.0,
                                     limit=q.max_subdivisions, full_output=1))
        pieces.append(integrate.quad(integrand, split, math.inf, epsrel=q.rel_tol, epsabs=0.0,
                                     limit=q.max_subdivisions, full_output=1))

    total = 0.0
    for res in pieces:
        if len(res) > 3:
            raise QuadratureError(f"quadrature failed for s={s}, x={x}: {res[3]}")
        total += res[0]
    return total
