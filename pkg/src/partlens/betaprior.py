"""Beta prior numerics: regularized incomplete beta CDF and its inverse.

The CDF uses the continued-fraction expansion with the standard symmetry
switch at x = (a+1)/(a+b+2); the quantile inverts it by bisection over the
unit interval refined with Newton steps.

Strongly U-shaped priors (alpha or beta around 1e-3) put quantiles closer to
0 or 1 than float64 can represent: the distance to the endpoint can be
e^-4000 or less.  When bisection hits that wall the quantile is recomputed
in arbitrary precision and returned as an ``mpmath.mpf``.  Those values
behave like numbers (compare, ``float()`` them — which saturates to exactly
0.0 or 1.0); ``beta_cdf`` accepts them and evaluates at matching precision,
so cdf(quantile(z)) recovers z even in the extreme tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
from mpmath import mp, mpf

_CF_MAX_ITER = 500
_QUANTILE_TOL = 1e-8
_BISECT_MAX_ITER = 1200
_NEWTON_MAX_ITER = 60
_MAX_PRECISION_BITS = 1 << 17


@dataclass(frozen=True)
class BetaPrior:
    """Parameters of a Beta(alpha, beta) prior over the unit interval."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")


def _betacf(a, b, x, eps, tiny):
    """Continued fraction for the incomplete beta (modified Lentz scheme).

    Generic over float and mpf operands; converges quickly for
    x < (a+1)/(a+b+2), which callers guarantee via the symmetry switch.
    """
    qab = a + b
    qap = a + 1
    qam = a - 1
    c = 1 + 0 * x
    d = 1 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < eps:
            return h
    raise ArithmeticError(
        f"incomplete beta continued fraction did not converge for "
        f"a={a}, b={b}, x={x}")


def _cdf_float(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1) / (a + b + 2):
        return front * _betacf(a, b, x, 1e-16, 1e-300) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x, 1e-16, 1e-300) / b


# Working precision for mpf arithmetic.  Extended precision is only needed to
# carry x's exponent and to split off 1-x exactly; after the symmetry switch
# the continued-fraction argument is far from 1, so 128 bits of mantissa give
# ~38 accurate digits throughout.
_WORK_BITS = 128


@lru_cache(maxsize=512)
def _ln_beta_mp(a: float, b: float):
    with mp.workprec(_WORK_BITS):
        return (mpmath.loggamma(mpf(a)) + mpmath.loggamma(mpf(b))
                - mpmath.loggamma(mpf(a) + mpf(b)))


def _incbeta_lower_mp(a: float, b: float, x):
    """I_x(a, b) for x below the symmetry switch, at ambient precision.

    The switch guarantees 1-x is macroscopic, so log1p(-x) is safe.
    """
    ln_front = a * mpmath.log(x) + b * mpmath.log1p(-x) - _ln_beta_mp(a, b)
    eps = mpf(2) ** (8 - mp.prec)
    tiny = mpf(2) ** (-8 * mp.prec)
    return mpmath.exp(ln_front) * _betacf(mpf(a), mpf(b), x, eps, tiny) / a


def _mpf_precision_bits(x) -> int:
    """Bits needed to form 1-x from mpf x without dropping its offset."""
    _, _, exponent, bit_count = x._mpf_
    return max(64, bit_count + abs(exponent) + 8)


def _cdf_mp(a: float, b: float, x) -> float:
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    if x < (a + 1) / (a + b + 2):
        with mp.workprec(_WORK_BITS):
            return float(_incbeta_lower_mp(a, b, +x))
    with mp.workprec(_mpf_precision_bits(x)):
        w = 1 - x  # exact at this precision
    with mp.workprec(_WORK_BITS):
        return float(1 - _incbeta_lower_mp(b, a, +w))


def beta_cdf(prior: BetaPrior, x) -> float:
    """CDF of the prior at x in [0, 1].

    Accepts floats and the mpf values produced by :func:`beta_quantile`;
    the result is always an ordinary float (it is never extreme).
    """
    a, b = prior.alpha, prior.beta
    if isinstance(x, mpf):
        if mpmath.isnan(x) or not 0 <= x <= 1:
            raise ValueError(f"x must lie in [0, 1], got {x}")
        return _cdf_mp(a, b, x)
    x = float(x)
    if math.isnan(x) or not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    return _cdf_float(a, b, x)


def _pdf_float(a: float, b: float, x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    ln_b = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    ln_pdf = (a - 1) * math.log(x) + (b - 1) * math.log1p(-x) - ln_b
    # The density diverges at the endpoints for a < 1 or b < 1; an infinite
    # pdf just tells the Newton polish to stop.
    return math.inf if ln_pdf > 709.0 else math.exp(ln_pdf)


def _quantile_float(a: float, b: float, z: float) -> tuple[float, float]:
    """Bisection to adjacent doubles plus Newton polish; returns the best x
    and its residual |cdf(x) - z|.

    Near zero the bracket spans a thousand binary orders of magnitude, so
    once it is one-sided the midpoint switches from arithmetic to exponent
    descent / geometric, which reaches subnormals in a few dozen steps.
    """
    lo, hi = 0.0, 1.0
    for _ in range(_BISECT_MAX_ITER):
        if lo == 0.0 and hi <= 2.0 ** -54:
            mid = hi * 2.0 ** -64
            if mid == 0.0:
                mid = 0.5 * hi
        elif 0.0 < lo and hi <= 2.0 ** -54:
            mid = math.exp(0.5 * (math.log(lo) + math.log(hi)))
            if not lo < mid < hi:
                mid = 0.5 * (lo + hi)
        else:
            mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _cdf_float(a, b, mid) < z:
            lo = mid
        else:
            hi = mid
    err_lo = abs(_cdf_float(a, b, lo) - z)
    err_hi = abs(_cdf_float(a, b, hi) - z)
    x, err = (lo, err_lo) if err_lo <= err_hi else (hi, err_hi)
    for _ in range(8):
        if not 0.0 < x < 1.0 or err == 0.0:
            break
        pdf = _pdf_float(a, b, x)
        if not math.isfinite(pdf) or pdf <= 0.0:
            break
        candidate = x - (_cdf_float(a, b, x) - z) / pdf
        if not 0.0 < candidate < 1.0:
            break
        err_candidate = abs(_cdf_float(a, b, candidate) - z)
        if err_candidate < err:
            x, err = candidate, err_candidate
        else:
            break
    return x, err


def _quantile_mp_lower(a: float, b: float, z: float):
    """Lower-tail quantile via Newton on u = ln x, seeded by the asymptotic
    inverse I_x ~ x^a / (a B(a, b))."""
    ln_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    ln_x0 = (math.log(z) + math.log(a) + ln_beta) / a
    if abs(ln_x0) / math.log(2) > _MAX_PRECISION_BITS:
        raise ArithmeticError(
            f"beta_quantile exponent out of range for alpha={a}, beta={b}, "
            f"z={z} (ln x ~ {ln_x0:.3g})")
    with mp.workprec(_WORK_BITS):
        ln_b = _ln_beta_mp(a, b)
        ln_z = mpmath.log(mpf(z))
        u = mpf(ln_x0)
        residual = None
        for _ in range(_NEWTON_MAX_ITER):
            x = mpmath.exp(u)
            cdf = _incbeta_lower_mp(a, b, x)
            residual = mpmath.log(cdf) - ln_z
            if abs(residual) < mpf("1e-25"):
                return x
            pdf = mpmath.exp((a - 1) * u + (b - 1) * mpmath.log1p(-x) - ln_b)
            u -= residual * cdf / (pdf * x)
    raise ArithmeticError(
        f"beta_quantile Newton iteration did not converge for alpha={a}, "
        f"beta={b}, z={z}; last residual {float(residual)}")


def beta_quantile(prior: BetaPrior, z):
    """Smallest x with CDF(x) = z, monotone in z.

    Returns a float when float64 can express the result to tolerance,
    otherwise an mpf carrying the required precision.
    """
    z = float(z)
    if math.isnan(z) or not 0.0 < z < 1.0:
        raise ValueError(f"z must lie strictly inside (0, 1), got {z}")
    a, b = prior.alpha, prior.beta
    x, err = _quantile_float(a, b, z)
    if err <= _QUANTILE_TOL:
        return x
    if x < 0.5:
        return _quantile_mp_lower(a, b, z)
    mirrored = _quantile_mp_lower(b, a, 1.0 - z)
    bits = int(abs(mpmath.mag(mirrored))) + _WORK_BITS
    if bits > _MAX_PRECISION_BITS:
        raise ArithmeticError(
            f"beta_quantile needs {bits} bits (> {_MAX_PRECISION_BITS}) for "
            f"alpha={a}, beta={b}, z={z}")
    with mp.workprec(bits):
        return 1 - mirrored
