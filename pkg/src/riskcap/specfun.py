"""Incomplete-gamma and confluent-hypergeometric kernels.

The constrained-region closed form needs integrals of the type
``int_0^W x^(1-R) exp(-b x) dx`` for one positive and one negative rate b.
Both reduce to the lower incomplete gamma function

    gamma(s, x) = int_0^x t^(s-1) exp(-t) dt

evaluated at x = b*W, so this module provides gamma(s, x) together with the
exponentially scaled variants that stay bounded when b < 0 pushes x far into
the negative half-line.  Everything rests on two everywhere-convergent series
for Kummer's M (DLMF 8.5.1 and Kummer's transformation):

    gamma(s, x) = s^-1 x^s exp(-x) M(1, s+1, x)
    gamma(s, x) = s^-1 x^s M(s, s+1, -x)

plus a continued fraction for the upper tail Gamma(s, x) at large positive x.
"""

import math
from dataclasses import dataclass

from .errors import NonConvergenceError, ValidationError

# Series iteration cap.  Exceeding it raises; it is never silently truncated.
MAX_TERMS = 10_000
# Relative term size at which a series is declared converged.
SERIES_EPS = 1.0e-16
# Above this x the lower gamma goes through the upper-tail complement rather
# than carrying the series out to ~x terms.
UPPER_TAIL_SWITCH = 30.0
# The upper gamma itself switches to its continued fraction at x >= s + this
# margin; below it the complement Gamma(s) - gamma(s,x) loses at most ~2
# digits, above it the CF converges quickly.
CF_MARGIN = 4.0
# exp() overflows shortly past 709; unscaled series are guarded here.
EXP_ARG_CAP = 700.0


@dataclass(frozen=True)
class GammaEval:
    """One incomplete-gamma evaluation with the method that produced it."""

    s: float
    x: float
    value: float
    method_used: str  # "series" | "continued_fraction" | "quadrature"


def gamma_fn(s: float) -> float:
    """Complete gamma function Gamma(s) for s > 0."""
    if not s > 0.0:
        raise ValidationError(f"gamma_fn requires s > 0, got s={s}")
    return math.gamma(s)


def _m1_series(s: float, z: float) -> float:
    """M(1, s+1, z) = sum_k z^k / ((s+1)...(s+k)) for z >= 0.

    All terms are positive, so no cancellation; the raw sum grows like
    exp(z) and is guarded against overflow.
    """
    if z > EXP_ARG_CAP:
        raise NonConvergenceError(
            f"M(1,{s + 1},{z}): unscaled series overflows for z > {EXP_ARG_CAP}"
        )
    total = 1.0
    term = 1.0
    for k in range(1, MAX_TERMS + 1):
        term *= z / (s + k)
        total += term
        if term <= SERIES_EPS * total:
            return total
    raise NonConvergenceError(f"M(1,{s + 1},{z}) series did not converge in {MAX_TERMS} terms")


def _m_ratio_scaled(s: float, z: float) -> float:
    """exp(-z) * M(s, s+1, z) for z >= 0, summed as a Poisson mixture.

    exp(-z) M(s,s+1,z) = sum_k [s/(s+k)] * pois(k; z) with every term in
    [0, 1], so the value is computable for any z the term cap allows.  The
    sum is anchored at the Poisson mode and expanded both ways, which keeps
    it out of the subnormal range even for z of several hundred.
    """
    if z < 0.0:
        raise ValueError("internal: _m_ratio_scaled needs z >= 0")
    if z == 0.0:
        return 1.0
    k0 = int(z)
    logp0 = k0 * math.log(z) - z - math.lgamma(k0 + 1.0)
    p0 = math.exp(logp0)
    total = p0 * s / (s + k0)
    # upward from the mode
    p = p0
    for k in range(k0 + 1, k0 + MAX_TERMS + 1):
        p *= z / k
        term = p * s / (s + k)
        total += term
        if p <= SERIES_EPS * total:
            break
    else:
        raise NonConvergenceError(f"scaled M(s,s+1,z) did not converge upward at z={z}")
    # downward from the mode
    p = p0
    for k in range(k0, 0, -1):
        p *= k / z
        total += p * s / (s + k - 1)
        if p <= SERIES_EPS * total:
            break
    return total


def kummer_m_1(s: float, z: float) -> float:
    """Kummer's confluent hypergeometric M(1, s+1, z).

    For z >= 0 the defining series is summed directly (all terms positive).
    For z < 0 the direct series alternates and cancels badly, so the value
    is routed through Kummer's transformation M(1,s+1,z) = e^z M(s,s+1,-z),
    whose right-hand side is a positive-term sum.
    """
    sp1 = s + 1.0
    if sp1 <= 0.0 and abs(sp1 - round(sp1)) < 1e-12:
        raise ValidationError(f"M(1, s+1, z) undefined: s+1={sp1} is a non-positive integer")
    if z >= 0.0:
        return _m1_series(s, z)
    # e^z * M(s, s+1, -z)  ==  [e^-|z| M(s, s+1, |z|)]  for z < 0
    return _m_ratio_scaled(s, -z)


def exp_scaled_lower_gamma(s: float, x: float) -> float:
    """exp(x) * gamma(s, x) / x^s  ==  M(1, s+1, x) / s.

    Entire in x and free of exponential factors for x <= 0, which is what
    the closed-form value function needs along the negative-rate branch.
    """
    if not s > 0.0:
        raise ValidationError(f"exp_scaled_lower_gamma requires s > 0, got s={s}")
    return kummer_m_1(s, x) / s


def lower_gamma_scaled(s: float, x: float) -> float:
    """gamma(s, x) / x^s, the entire scaled lower gamma (value 1/s at x=0)."""
    if not s > 0.0:
        raise ValidationError(f"lower_gamma_scaled requires s > 0, got s={s}")
    if x >= 0.0:
        if x > UPPER_TAIL_SWITCH:
            # gamma = Gamma(s) - upper tail; the tail is negligible-to-small here
            return (gamma_fn(s) - upper_incomplete_gamma(s, x)) * math.exp(-s * math.log(x))
        return math.exp(-x) * _m1_series(s, x) / s
    z = -x
    if z > EXP_ARG_CAP:
        raise NonConvergenceError(
            f"gamma(s,x)/x^s overflows at x={x}; use exp_scaled_lower_gamma"
        )
    return math.exp(z) * _m_ratio_scaled(s, z) / s


def _upper_tail_cf(s: float, x: float) -> float:
    """Continued fraction H(s,x) with Gamma(s,x) = exp(-x) x^s H(s,x).

    Modified Lentz evaluation; reliable for x >~ s+1 and used here only
    beyond UPPER_TAIL_SWITCH.
    """
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, MAX_TERMS + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < SERIES_EPS:
            return h
    raise NonConvergenceError(f"upper-tail continued fraction stalled at s={s}, x={x}")


def upper_incomplete_gamma(s: float, x: float) -> float:
    """Upper incomplete gamma Gamma(s, x) for s > 0, x >= 0."""
    if not s > 0.0:
        raise ValidationError(f"upper_incomplete_gamma requires s > 0, got s={s}")
    if x < 0.0:
        raise ValidationError("upper_incomplete_gamma requires x >= 0")
    if x == 0.0:
        return gamma_fn(s)
    if x >= s + CF_MARGIN:
        logpre = s * math.log(x) - x
        return math.exp(logpre) * _upper_tail_cf(s, x) if logpre > -745.0 else 0.0
    return gamma_fn(s) - math.exp(s * math.log(x) - x) * _m1_series(s, x) / s


def exp_scaled_upper_gamma(s: float, x: float) -> float:
    """exp(x) * Gamma(s, x) for x >= 0; grows only polynomially in x."""
    if x < 0.0:
        raise ValidationError("exp_scaled_upper_gamma requires x >= 0")
    if x >= s + CF_MARGIN:
        return math.exp(s * math.log(x)) * _upper_tail_cf(s, x)
    return math.exp(x) * upper_incomplete_gamma(s, x)


def _lower_gamma_quadrature(s: float, x: float, n_panels: int = 24, order: int = 64) -> float:
    """gamma(s, x) by quadrature: Gauss-Jacobi near 0, Gauss-Legendre beyond.

    The t^(s-1) factor is absorbed into the Gauss-Jacobi weight on [0,
    min(1, x)], which handles the endpoint exactly for any s > 0; the
    remainder of the range is smooth and gets composite Gauss-Legendre.
    Serves as the in-library cross-check path, not the fast path.
    """
    import numpy as np
    from scipy.special import roots_jacobi

    if x == 0.0:
        return 0.0
    a = min(1.0, x)
    zj, wj = roots_jacobi(order, 0.0, s - 1.0)
    t = 0.5 * a * (zj + 1.0)
    total = (0.5 * a) ** s * float(np.sum(wj * np.exp(-t)))
    if x > a:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(a, x, n_panels + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            tt = mid + half * nodes
            total += half * float(np.sum(weights * tt ** (s - 1.0) * np.exp(-tt)))
    return total


def lower_incomplete_gamma(s: float, x: float, method: str = "auto") -> float:
    """Lower incomplete gamma gamma(s, x) for s > 0.

    x may be negative: the function is continued through the everywhere-
    convergent series, with the real branch fixed by x^s -> sign(x)|x|^s.
    That convention makes the pairing b^(R-2) * gamma(2-R, b*W) used by the
    constrained-region solution independent of the branch choice, and for
    integer s with odd s it coincides with the honest integral.
    """
    return lower_incomplete_gamma_eval(s, x, method=method).value


def lower_incomplete_gamma_eval(s: float, x: float, method: str = "auto") -> GammaEval:
    """As lower_incomplete_gamma, returning the GammaEval record."""
    if not s > 0.0:
        raise ValidationError(f"lower_incomplete_gamma requires s > 0, got s={s}")
    if method not in ("auto", "series", "continued_fraction", "quadrature"):
        raise ValidationError(f"unknown method {method!r}")

    if x == 0.0:
        return GammaEval(s, x, 0.0, "series")

    if method == "quadrature":
        if x < 0.0:
            raise ValidationError("quadrature path is defined for x >= 0 only")
        return GammaEval(s, x, _lower_gamma_quadrature(s, x), "quadrature")

    if x < 0.0:
        if abs(x) + s * math.log(abs(x)) > EXP_ARG_CAP:
            raise NonConvergenceError(
                f"gamma({s},{x}) overflows a double; use exp_scaled_lower_gamma"
            )
        value = -math.exp(s * math.log(-x)) * lower_gamma_scaled(s, x)
        return GammaEval(s, x, value, "series")

    if method == "continued_fraction" or (method == "auto" and x > UPPER_TAIL_SWITCH):
        logpre = s * math.log(x) - x
        tail = math.exp(logpre) * _upper_tail_cf(s, x) if logpre > -745.0 else 0.0
        return GammaEval(s, x, gamma_fn(s) - tail, "continued_fraction")
    value = math.exp(s * math.log(x) - x) * _m1_series(s, x) / s
    return GammaEval(s, x, value, "series")
