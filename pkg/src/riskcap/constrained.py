"""Closed-form value function on the binding region (zero withdrawals).

Where the capacity cap binds, the value function solves the linear ODE

    0.5 sigma^2 L^2 V'' + mu L V' - (lambda+delta) V + u(W) = 0

whose homogeneous solutions are exp(beta1 W), exp(beta2 W) with beta1 > 0 >
beta2, and whose particular solution V0 comes out of variation of parameters
as a pair of incomplete-gamma integrals.  Boundedness of V/W^(1-R) pins the
exp(beta1 W) coefficient at a fixed constant C1; matching the risky demand
-(mu/sigma^2) V'/V'' to the cap at a candidate threshold W* then determines
the remaining coefficient C* and the marginal-utility level g* there.

Everything here is evaluated through exponentially scaled gamma kernels so
that no term grows like exp(beta1 W) or exp(|beta2| W) on its own.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import CandidateRejectedError, ValidationError
from .model import DerivedConstants, ModelParams, check_assumption_a, derive_constants
from .specfun import exp_scaled_lower_gamma, exp_scaled_upper_gamma, gamma_fn


def _require_zero_withdrawals(p: ModelParams, what: str) -> None:
    if p.c != 0.0:
        raise ValidationError(f"{what} is implemented for c = 0 only (got c={p.c})")


def _prefactor(p: ModelParams, d: DerivedConstants) -> float:
    """Common multiplier 2 / ((beta1-beta2)(1-R) sigma^2 L^2)."""
    return 2.0 / ((d.beta1 - d.beta2) * (1.0 - p.R) * p.sigma**2 * p.L**2)


@dataclass(frozen=True)
class ConstrainedCoefficients:
    c1: float            # coefficient of exp(beta1 W), fixed by the growth bound
    c_star: float        # coefficient of exp(beta2 W), fixed by demand = L at W*
    g_star: float        # marginal-utility inverse at W*: V'(W*+) = g*^-R
    w_star_input: float  # candidate threshold these coefficients were built from


def c1_coefficient(p: ModelParams, d: DerivedConstants | None = None) -> float:
    """C1 = A beta1^(R-2) Gamma(2-R), A the common prefactor."""
    _require_zero_withdrawals(p, "c1_coefficient")
    d = d or derive_constants(p)
    return _prefactor(p, d) * d.beta1 ** (p.R - 2.0) * gamma_fn(2.0 - p.R)


def v0(W: float, p: ModelParams, d: DerivedConstants | None = None) -> tuple[float, float, float]:
    """Particular solution V0 and its first two derivatives at wealth W.

    V0(W) = A * { e^(b2 W) I(b2, W) - e^(b1 W) I(b1, W) },
    I(b, W) = int_0^W x^(1-R) e^(-b x) dx = W^(2-R) * [e^x gamma(s,x)/x^s]_{x=bW},

    so each exponential-times-integral product is W^(2-R) times a bounded
    scaled-gamma kernel, valid for either sign of b.  Differentiating uses
    d/dW [e^(bW) I(b,W)] = b e^(bW) I(b,W) + W^(1-R).
    """
    _require_zero_withdrawals(p, "v0")
    if W < 0.0:
        raise ValidationError("v0 requires W >= 0")
    if W == 0.0:
        return 0.0, 0.0, 0.0
    d = d or derive_constants(p)
    s = 2.0 - p.R
    A = _prefactor(p, d)
    ws = W**s
    i1e = ws * exp_scaled_lower_gamma(s, d.beta1 * W)
    i2e = ws * exp_scaled_lower_gamma(s, d.beta2 * W)
    w1mr = W ** (1.0 - p.R)
    value = A * (i2e - i1e)
    first = A * (d.beta2 * i2e - d.beta1 * i1e)
    second = A * (d.beta2**2 * i2e - d.beta1**2 * i1e + (d.beta2 - d.beta1) * w1mr)
    return value, first, second


def coefficients_for(
    W_star: float, p: ModelParams, d: DerivedConstants | None = None
) -> ConstrainedCoefficients:
    """Coefficients (C1, C*, g*) implied by a candidate threshold W*.

    C* solves mu V'(W*) + sigma^2 L V''(W*) = 0, i.e. the unconstrained
    risky demand equals exactly L at W*; g* is then V'(W*)^(-1/R).  A
    candidate whose implied marginal value V'(W*) is not strictly positive
    is inadmissible and rejected.
    """
    _require_zero_withdrawals(p, "coefficients_for")
    if not W_star > 0.0:
        raise ValidationError("coefficients_for requires W_star > 0")
    ok, slack = check_assumption_a(p)
    if not ok:
        raise ValidationError(f"finite-value condition fails (slack={slack})")
    d = d or derive_constants(p)
    s = 2.0 - p.R
    A = _prefactor(p, d)
    c1 = c1_coefficient(p, d)

    _, v0p, v0pp = v0(W_star, p, d)
    num = (
        -c1 * d.beta1 * math.exp(d.beta1 * W_star) * (p.mu + p.L * p.sigma**2 * d.beta1)
        - p.mu * v0p
        - p.sigma**2 * p.L * v0pp
    )
    den = math.exp(d.beta2 * W_star) * (p.sigma**2 * p.L * d.beta2**2 + p.mu * d.beta2)
    c_star = num / den

    # V'(W*+) assembled through the scaled kernels (stable for any W*)
    marginal = (
        A * d.beta1 ** (p.R - 1.0) * exp_scaled_upper_gamma(s, d.beta1 * W_star)
        + c_star * d.beta2 * math.exp(d.beta2 * W_star)
        + A * d.beta2 * W_star**s * exp_scaled_lower_gamma(s, d.beta2 * W_star)
    )
    if not marginal > 0.0 or not math.isfinite(marginal):
        raise CandidateRejectedError(
            "bad_coefficients", f"V'(W*+)={marginal} at W*={W_star} is not positive"
        )
    g_star = marginal ** (-1.0 / p.R)
    return ConstrainedCoefficients(c1=c1, c_star=c_star, g_star=g_star, w_star_input=W_star)


def v_constrained(
    W: float,
    coef: ConstrainedCoefficients,
    p: ModelParams,
    d: DerivedConstants | None = None,
) -> tuple[float, float, float]:
    """Value function and derivatives on [W*, infinity).

    V = C1 e^(b1 W) + C* e^(b2 W) + V0(W), with the C1 term and the b1 part
    of V0 combined into A b1^(R-2) e^(b1 W) Gamma(2-R, b1 W) so the two
    exponentially growing pieces cancel analytically instead of numerically.
    """
    _require_zero_withdrawals(p, "v_constrained")
    if W < coef.w_star_input * (1.0 - 1e-12):
        raise ValidationError(f"v_constrained needs W >= W* ({coef.w_star_input}), got {W}")
    d = d or derive_constants(p)
    s = 2.0 - p.R
    A = _prefactor(p, d)
    e_up = exp_scaled_upper_gamma(s, d.beta1 * W)
    e2 = math.exp(d.beta2 * W)
    q2 = exp_scaled_lower_gamma(s, d.beta2 * W)
    ws = W**s
    w1mr = W ** (1.0 - p.R)
    b1, b2, cs = d.beta1, d.beta2, coef.c_star
    value = A * b1 ** (p.R - 2.0) * e_up + cs * e2 + A * ws * q2
    first = A * b1 ** (p.R - 1.0) * e_up + cs * b2 * e2 + A * b2 * ws * q2
    second = A * b1**p.R * e_up + cs * b2**2 * e2 + A * (b2**2 * ws * q2 + (b2 - b1) * w1mr)
    return value, first, second


def _golden_max(f, lo: float, hi: float, iters: int = 120):
    """Golden-section maximization on [lo, hi]; returns (x, f(x))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        if b - a < 1e-12 * (abs(a) + abs(b) + 1.0):
            break
    return (x1, f1) if f1 >= f2 else (x2, f2)


def derivative_envelopes(p: ModelParams) -> tuple[float, float]:
    """Envelope constants (lo, hi) with lo * W^-R <= V'(W) <= hi * W^-R.

    Both come from concavity of V squeezed between the all-safety and
    unconstrained closed forms: a forward difference with step k*W gives the
    lower coefficient, a backward difference with step beta*W the upper one.
    Each is optimized by coarse grid plus golden-section refinement, with
    the positive-part clip making the sup/inf well defined.
    """
    ok, slack = check_assumption_a(p)
    if not ok:
        raise ValidationError(f"finite-value condition fails (slack={slack})")
    one_m_r = 1.0 - p.R
    a0 = p.discount + p.c * one_m_r          # all-safety denominator
    b0 = slack                               # unconstrained denominator

    def f_lo(logk: float) -> float:
        k = math.exp(logk)
        val = (k + 1.0) ** one_m_r / a0 - 1.0 / b0
        return max(val, 0.0) / (k * one_m_r)

    def f_hi_neg(beta: float) -> float:
        val = 1.0 / b0 - (1.0 - beta) ** one_m_r / a0
        return -(max(val, 0.0) / (beta * one_m_r))

    grid = np.linspace(math.log(1e-6), math.log(1e3), 600)
    best = int(np.argmax([f_lo(x) for x in grid]))
    lo_bracket = (grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)])
    _, lo = _golden_max(f_lo, *lo_bracket)

    grid_b = np.linspace(1e-9, 1.0 - 1e-12, 600)
    best_b = int(np.argmax([f_hi_neg(x) for x in grid_b]))
    hi_bracket = (grid_b[max(best_b - 1, 0)], grid_b[min(best_b + 1, len(grid_b) - 1)])
    _, neg_hi = _golden_max(f_hi_neg, *hi_bracket)
    return lo, -neg_hi
