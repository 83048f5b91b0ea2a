"""Fully closed-form comparison strategies.

Three benchmarks admit value functions of the form V(W) = a * u(W) with a
constant risky share:

* unconstrained ("merton"): share mu/(R sigma^2), a = 1/(lambda+delta-rho+c(1-R))
* all-safety:               share 0,              a = 1/(lambda+delta+c(1-R))
* leverage cap X <= b W:    share b,              a = 1/(lambda+delta+(1-R)(sigma^2 b^2 R/2 - mu b + c))

All are exposed in the unit-utility normalization (multiplier of u(W));
apply model.j_from_v at the API edge for preference-scaled values.
"""

from dataclasses import dataclass

from .errors import ValidationError
from .model import ModelParams, check_assumption_a, crra_utility, derive_constants

KIND_MERTON = "merton"
KIND_ALL_SAFETY = "all_safety"
KIND_LEVERAGE = "leverage"


@dataclass(frozen=True)
class ClosedFormSolution:
    kind: str              # "merton" | "all_safety" | "leverage"
    coefficient_a: float   # V(W) = coefficient_a * u(W)
    policy_slope: float    # X(W) = policy_slope * W
    b: float | None = None  # leverage cap, only for kind == "leverage"


def merton_value(p: ModelParams) -> ClosedFormSolution:
    """Value and policy without the risk-capacity constraint."""
    ok, slack = check_assumption_a(p)
    if not ok:
        raise ValidationError(
            f"finite-value condition fails: lambda+delta - rho + c(1-R) = {slack} <= 0"
        )
    d = derive_constants(p)
    return ClosedFormSolution(KIND_MERTON, 1.0 / slack, d.merton_fraction)


def all_safety_coefficient(p: ModelParams) -> float:
    """Coefficient of u(W) for the keep-everything-in-the-bond strategy."""
    return 1.0 / (p.discount + p.c * (1.0 - p.R))


def all_safety_value(W, p: ModelParams):
    """Value of X == 0: wealth decays deterministically at the withdrawal rate.

    Closed form of int_0^inf exp(-(lambda+delta) t) u(W exp(-c t)) dt.
    """
    return all_safety_coefficient(p) * crra_utility(W, p.R)


def leverage_value(p: ModelParams, b: float) -> ClosedFormSolution:
    """Value and policy under the percentage cap X <= b W.

    The cap binds everywhere, so the optimal share is exactly b.  Requires
    0 < b < mu/(R sigma^2); at the unconstrained share the cap is slack and
    the problem is routed to merton_value.
    """
    d = derive_constants(p)
    mf = d.merton_fraction
    if mf > 0.0 and abs(b - mf) <= 1e-12 * mf:
        return merton_value(p)
    if not 0.0 < b < mf:
        raise ValidationError(f"leverage cap must satisfy 0 < b < {mf} (unconstrained share), got {b}")
    denom = p.discount + (1.0 - p.R) * (0.5 * p.sigma**2 * b**2 * p.R - p.mu * b + p.c)
    if denom <= 0.0:
        raise ValidationError(f"leverage value diverges: denominator {denom} <= 0")
    return ClosedFormSolution(KIND_LEVERAGE, 1.0 / denom, b, b=b)


def closed_form_value(sol: ClosedFormSolution, W, p: ModelParams):
    """Evaluate V(W) = a u(W) for a closed-form solution."""
    return sol.coefficient_a * crra_utility(W, p.R)


def closed_form_derivs(sol: ClosedFormSolution, W: float, p: ModelParams) -> tuple[float, float, float]:
    """(V, V', V'') at a single wealth level for a closed-form solution."""
    if W <= 0.0:
        raise ValidationError("derivatives need W > 0")
    a, R = sol.coefficient_a, p.R
    return (
        a * W ** (1.0 - R) / (1.0 - R),
        a * W ** (-R),
        -a * R * W ** (-R - 1.0),
    )
