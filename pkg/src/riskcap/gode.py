"""Auxiliary ODE for the unconstrained region and its tabulated solution.

With g defined through V'(W) = g^-R and W = G(g), the nonlinear HJB ODE of
the unconstrained region becomes a second-order ODE for G.  For zero
withdrawals:

    G''(g) = (R/kappa) g^-1 G'(g) [lambda + delta - rho - g^R G(g)^-R]

All terminal data live at the pasting point g* (G = W*, G' = L R sigma^2 /
(mu g*)), so the equation is integrated backward from g* toward the
singular origin.  The origin condition G(0) = 0 cannot be imposed directly;
instead the integration stops at eps = g* * eps_start_factor and the gap to
the linear small-wealth asymptote G ~ a^(1/R) g (the unconstrained problem
is locally unconstrained-optimal near W = 0) is returned as a shooting
residual.  A quadrature state Psi(g) = int_g^g* s^-R G'(s) ds rides along so
the value function is error-controlled by the same integrator.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.interpolate import PchipInterpolator

from .constrained import ConstrainedCoefficients, coefficients_for
from .errors import CandidateRejectedError, ValidationError
from .model import DerivedConstants, ModelParams, derive_constants

_OK, _DOVE, _STALLED, _UNDERFLOW, _MAXSTEPS = 0, 1, 2, 3, 4

_REJECT_REASON = {_DOVE: "dove", _STALLED: "stalled", _UNDERFLOW: "step_underflow", _MAXSTEPS: "step_underflow"}


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10            # relative local error tolerance
    atol: float = 1e-12            # absolute local error tolerance
    eps_start_factor: float = 1e-6  # left cutoff as a fraction of g*
    n_grid: int = 4000             # recorded log-spaced grid points
    max_steps: int = 5_000_000


def g_ode_rhs(
    g: float,
    G: float,
    Gp: float,
    p: ModelParams,
    d: DerivedConstants | None = None,
    variant: str | None = None,
) -> float:
    """G''(g) for the general withdrawal rate c.

    Two equivalent arrangements of the withdrawal terms are exposed behind
    ``variant`` (they group the c-dependence differently but are identical
    algebraically); both collapse to the c = 0 form when c vanishes.
    """
    if not g > 0.0:
        raise ValidationError("g_ode_rhs requires g > 0")
    if not G > 0.0:
        raise ValidationError("g_ode_rhs requires G > 0 (policy undefined otherwise)")
    d = d or derive_constants(p)
    variant = variant or "grouped"
    drive = p.discount + p.c - d.rho
    if variant == "grouped":
        return (p.R / (d.kappa * g)) * (
            drive * Gp - p.c * p.R * G / g - g**p.R * G ** (-p.R) * Gp
        )
    if variant == "expanded":
        return (p.R / d.kappa) * (drive / g - g ** (p.R - 1.0) * G ** (-p.R)) * Gp - (
            p.c * p.R**2 / d.kappa
        ) * G / g**2
    raise ValidationError(f"unknown ODE variant {variant!r}")


# Cash-Karp 4(5) embedded pair
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0
_A51, _A52, _A53, _A54 = -11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0
_A61, _A62, _A63, _A64, _A65 = (
    1631.0 / 55296.0,
    175.0 / 512.0,
    575.0 / 13824.0,
    44275.0 / 110592.0,
    253.0 / 4096.0,
)
_B1, _B3, _B4, _B6 = 37.0 / 378.0, 250.0 / 621.0, 125.0 / 594.0, 512.0 / 1771.0
_E1 = 37.0 / 378.0 - 2825.0 / 27648.0
_E3 = 250.0 / 621.0 - 18575.0 / 48384.0
_E4 = 125.0 / 594.0 - 13525.0 / 55296.0
_E5 = -277.0 / 14336.0
_E6 = 512.0 / 1771.0 - 1.0 / 4.0


@njit(cache=True)
def _rhs(g, G, Gp, R, kappa, drho):
    d2 = (R / kappa) * Gp * (drho - g**R * G ** (-R)) / g
    return Gp, d2, -(g ** (-R)) * Gp


@njit(cache=True)
def _ck_step(t, y0, y1, y2, h, R, kappa, drho, g_floor_val, rtol, atol):
    """One trial Cash-Karp step; returns (stage_ok, n0, n1, n2, err_norm).

    stage_ok is False when an intermediate stage would push G to the floor,
    in which case the caller just shrinks the step.
    """
    k10, k11, k12 = _rhs(t, y0, y1, R, kappa, drho)
    s = y0 + h * _A21 * k10
    if s <= g_floor_val:
        return False, 0.0, 0.0, 0.0, 2.0
    k20, k21, k22 = _rhs(t + 0.2 * h, s, y1 + h * _A21 * k11, R, kappa, drho)
    s = y0 + h * (_A31 * k10 + _A32 * k20)
    if s <= g_floor_val:
        return False, 0.0, 0.0, 0.0, 2.0
    k30, k31, k32 = _rhs(t + 0.3 * h, s, y1 + h * (_A31 * k11 + _A32 * k21), R, kappa, drho)
    s = y0 + h * (_A41 * k10 + _A42 * k20 + _A43 * k30)
    if s <= g_floor_val:
        return False, 0.0, 0.0, 0.0, 2.0
    k40, k41, k42 = _rhs(t + 0.6 * h, s, y1 + h * (_A41 * k11 + _A42 * k21 + _A43 * k31), R, kappa, drho)
    s = y0 + h * (_A51 * k10 + _A52 * k20 + _A53 * k30 + _A54 * k40)
    if s <= g_floor_val:
        return False, 0.0, 0.0, 0.0, 2.0
    k50, k51, k52 = _rhs(
        t + h, s, y1 + h * (_A51 * k11 + _A52 * k21 + _A53 * k31 + _A54 * k41), R, kappa, drho
    )
    s = y0 + h * (_A61 * k10 + _A62 * k20 + _A63 * k30 + _A64 * k40 + _A65 * k50)
    if s <= g_floor_val:
        return False, 0.0, 0.0, 0.0, 2.0
    k60, k61, k62 = _rhs(
        t + 0.875 * h,
        s,
        y1 + h * (_A61 * k11 + _A62 * k21 + _A63 * k31 + _A64 * k41 + _A65 * k51),
        R, kappa, drho,
    )
    n0 = y0 + h * (_B1 * k10 + _B3 * k30 + _B4 * k40 + _B6 * k60)
    n1 = y1 + h * (_B1 * k11 + _B3 * k31 + _B4 * k41 + _B6 * k61)
    n2 = y2 + h * (_B1 * k12 + _B3 * k32 + _B4 * k42 + _B6 * k62)
    e0 = h * (_E1 * k10 + _E3 * k30 + _E4 * k40 + _E5 * k50 + _E6 * k60)
    e1 = h * (_E1 * k11 + _E3 * k31 + _E4 * k41 + _E5 * k51 + _E6 * k61)
    e2 = h * (_E1 * k12 + _E3 * k32 + _E4 * k42 + _E5 * k52 + _E6 * k62)
    err0 = abs(e0) / (atol + rtol * max(abs(y0), abs(n0)))
    err1 = abs(e1) / (atol + rtol * max(abs(y1), abs(n1)))
    err2 = abs(e2) / (atol + rtol * max(abs(y2), abs(n2)))
    err = max(err0, max(err1, err2))
    return True, n0, n1, n2, err


@njit(cache=True)
def _ck_integrate(g_star, W_star, Gp_star, R, kappa, drho, targets, out, g_floor_val, rtol, atol, max_steps):
    """Backward Cash-Karp integration recording state at each target.

    targets is strictly decreasing with targets[0] == g_star; out has shape
    (len(targets), 3) and receives (G, G', Psi).  Returns (status, filled,
    g_reached, G_reached, Gp_reached).
    """
    n = targets.shape[0]
    t = g_star
    y0, y1, y2 = W_star, Gp_star, 0.0
    out[0, 0], out[0, 1], out[0, 2] = y0, y1, y2
    idx = 1
    h = -g_star * 1e-4
    steps = 0
    while idx < n:
        if steps >= max_steps:
            return _MAXSTEPS, idx, t, y0, y1
        steps += 1
        tgt = targets[idx]
        clamped = False
        if t + h < tgt:
            h = tgt - t
            clamped = True
        stage_ok, n0, n1, n2, err = _ck_step(
            t, y0, y1, y2, h, R, kappa, drho, g_floor_val, rtol, atol
        )
        if stage_ok and err <= 1.0:
            t = tgt if clamped else t + h
            y0, y1, y2 = n0, n1, n2
            if y0 <= g_floor_val:
                return _DOVE, idx, t, y0, y1
            if y1 <= 0.0:
                return _STALLED, idx, t, y0, y1
            if clamped:
                out[idx, 0], out[idx, 1], out[idx, 2] = y0, y1, y2
                idx += 1
            fac = 5.0 if err < 1e-10 else 0.9 * err ** -0.2
            if fac > 5.0:
                fac = 5.0
            h *= fac
        else:
            if stage_ok:
                fac = 0.9 * err ** -0.2
                if fac < 0.1:
                    fac = 0.1
            else:
                fac = 0.2
            h *= fac
        if -h < 1e-14 * t:
            return _UNDERFLOW, idx, t, y0, y1
    return _OK, n, t, y0, y1


@dataclass
class GSolution:
    """Tabulated strictly increasing G on [eps, g*] with derivative and value.

    grid arrays are ascending in g.  value_offset is the unconstrained value
    at the pasting point, i.e. the small-wealth tail closure plus the
    integrated Psi; v_unconstrained evaluates V(g) = value_offset - Psi(g).
    """

    grid_g: np.ndarray
    grid_G: np.ndarray
    grid_Gp: np.ndarray
    grid_Psi: np.ndarray
    g_star: float
    eps_start: float
    w_star: float
    gp_star: float
    merton_slope: float       # a^(1/R): slope of the linear asymptote at g -> 0
    shoot_residual: float     # G(eps) - merton_slope * eps, dollars
    value_offset: float       # V(W*) anchored by the algebraic ODE identity at g*
    value_matching_lhs: float  # V(W*) by pure quadrature: tail closure + Psi(eps)
    tail_value: float         # closure integral over (0, eps)
    interpolation_order: int = 3
    _lng: np.ndarray = field(default=None, repr=False)
    _lnG_of_lng: PchipInterpolator = field(default=None, repr=False)
    _dlnG_of_lng: PchipInterpolator = field(default=None, repr=False)
    _lng_of_lnG: PchipInterpolator = field(default=None, repr=False)
    _lnGp_of_lng: PchipInterpolator = field(default=None, repr=False)
    _psi_of_lng: PchipInterpolator = field(default=None, repr=False)

    def _build_interpolants(self):
        self._lng = np.log(self.grid_g)
        ln_g_big = np.log(self.grid_G)
        self._lnG_of_lng = PchipInterpolator(self._lng, ln_g_big, extrapolate=False)
        self._dlnG_of_lng = self._lnG_of_lng.derivative()
        self._lng_of_lnG = PchipInterpolator(ln_g_big, self._lng, extrapolate=False)
        self._lnGp_of_lng = PchipInterpolator(self._lng, np.log(self.grid_Gp), extrapolate=False)
        self._psi_of_lng = PchipInterpolator(self._lng, self.grid_Psi, extrapolate=False)


def integrate_G(
    W_star: float,
    p: ModelParams,
    d: DerivedConstants | None = None,
    cfg: IntegratorConfig | None = None,
    coef: ConstrainedCoefficients | None = None,
) -> GSolution:
    """Integrate the auxiliary ODE backward from the candidate pasting point.

    Raises CandidateRejectedError when the candidate's G hits zero, loses
    monotonicity, or the step size underflows before reaching the cutoff; a
    consistent candidate instead ends near the linear asymptote and the
    remaining gap is reported as shoot_residual.
    """
    if p.c != 0.0:
        raise ValidationError("integrate_G is implemented for c = 0 only")
    d = d or derive_constants(p)
    cfg = cfg or IntegratorConfig()
    if coef is None:
        coef = coefficients_for(W_star, p, d)
    g_star = coef.g_star
    gp_star = p.L * p.R * p.sigma**2 / (p.mu * g_star)
    eps = g_star * cfg.eps_start_factor
    targets = np.geomspace(g_star, eps, cfg.n_grid)
    out = np.empty((cfg.n_grid, 3))
    g_floor_val = 1e-10 * W_star

    slack = d.assumption_a_slack  # lambda + delta - rho for c = 0
    merton_slope = (1.0 / slack) ** (1.0 / p.R)

    status, filled, g_reached, g_big, gp_end = _ck_integrate(
        g_star, W_star, gp_star, p.R, d.kappa, slack,
        targets, out, g_floor_val, cfg.rtol, cfg.atol, cfg.max_steps,
    )
    if status != _OK:
        reason = _REJECT_REASON[status]
        if status in (_UNDERFLOW, _MAXSTEPS):
            # classify by which side of the linear asymptote the orbit left on
            reason = "dove" if g_big < merton_slope * g_reached else "stalled"
        raise CandidateRejectedError(
            reason,
            f"W*={W_star}: integration stopped at g={g_reached} "
            f"({filled}/{cfg.n_grid} grid points, G={g_big}, G'={gp_end})",
        )

    grid_g = targets[::-1].copy()
    grid_G = out[::-1, 0].copy()
    grid_Gp = out[::-1, 1].copy()
    grid_Psi = out[::-1, 2].copy()
    if np.any(np.diff(grid_G) <= 0.0) or np.any(grid_Gp <= 0.0):
        raise CandidateRejectedError("stalled", f"W*={W_star}: tabulated G not strictly increasing")

    # linear asymptote at the origin and small-wealth closure of the value
    shoot = grid_G[0] - merton_slope * eps
    growth = p.R**2 * slack / d.kappa
    m_plus = 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * growth))
    eta_eps = grid_G[0] / (merton_slope * eps) - 1.0
    one_m_r = 1.0 - p.R
    tail = merton_slope * eps**one_m_r * (
        1.0 / one_m_r + eta_eps * (1.0 + m_plus) / (one_m_r + m_plus)
    )
    # Along an exact orbit, (lambda+delta) V = u(G) + (kappa/R) g^(1-R) G';
    # anchoring the value level there instead of at the closure integral
    # removes the O(eps^(1-R)) closure bias from the assembled V.  The pure
    # quadrature level is kept separately for the value-matching residual.
    anchored = (
        W_star**one_m_r / one_m_r + (d.kappa / p.R) * g_star**one_m_r * gp_star
    ) / p.discount

    sol = GSolution(
        grid_g=grid_g,
        grid_G=grid_G,
        grid_Gp=grid_Gp,
        grid_Psi=grid_Psi,
        g_star=g_star,
        eps_start=eps,
        w_star=W_star,
        gp_star=gp_star,
        merton_slope=merton_slope,
        shoot_residual=shoot,
        value_offset=anchored,
        value_matching_lhs=tail + grid_Psi[0],
        tail_value=tail,
    )
    sol._build_interpolants()
    return sol


def invert_G(sol: GSolution, W):
    """Monotone inverse g = G^-1(W) on the tabulated range.

    A guess from the reverse interpolant is polished by Newton steps on the
    forward interpolant, so the round trip G(invert_G(W)) = W holds to the
    interpolant's own machine accuracy.
    """
    W_arr = np.asarray(W, dtype=float)
    w_lo, w_hi = sol.grid_G[0], sol.grid_G[-1]
    if np.any(W_arr < w_lo * (1.0 - 1e-9)) or np.any(W_arr > w_hi * (1.0 + 1e-9)):
        raise ValidationError(
            f"W outside tabulated range [{w_lo}, {w_hi}]"
        )
    ln_w = np.log(np.clip(W_arr, w_lo, w_hi))
    lng = sol._lng_of_lnG(ln_w)
    lng = np.clip(lng, sol._lng[0], sol._lng[-1])
    for _ in range(4):
        resid = sol._lnG_of_lng(lng) - ln_w
        slope = sol._dlnG_of_lng(lng)
        lng = np.clip(lng - resid / slope, sol._lng[0], sol._lng[-1])
        if np.max(np.abs(resid)) < 1e-14:
            break
    g = np.exp(lng)
    return float(g) if np.isscalar(W) or W_arr.ndim == 0 else g


def g_and_slope_at(sol: GSolution, W):
    """(g, G'(g)) at wealth W, the pieces the optimal policy is built from."""
    g = invert_G(sol, W)
    lng = np.log(g)
    gp = np.exp(sol._lnGp_of_lng(lng))
    return g, (float(gp) if np.isscalar(W) else gp)


def v_unconstrained(W, sol: GSolution, p: ModelParams):
    """(V, V', V'') on the unconstrained side, W in the tabulated range.

    V comes from the integrated quadrature state, V' = g^-R exactly by the
    definition of g, and V'' = -R g^(-R-1) / G'(g).
    """
    g = invert_G(sol, W)
    lng = np.log(g)
    gp = np.exp(sol._lnGp_of_lng(lng))
    psi = sol._psi_of_lng(lng)
    value = sol.value_offset - psi
    first = g ** (-p.R)
    second = -p.R * g ** (-p.R - 1.0) / gp
    if np.isscalar(W) or np.asarray(W).ndim == 0:
        return float(value), float(first), float(second)
    return value, first, second


def algebraic_value_identity(W, sol: GSolution, p: ModelParams):
    """V(W) via (lambda+delta) V = u(W) + (kappa/R) g^(1-R) G'(g).

    Exact along true solutions of the auxiliary ODE; used as an internal
    cross-check of the quadrature path.
    """
    d = derive_constants(p)
    g = invert_G(sol, W)
    lng = np.log(g)
    gp = np.exp(sol._lnGp_of_lng(lng))
    u = np.asarray(W, dtype=float) ** (1.0 - p.R) / (1.0 - p.R)
    value = (u + (d.kappa / p.R) * g ** (1.0 - p.R) * gp) / p.discount
    return float(value) if np.isscalar(W) else value


def write_g_table_csv(sol: GSolution, path, metadata: dict | None = None) -> None:
    """Dump the tabulated (g, G, Gp) to CSV for plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in (metadata or {}).items():
            fh.write(f"# {key} = {val}\n")
        fh.write("g,G,Gp\n")
        for g, G, gp in zip(sol.grid_g, sol.grid_G, sol.grid_Gp):
            fh.write(f"{float(g)!r},{float(G)!r},{float(gp)!r}\n")
