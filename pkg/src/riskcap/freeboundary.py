"""Free-boundary solve and the assembled value function and policy.

A candidate threshold W* fully determines both solution branches: the
constrained branch through (C1, C*, g*) and the unconstrained branch through
backward integration of the auxiliary ODE from g*.  First derivatives and
second derivatives paste automatically by construction, so the only genuine
condition left is value matching, which is equivalent to the backward orbit
landing on the origin asymptote.  solve_free_boundary scans a geometric grid
of candidates, brackets the sign change of the value-matching residual
(candidates whose orbit crashes are folded in with the sign of the side they
crash toward), and polishes the root with Brent's method.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constrained import ConstrainedCoefficients, coefficients_for, v_constrained
from .errors import CandidateRejectedError, SolverError, ValidationError
from .gode import (
    GSolution,
    IntegratorConfig,
    g_and_slope_at,
    g_ode_rhs,
    integrate_G,
    v_unconstrained,
)
from .model import (
    DerivedConstants,
    ModelParams,
    check_assumption_a,
    crra_utility,
    derive_constants,
    params_to_dict,
)


@dataclass(frozen=True)
class SolverConfig:
    ode: IntegratorConfig = field(default_factory=IntegratorConfig)
    scan_points: int = 25
    bracket_lo_rel: float = 1e-6      # scan starts at w_L * (1 + this)
    bracket_hi_factor: float = 10.0   # ... and initially ends at w_L * this
    expand_factor: float = 10.0       # upper end grows by this per expansion
    max_expansions: int = 2
    # W* is localized close to the residual noise floor: the leftover
    # localization error seeds the unstable (irregular) mode of the backward
    # orbit, and the tabulated tail stays clean only while that seed is tiny.
    root_rtol: float = 1e-12          # relative tolerance on W*
    root_xtol_rel: float = 1e-12      # absolute tolerance on W*, in units of w_L
    root_maxiter: int = 200
    gate_rel: float = 1e-4            # admissibility: |shoot residual| <= this * W*
    # calibration constant for the reported W* error estimate; the ODE
    # tolerance feeds the residual, and this factor converts it to dollars
    ode_error_factor: float = 1e3


@dataclass(frozen=True)
class ScanEntry:
    w: float
    status: str            # "ok" | "dove" | "stalled" | "bad_coefficients" | "step_underflow"
    residual: float | None


@dataclass
class FreeBoundarySolution:
    w_star: float
    g_star: float
    coef: ConstrainedCoefficients
    gsol: GSolution
    value_matching_residual: float    # absolute, utility units
    smooth_fit_residual: float        # relative first-derivative mismatch at W*
    shoot_residual_rel: float         # |origin shooting residual| / W*
    bracket_used: tuple[float, float]
    solver_iterations: int
    function_evals: int
    w_star_error_estimate: float      # dollars
    scan: list[ScanEntry]
    constants: DerivedConstants


def _branch_values(W_star: float, p: ModelParams, d: DerivedConstants, ode_cfg: IntegratorConfig):
    """(coef, gsol, residual) for a candidate threshold; may raise rejection."""
    coef = coefficients_for(W_star, p, d)
    gsol = integrate_G(W_star, p, d, ode_cfg, coef)
    lhs = gsol.value_matching_lhs
    rhs = v_constrained(W_star, coef, p, d)[0]
    return coef, gsol, lhs - rhs


def value_matching_residual(
    W_star: float,
    p: ModelParams,
    d: DerivedConstants | None = None,
    ode_cfg: IntegratorConfig | None = None,
) -> float:
    """Unconstrained value minus constrained value at a candidate W*.

    Positive when the backward orbit overshoots the origin asymptote from
    above, negative when it undershoots; zero exactly at the free boundary.
    Raises CandidateRejectedError for candidates whose orbit crashes first.
    """
    d = d or derive_constants(p)
    return _branch_values(W_star, p, d, ode_cfg or IntegratorConfig())[2]


def solve_free_boundary(p: ModelParams, cfg: SolverConfig | None = None) -> FreeBoundarySolution:
    """Locate the threshold wealth W* and assemble the full solution."""
    cfg = cfg or SolverConfig()
    if p.c != 0.0:
        raise ValidationError("the free-boundary solve is implemented for c = 0 only")
    if p.mu <= 0.0:
        raise ValidationError("the free-boundary solve requires mu > 0 (no risky demand otherwise)")
    ok, slack = check_assumption_a(p)
    if not ok:
        raise ValidationError(f"finite-value condition fails (slack={slack})")
    d = derive_constants(p)

    def probe(w: float) -> ScanEntry:
        try:
            _, gsol, res = _branch_values(w, p, d, cfg.ode)
            return ScanEntry(w, "ok", res)
        except CandidateRejectedError as exc:
            return ScanEntry(w, exc.reason, None)

    lo = d.w_L * (1.0 + cfg.bracket_lo_rel)
    hi = d.w_L * cfg.bracket_hi_factor
    scan: list[ScanEntry] = []
    brackets: list[tuple[ScanEntry, ScanEntry]] = []
    for expansion in range(cfg.max_expansions + 1):
        ws = np.geomspace(lo, hi, cfg.scan_points)
        if scan:  # keep previous entries, extend upward only
            ws = ws[ws > scan[-1].w * (1.0 + 1e-12)]
        scan.extend(probe(w) for w in ws)
        brackets = _find_brackets(scan)
        if brackets:
            break
        lo, hi = hi, hi * cfg.expand_factor
    if not brackets:
        raise SolverError(
            "no sign change of the value-matching residual found; scan table:\n"
            + "\n".join(f"  W={e.w:.6g} {e.status} residual={e.residual}" for e in scan)
        )

    ok_res = [abs(e.residual) for e in scan if e.status == "ok"]
    big = 10.0 * max(ok_res) if ok_res else 1.0
    n_evals = len(scan)

    def f_ext(w: float) -> float:
        nonlocal n_evals
        n_evals += 1
        try:
            return _branch_values(w, p, d, cfg.ode)[2]
        except CandidateRejectedError:
            return -_ok_side_sign(scan, w) * big

    root = None
    bracket_used = None
    iterations = 0
    for lo_e, hi_e in brackets:
        fa = lo_e.residual if lo_e.residual is not None else -_ok_side_sign(scan, lo_e.w) * big
        fb_ = hi_e.residual if hi_e.residual is not None else -_ok_side_sign(scan, hi_e.w) * big
        if not (np.sign(fa) != np.sign(fb_)):
            continue
        xtol = max(cfg.root_xtol_rel * d.w_L, 1e-9)
        try:
            cand, info = brentq(
                f_ext, lo_e.w, hi_e.w,
                rtol=max(cfg.root_rtol, 4.0 * np.finfo(float).eps),
                xtol=xtol, maxiter=cfg.root_maxiter, full_output=True,
            )
        except (ValueError, RuntimeError):
            continue
        try:
            coef, gsol, res = _branch_values(cand, p, d, cfg.ode)
        except CandidateRejectedError:
            # Brent may terminate on the rejected side of a surrogate jump;
            # nudge geometrically toward the admissible side.
            coef = gsol = res = None
            cap = 0.5 * (hi_e.w - lo_e.w)
            k = 0
            while coef is None and xtol * 2.0**k < cap:
                delta = xtol * 2.0**k
                for sgn in (+1.0, -1.0):
                    try:
                        coef, gsol, res = _branch_values(cand + sgn * delta, p, d, cfg.ode)
                        cand = cand + sgn * delta
                        break
                    except CandidateRejectedError:
                        continue
                k += 1
            if coef is None:
                continue
        if abs(gsol.shoot_residual) <= cfg.gate_rel * cand:
            root = cand
            bracket_used = (lo_e.w, hi_e.w)
            iterations = info.iterations
            break
    if root is None:
        raise SolverError(
            "no admissible root passed the origin-asymptote gate; scan table:\n"
            + "\n".join(f"  W={e.w:.6g} {e.status} residual={e.residual}" for e in scan)
        )
    if not root > d.w_L:
        raise SolverError(f"solved threshold {root} does not exceed w_L={d.w_L}")

    # independent pasting diagnostics from the assembled branches
    _, vl, _ = v_unconstrained(root, gsol, p)
    _, vr, _ = v_constrained(root, coef, p, d)
    smooth_fit = abs(vl - vr) / abs(vr)
    err_est = max(
        2.0 * (max(cfg.root_xtol_rel * d.w_L, 1e-9) + cfg.root_rtol * root),
        cfg.ode_error_factor * cfg.ode.rtol * root,
    )
    return FreeBoundarySolution(
        w_star=root,
        g_star=coef.g_star,
        coef=coef,
        gsol=gsol,
        value_matching_residual=res,
        smooth_fit_residual=smooth_fit,
        shoot_residual_rel=abs(gsol.shoot_residual) / root,
        bracket_used=bracket_used,
        solver_iterations=iterations,
        function_evals=n_evals,
        w_star_error_estimate=err_est,
        scan=scan,
        constants=d,
    )


def _ok_side_sign(scan: list[ScanEntry], w: float) -> float:
    """Sign of the residual at the nearest evaluable scan entry.

    Rejected candidates are assigned the opposite sign, which orients the
    bracketing without assuming which failure mode lies on which side.
    """
    best, dist = 1.0, math.inf
    for e in scan:
        if e.status == "ok" and e.residual is not None and abs(e.w - w) < dist:
            dist = abs(e.w - w)
            best = math.copysign(1.0, e.residual)
    return best


def _find_brackets(scan: list[ScanEntry]) -> list[tuple[ScanEntry, ScanEntry]]:
    """Adjacent scan pairs that may bracket the root.

    Genuine ok/ok sign changes come first; transitions between an evaluable
    candidate and a crashed one follow (the crash side takes the opposite
    sign).  Several brackets may be returned; callers validate each root
    against the origin gate and report multiplicity.
    """
    genuine: list[tuple[ScanEntry, ScanEntry]] = []
    mixed: list[tuple[ScanEntry, ScanEntry]] = []
    for a, b in zip(scan[:-1], scan[1:]):
        if a.status == "ok" and b.status == "ok":
            if a.residual == 0.0 or b.residual == 0.0 or (a.residual < 0.0) != (b.residual < 0.0):
                genuine.append((a, b))
        elif a.status == "ok" or b.status == "ok":
            mixed.append((a, b))
    return genuine + mixed


# ---------------------------------------------------------------------------
# assembled value function, policy, residual checks


def value_function(W: float, fb: FreeBoundarySolution, p: ModelParams) -> tuple[float, float, float]:
    """(V, V', V'') of the constrained problem at wealth W >= 0.

    Dispatches to the tabulated unconstrained branch for W <= W* (exactly at
    W* the left branch is returned; both branches agree there to solver
    accuracy) and to the closed-form constrained branch above.  Below the
    tabulated range the local power behavior V ~ W^(1-R) anchored at the
    table edge is used.
    """
    if W < 0.0:
        raise ValidationError("value_function requires W >= 0")
    if W == 0.0:
        return 0.0, math.inf, -math.inf
    if W > fb.w_star:
        return v_constrained(W, fb.coef, p, fb.constants)
    w_lo = fb.gsol.grid_G[0]
    if W < w_lo:
        v_e, vp_e, vpp_e = v_unconstrained(w_lo, fb.gsol, p)
        ratio = W / w_lo
        return (
            v_e * ratio ** (1.0 - p.R),
            vp_e * ratio ** (-p.R),
            vpp_e * ratio ** (-p.R - 1.0),
        )
    return v_unconstrained(W, fb.gsol, p)


def policy(W: float, fb: FreeBoundarySolution, p: ModelParams) -> float:
    """Optimal dollar amount X(W) in the risky asset; capped at L above W*."""
    if W <= 0.0:
        return 0.0
    if W >= fb.w_star:
        return p.L
    d = fb.constants
    w_lo = fb.gsol.grid_G[0]
    if W < w_lo:
        g, gp = g_and_slope_at(fb.gsol, w_lo)
        return d.merton_fraction * g * gp * (W / w_lo)
    g, gp = g_and_slope_at(fb.gsol, W)
    return d.merton_fraction * g * gp


def policy_left_derivative(fb: FreeBoundarySolution, p: ModelParams) -> float:
    """dX/dW as W approaches W* from below: (mu/(R sigma^2))(1 + g G''/G').

    Uses the ODE right-hand side at the terminal point, so no interpolation
    enters.  The right derivative is 0, so a nonzero value here is the kink.
    """
    d = fb.constants
    g = fb.g_star
    gp = fb.gsol.gp_star
    gpp = g_ode_rhs(g, fb.w_star, gp, p, d)
    return d.merton_fraction * (1.0 + g * gpp / gp)


def hjb_residual(W: float, fb: FreeBoundarySolution, p: ModelParams) -> float:
    """Relative residual of the max-form dynamic programming equation at W.

    The maximization over X in [0, L] of the quadratic
    0.5 sigma^2 X^2 V'' + mu X V' is solved in closed form and substituted
    back; by construction of the two branches the residual should sit at
    solver accuracy for all W != W*.
    """
    if not W > 0.0:
        raise ValidationError("hjb_residual requires W > 0")
    v, vp, vpp = value_function(W, fb, p)
    x_opt = optimal_control(vp, vpp, p)
    rhs = (
        0.5 * p.sigma**2 * x_opt**2 * vpp
        + p.mu * x_opt * vp
        - p.c * W * vp
        + crra_utility(W, p.R)
    )
    lhs = p.discount * v
    return abs(lhs - rhs) / abs(lhs)


def optimal_control(vp: float, vpp: float, p: ModelParams) -> float:
    """argmax over X in [0, L] of 0.5 sigma^2 X^2 V'' + mu X V'."""
    if vpp >= 0.0:
        # convex in X: max sits at a corner; with vp > 0 that corner is L
        return p.L if p.mu * vp > 0.0 else 0.0
    interior = -p.mu * vp / (p.sigma**2 * vpp)
    return min(max(interior, 0.0), p.L)


def unconstrained_demand(W: float, fb: FreeBoundarySolution, p: ModelParams) -> float:
    """-(mu/sigma^2) V'/V'', the demand ignoring the cap; >= L on (W*, inf)."""
    _, vp, vpp = value_function(W, fb, p)
    return -p.mu * vp / (p.sigma**2 * vpp)


# ---------------------------------------------------------------------------
# policies as standalone evaluable objects (for simulation and comparison)


@dataclass
class PolicyFunction:
    """Evaluable map W -> dollars in the risky asset, with its cap metadata."""

    kind: str                 # "optimal" | "slope" | "slope_capped" | "constant_dollar"
    w_star: float
    capacity: float
    slope: float = 0.0
    cap: float = math.inf
    table_logw: np.ndarray | None = field(default=None, repr=False)
    table_x: np.ndarray | None = field(default=None, repr=False)

    def __call__(self, W):
        W_arr = np.asarray(W, dtype=float)
        if self.kind == "constant_dollar":
            x = np.where(W_arr > 0.0, self.capacity, 0.0)
        elif self.kind in ("slope", "slope_capped"):
            x = np.minimum(self.slope * np.maximum(W_arr, 0.0), self.cap)
        else:
            x = self._table_eval(W_arr)
        return float(x) if np.isscalar(W) or W_arr.ndim == 0 else x

    def _table_eval(self, W_arr):
        logw = np.log(np.clip(W_arr, 1e-300, None))
        x = np.interp(logw, self.table_logw, self.table_x)
        lo = math.exp(self.table_logw[0])
        below = W_arr < lo
        if np.any(below):
            x = np.where(below, self.table_x[0] * W_arr / lo, x)
        x = np.where(W_arr >= self.w_star, self.capacity, x)
        return np.where(W_arr <= 0.0, 0.0, x)


def optimal_policy(fb: FreeBoundarySolution, p: ModelParams, n_table: int = 4096) -> PolicyFunction:
    """Tabulate the solved policy on a log grid for fast repeated evaluation."""
    w_lo = fb.gsol.grid_G[0]
    grid = np.geomspace(w_lo, fb.w_star, n_table)
    g, gp = g_and_slope_at(fb.gsol, grid)
    x = fb.constants.merton_fraction * g * gp
    x = np.minimum(x, p.L)
    return PolicyFunction(
        kind="optimal", w_star=fb.w_star, capacity=p.L,
        table_logw=np.log(grid), table_x=x,
    )


def myopic_capped_policy(p: ModelParams) -> PolicyFunction:
    """min(merton share * W, L): the cut-the-benchmark strategy."""
    d = derive_constants(p)
    return PolicyFunction(
        kind="slope_capped", w_star=d.w_L, capacity=p.L, slope=d.merton_fraction, cap=p.L
    )


def merton_policy(p: ModelParams) -> PolicyFunction:
    """Unconstrained optimal share, no cap (violates the capacity bound)."""
    d = derive_constants(p)
    return PolicyFunction(
        kind="slope", w_star=math.inf, capacity=math.inf, slope=d.merton_fraction
    )


def leverage_policy(p: ModelParams, b: float) -> PolicyFunction:
    """Constant share b of wealth."""
    return PolicyFunction(kind="slope", w_star=math.inf, capacity=math.inf, slope=b)


def all_safety_policy(p: ModelParams) -> PolicyFunction:
    """Everything in the risk-free asset."""
    return PolicyFunction(kind="slope", w_star=math.inf, capacity=p.L, slope=0.0)


def constant_dollar_policy(p: ModelParams) -> PolicyFunction:
    """X = L whenever wealth is positive (not contingent on a threshold)."""
    return PolicyFunction(kind="constant_dollar", w_star=0.0, capacity=p.L)


# ---------------------------------------------------------------------------
# export helpers


def solution_summary(fb: FreeBoundarySolution, p: ModelParams) -> dict:
    """JSON-ready summary of the solved free boundary."""
    d = fb.constants
    return {
        "w_star": fb.w_star,
        "g_star": fb.g_star,
        "c1": fb.coef.c1,
        "c_star": fb.coef.c_star,
        "value_at_w_star": fb.gsol.value_offset,
        "value_matching_residual": fb.value_matching_residual,
        "smooth_fit_residual": fb.smooth_fit_residual,
        "shoot_residual_rel": fb.shoot_residual_rel,
        "bracket_used": list(fb.bracket_used),
        "solver_iterations": fb.solver_iterations,
        "function_evals": fb.function_evals,
        "w_star_error_estimate": fb.w_star_error_estimate,
        "params": params_to_dict(p),
        "constants": {
            "kappa": d.kappa,
            "rho": d.rho,
            "beta1": d.beta1,
            "beta2": d.beta2,
            "merton_fraction": d.merton_fraction,
            "w_L": d.w_L,
            "assumption_a_slack": d.assumption_a_slack,
        },
    }


def _write_csv(path, header: list[str], rows, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in (metadata or {}).items():
            fh.write(f"# {key} = {val}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_value_table_csv(fb, p, W_grid, path, metadata: dict | None = None) -> None:
    rows = []
    for w in W_grid:
        v, vp, vpp = value_function(float(w), fb, p)
        rows.append((w, v, vp, vpp))
    _write_csv(path, ["W", "V", "dV", "d2V"], rows, metadata)


def write_policy_table_csv(fb, p, W_grid, path, metadata: dict | None = None) -> None:
    rows = []
    for w in W_grid:
        x = policy(float(w), fb, p)
        rows.append((w, x, x / w if w > 0 else 0.0))
    _write_csv(path, ["W", "X", "X_over_W"], rows, metadata)
