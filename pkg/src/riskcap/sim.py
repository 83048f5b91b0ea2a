"""Monte Carlo verification engine.

Euler-Maruyama paths of dW = X(W)(mu dt + sigma dZ) - c W dt with wealth
absorbed at zero, discounted-utility accumulation by trapezoid, antithetic
pairs on by default, and per-path counter-based seeding (splitmix64 of
(seed, path index) into xorshift128+) so results are bit-identical
regardless of thread scheduling.  Normals come from a 256-layer ziggurat
over that stream; the RNG dominates the per-step cost, so several starting
wealth levels are simulated per stream against the same draws, which also
provides common random numbers for tournaments.

The primary estimator discounts deterministically at lambda + delta (the
lifetime integral has already been reduced by independence of the death
time); an optional mode samples the death time explicitly to cross-validate
that reduction.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import SimulationError, ValidationError
from .freeboundary import FreeBoundarySolution, PolicyFunction, optimal_policy
from .model import ModelParams, crra_utility

_POLICY_TABLE, _POLICY_SLOPE, _POLICY_CONST = 0, 1, 2

# 256-layer ziggurat for the standard normal (tail starts at R_ZIG; V_ZIG is
# the common layer area).
R_ZIG = 3.6541528853610088
INV_R_ZIG = 1.0 / R_ZIG
V_ZIG = 0.00492867323399


def _build_ziggurat() -> tuple[np.ndarray, np.ndarray]:
    n = 256
    x = np.empty(n + 1)
    x[0] = V_ZIG * math.exp(0.5 * R_ZIG * R_ZIG)  # virtual base-layer width
    x[1] = R_ZIG
    for i in range(2, n):
        x[i] = math.sqrt(-2.0 * math.log(V_ZIG / x[i - 1] + math.exp(-0.5 * x[i - 1] ** 2)))
    x[n] = 0.0
    return x, np.exp(-0.5 * x * x)


_ZIG_XTAB, _ZIG_FTAB = _build_ziggurat()

_U64_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_INV_2_53 = 1.1102230246251565e-16  # 2^-53


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 200_000
    dt: float = 1.0 / 500.0
    horizon_cap: float = 120.0       # years; truncation of the lifetime integral
    seed: int = 20_240_901
    antithetic: bool = True
    sample_mortality: bool = False   # validation mode: draw tau ~ Exp(lambda)
    near_zero_cutoff_frac: float = 1e-6  # of W0; below this the table policy holds X = 0


@dataclass
class SimResult:
    mc_value: float
    std_error: float
    mean_terminal_wealth: float
    ruin_fraction: float
    instantaneous_stats: np.ndarray   # rows of (W, var of dW/W per year, cov with dS/S per year)
    tail_bound: float                 # analytic scale of the truncated-horizon remainder
    n_paths: int
    dt: float
    horizon_cap: float
    seed: int
    per_path: np.ndarray = field(repr=False, default=None)


def validate_config(cfg: SimConfig, p: ModelParams) -> None:
    if cfg.n_paths <= 0:
        raise ValidationError("n_paths must be positive")
    if not 0.0 < cfg.dt <= 1.0 / 250.0:
        raise ValidationError(f"dt must lie in (0, 1/250], got {cfg.dt}")
    if cfg.horizon_cap < 5.0 / p.lambda_mort:
        raise ValidationError(
            f"horizon_cap must cover >= 5 expected lifetimes (>= {5.0 / p.lambda_mort}), got {cfg.horizon_cap}"
        )
    if cfg.antithetic and cfg.n_paths % 2 != 0:
        raise ValidationError("antithetic pairing needs an even n_paths")


@njit(cache=True)
def _stream_state(seed, i):
    """(s0, s1) xorshift128+ state from splitmix64 of (seed, path index)."""
    z = np.uint64(seed) + np.uint64(i) * _U64_GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    s0 = z ^ (z >> np.uint64(31))
    z = s0 + _U64_GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    s1 = z ^ (z >> np.uint64(31))
    if s0 == np.uint64(0) and s1 == np.uint64(0):
        s1 = np.uint64(1)
    return s0, s1


@njit(cache=True, inline="always")
def _table_seek(W, table_w, j):
    """Cell index for W by incremental search from the previous index j."""
    n = table_w.shape[0]
    while j > 0 and W < table_w[j]:
        j -= 1
    while j < n - 2 and W >= table_w[j + 1]:
        j += 1
    return j


@njit(parallel=True, cache=True, fastmath=True)
def _mc_kernel(kind, slope, cap, w_star, capacity, table_w, table_x, cutoff,
               W0s, mu, sigma, c, R, disc_rate, delta, lam, dt, n_steps, seed,
               antithetic, sample_tau, xtab, ftab, out_value, out_terminal, out_ruin):
    """Simulate all wealth levels in W0s per stream, sharing the draws.

    out arrays have shape (len(W0s), n_paths).  Sharing one normal per step
    across every level and its antithetic partner amortizes the dominant
    RNG cost and doubles as common random numbers across levels.
    """
    n_levels = W0s.shape[0]
    n_paths = out_value.shape[1]
    n_streams = n_paths // 2 if antithetic else n_paths
    sqdt = np.sqrt(dt)
    rate = delta if sample_tau else disc_rate
    ddt = np.exp(-rate * dt)
    mudt = mu * dt
    sigdt = sigma * sqdt
    cdt = c * dt
    hdt = 0.5 * dt
    one_m_r = 1.0 - R
    inv1mr = 1.0 / one_m_r
    is_half = R == 0.5
    is_table = kind == _POLICY_TABLE
    is_slope = kind == _POLICY_SLOPE
    w_lo = table_w[0]
    x_lo = table_x[0]
    n_sides = 2 if antithetic else 1
    c23 = np.uint64(23)
    c17 = np.uint64(17)
    c26 = np.uint64(26)
    c11 = np.uint64(11)
    c8 = np.uint64(8)
    cFF = np.uint64(0xFF)
    c1 = np.uint64(1)
    for i in prange(n_streams):
        s0, s1 = _stream_state(seed, i)
        tau_steps = n_steps
        tau_frac = 0.0
        if sample_tau:
            xa = s0
            ya = s1
            s0 = ya
            xa ^= xa << c23
            s1 = xa ^ ya ^ (xa >> c17) ^ (ya >> c26)
            uu = np.float64((s1 + ya) >> c11) * _INV_2_53
            if uu <= 0.0:
                uu = _INV_2_53
            tau = -np.log(uu) / lam
            if tau < n_steps * dt:
                tau_steps = int(tau / dt)
                tau_frac = tau - tau_steps * dt
        w = np.empty((n_levels, 2))
        acc = np.zeros((n_levels, 2))
        f_prev = np.empty((n_levels, 2))
        jcell = np.zeros((n_levels, 2), dtype=np.int64)
        alive = np.zeros((n_levels, 2), dtype=np.bool_)
        n_alive = 0
        for lv in range(n_levels):
            u0 = np.sqrt(W0s[lv]) * inv1mr if is_half else W0s[lv] ** one_m_r * inv1mr
            for side in range(n_sides):
                w[lv, side] = W0s[lv]
                f_prev[lv, side] = u0
                alive[lv, side] = True
                n_alive += 1
        disc = 1.0
        for _step in range(tau_steps):
            if n_alive == 0:
                break
            # one standard normal via the ziggurat over xorshift128+
            while True:
                xr = s0
                yr = s1
                s0 = yr
                xr ^= xr << c23
                s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
                u = s1 + yr
                li = np.int64(u & cFF)
                uf = np.float64(u >> c11) * _INV_2_53
                xx = uf * xtab[li]
                if xx < xtab[li + 1]:
                    zz = xx if (u >> c8) & c1 else -xx
                    break
                if li == 0:
                    done_tail = False
                    while not done_tail:
                        xr = s0
                        yr = s1
                        s0 = yr
                        xr ^= xr << c23
                        s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
                        u1 = np.float64((s1 + yr) >> c11) * _INV_2_53
                        xr = s0
                        yr = s1
                        s0 = yr
                        xr ^= xr << c23
                        s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
                        u2 = np.float64((s1 + yr) >> c11) * _INV_2_53
                        if u1 > 0.0 and u2 > 0.0:
                            xt = -np.log(u1) * INV_R_ZIG
                            yt = -np.log(u2)
                            if 2.0 * yt > xt * xt:
                                zz = (R_ZIG + xt) if (u >> c8) & c1 else -(R_ZIG + xt)
                                done_tail = True
                    break
                xr = s0
                yr = s1
                s0 = yr
                xr ^= xr << c23
                s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
                u2 = np.float64((s1 + yr) >> c11) * _INV_2_53
                if ftab[li] + u2 * (ftab[li + 1] - ftab[li]) < np.exp(-0.5 * xx * xx):
                    zz = xx if (u >> c8) & c1 else -xx
                    break
            disc *= ddt
            for lv in range(n_levels):
                for side in range(n_sides):
                    if not alive[lv, side]:
                        continue
                    ws = w[lv, side]
                    if is_table:
                        if ws >= w_star:
                            x = capacity
                        elif ws < cutoff:
                            x = 0.0
                        elif ws <= w_lo:
                            x = x_lo * ws / w_lo
                        else:
                            j = _table_seek(ws, table_w, jcell[lv, side])
                            jcell[lv, side] = j
                            frac = (ws - table_w[j]) / (table_w[j + 1] - table_w[j])
                            x = table_x[j] + (table_x[j + 1] - table_x[j]) * frac
                    elif is_slope:
                        x = slope * ws
                        if x > cap:
                            x = cap
                    else:
                        x = capacity
                    zs = zz if side == 0 else -zz
                    ws += x * (mudt + sigdt * zs) - cdt * ws
                    if ws <= 0.0:
                        ws = 0.0
                        alive[lv, side] = False
                        n_alive -= 1
                    w[lv, side] = ws
                    f = disc * (np.sqrt(ws) * inv1mr if is_half else ws**one_m_r * inv1mr)
                    acc[lv, side] += (f_prev[lv, side] + f) * hdt
                    f_prev[lv, side] = f
        for lv in range(n_levels):
            for side in range(n_sides):
                val = acc[lv, side]
                if sample_tau and tau_frac > 0.0:
                    val += f_prev[lv, side] * tau_frac
                idx = i + side * n_streams
                out_value[lv, idx] = val
                out_terminal[lv, idx] = w[lv, side]
                out_ruin[lv, idx] = 0.0 if alive[lv, side] else 1.0
    return 0


def _encode_policy(pol, p: ModelParams, W0: float, cutoff_frac: float):
    if isinstance(pol, FreeBoundarySolution):
        pol = optimal_policy(pol, p)
    if isinstance(pol, (int, float)):
        pol = PolicyFunction(kind="slope", w_star=math.inf, capacity=math.inf, slope=float(pol))
    if not isinstance(pol, PolicyFunction):
        raise ValidationError(f"cannot simulate policy of type {type(pol)!r}")
    dummy = np.array([1.0, 2.0])
    if pol.kind == "constant_dollar":
        return pol, (_POLICY_CONST, 0.0, 0.0, pol.w_star, pol.capacity, dummy, dummy, 0.0)
    if pol.kind in ("slope", "slope_capped"):
        return pol, (_POLICY_SLOPE, pol.slope, pol.cap, pol.w_star, pol.capacity, dummy, dummy, 0.0)
    table_w = np.ascontiguousarray(np.exp(pol.table_logw))
    cutoff = cutoff_frac * W0
    return pol, (_POLICY_TABLE, 0.0, 0.0, pol.w_star, pol.capacity,
                 table_w, np.ascontiguousarray(pol.table_x), cutoff)


def simulate_at_levels(pol, p: ModelParams, cfg: SimConfig, W0s) -> list[SimResult]:
    """Simulate the wealth SDE from several starting wealth levels at once.

    All levels (and their antithetic partners) consume the same per-stream
    draws, i.e. common random numbers across levels.  ``pol`` may be a
    FreeBoundarySolution, a PolicyFunction, or a bare float (an uncapped
    share of wealth).  Identical (seed, config, policy, levels) give
    bit-identical results.
    """
    validate_config(cfg, p)
    W0s = np.asarray([float(w) for w in W0s], dtype=float)
    if np.any(W0s <= 0.0):
        raise ValidationError("simulation requires W0 > 0")
    pol, enc = _encode_policy(pol, p, float(np.min(W0s)), cfg.near_zero_cutoff_frac)
    n_steps = int(round(cfg.horizon_cap / cfg.dt))
    n_levels = len(W0s)
    out_value = np.empty((n_levels, cfg.n_paths))
    out_terminal = np.empty((n_levels, cfg.n_paths))
    out_ruin = np.empty((n_levels, cfg.n_paths))
    _mc_kernel(*enc, W0s, p.mu, p.sigma, p.c, p.R, p.discount, p.delta, p.lambda_mort,
               cfg.dt, n_steps, cfg.seed, cfg.antithetic, cfg.sample_mortality,
               _ZIG_XTAB, _ZIG_FTAB, out_value, out_terminal, out_ruin)
    if not np.all(np.isfinite(out_value)):
        raise SimulationError("non-finite discounted utility encountered (step-size failure?)")

    results = []
    for lv in range(n_levels):
        values = out_value[lv]
        if cfg.antithetic:
            half = cfg.n_paths // 2
            pair_means = 0.5 * (values[:half] + values[half:])
            mc_value = float(np.mean(pair_means))
            std_error = float(np.std(pair_means, ddof=1) / math.sqrt(half)) if half > 1 else 0.0
        else:
            mc_value = float(np.mean(values))
            std_error = (
                float(np.std(values, ddof=1) / math.sqrt(cfg.n_paths)) if cfg.n_paths > 1 else 0.0
            )
        mean_terminal = float(np.mean(out_terminal[lv]))
        tail = _tail_estimate(pol, p, cfg, float(W0s[lv]), mean_terminal)
        grid = np.geomspace(0.1 * W0s[lv], 10.0 * W0s[lv], 13)
        results.append(
            SimResult(
                mc_value=mc_value,
                std_error=std_error,
                mean_terminal_wealth=mean_terminal,
                ruin_fraction=float(np.mean(out_ruin[lv])),
                instantaneous_stats=instantaneous_stats(pol, p, grid),
                tail_bound=tail,
                n_paths=cfg.n_paths,
                dt=cfg.dt,
                horizon_cap=cfg.horizon_cap,
                seed=cfg.seed,
                per_path=values,
            )
        )
    return results


def simulate_paths(pol, p: ModelParams, cfg: SimConfig, W0: float | None = None) -> SimResult:
    """Simulate the wealth SDE under a policy and estimate the value at W0."""
    return simulate_at_levels(pol, p, cfg, [W0 if W0 is not None else p.W0])[0]


def _tail_estimate(pol: PolicyFunction, p: ModelParams, cfg: SimConfig, W0: float, mean_terminal: float) -> float:
    """Size of the discounted-utility integral beyond the horizon cap.

    For a constant-share policy E[u(W_t)] grows at the exact exponential
    rate (1-R)(b mu - R sigma^2 b^2 / 2 - c), giving a closed-form tail.
    For capped policies the dispersion is bounded and u(mean terminal
    wealth) gives a tight scale.
    """
    rate = p.discount
    if pol.kind == "slope" and not math.isfinite(pol.cap):
        b = pol.slope
        growth = (1.0 - p.R) * (b * p.mu - 0.5 * p.R * p.sigma**2 * b**2 - p.c)
        gap = rate - growth
        if gap <= 0.0:
            return math.inf
        return float(crra_utility(W0, p.R)) * math.exp(-gap * cfg.horizon_cap) / gap
    return (
        math.exp(-rate * cfg.horizon_cap) / rate
        * float(crra_utility(max(mean_terminal, 0.0), p.R))
    )


def instantaneous_stats(pol, p: ModelParams, W_grid) -> np.ndarray:
    """Analytic per-year variance and stock covariance of portfolio returns.

    dW/W = (X/W)(mu dt + sigma dZ), so the instantaneous variance is
    (X/W)^2 sigma^2 and the covariance with the stock return is (X/W) sigma^2.
    Returns rows (W, variance, covariance).
    """
    if isinstance(pol, FreeBoundarySolution):
        pol = optimal_policy(pol, p)
    W_arr = np.asarray(W_grid, dtype=float)
    x = np.asarray(pol(W_arr), dtype=float)
    share = x / W_arr
    return np.column_stack([W_arr, (share * p.sigma) ** 2, share * p.sigma**2])


def policy_dominance_check(pol_a, pol_b, p: ModelParams, cfg: SimConfig, W0: float | None = None) -> dict:
    """Tournament of two policies under common random numbers.

    Returns the per-policy estimates plus the paired difference (a - b) and
    its standard error; ``dominates`` is True when a >= b within 3 SE.
    """
    res_a = simulate_paths(pol_a, p, cfg, W0)
    res_b = simulate_paths(pol_b, p, cfg, W0)
    diff = res_a.per_path - res_b.per_path
    if cfg.antithetic:
        half = cfg.n_paths // 2
        diff = 0.5 * (diff[:half] + diff[half:])
    mean_diff = float(np.mean(diff))
    se_diff = float(np.std(diff, ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else 0.0
    return {
        "value_a": res_a.mc_value,
        "value_b": res_b.mc_value,
        "mean_diff": mean_diff,
        "se_diff": se_diff,
        "dominates": mean_diff >= -3.0 * se_diff,
        "result_a": res_a,
        "result_b": res_b,
    }


def write_path_summary_csv(result: SimResult, path, metadata: dict | None = None) -> None:
    """Per-path discounted utilities for downstream diagnostics."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in (metadata or {}).items():
            fh.write(f"# {key} = {val}\n")
        fh.write("path,discounted_utility\n")
        for i, v in enumerate(result.per_path):
            fh.write(f"{i},{float(v)!r}\n")


def draw_normals(n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Standard normals from the engine's own generator, for validation."""
    out = np.empty(n)
    _draw_normals_kernel(n, seed, stream, _ZIG_XTAB, _ZIG_FTAB, out)
    return out


@njit(cache=True)
def _draw_normals_kernel(n, seed, stream, xtab, ftab, out):
    s0, s1 = _stream_state(seed, stream)
    c23 = np.uint64(23)
    c17 = np.uint64(17)
    c26 = np.uint64(26)
    c11 = np.uint64(11)
    c8 = np.uint64(8)
    cFF = np.uint64(0xFF)
    c1 = np.uint64(1)
    for k in range(n):
        while True:
            xr = s0
            yr = s1
            s0 = yr
            xr ^= xr << c23
            s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
            u = s1 + yr
            li = np.int64(u & cFF)
            uf = np.float64(u >> c11) * _INV_2_53
            xx = uf * xtab[li]
            if xx < xtab[li + 1]:
                out[k] = xx if (u >> c8) & c1 else -xx
                break
            if li == 0:
                done_tail = False
                while not done_tail:
                    xr = s0
                    yr = s1
                    s0 = yr
                    xr ^= xr << c23
                    s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
                    u1 = np.float64((s1 + yr) >> c11) * _INV_2_53
                    xr = s0
                    yr = s1
                    s0 = yr
                    xr ^= xr << c23
                    s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
                    u2 = np.float64((s1 + yr) >> c11) * _INV_2_53
                    if u1 > 0.0 and u2 > 0.0:
                        xt = -np.log(u1) * INV_R_ZIG
                        yt = -np.log(u2)
                        if 2.0 * yt > xt * xt:
                            out[k] = (R_ZIG + xt) if (u >> c8) & c1 else -(R_ZIG + xt)
                            done_tail = True
                break
            xr = s0
            yr = s1
            s0 = yr
            xr ^= xr << c23
            s1 = xr ^ yr ^ (xr >> c17) ^ (yr >> c26)
            u2 = np.float64((s1 + yr) >> c11) * _INV_2_53
            if ftab[li] + u2 * (ftab[li + 1] - ftab[li]) < np.exp(-0.5 * xx * xx):
                out[k] = xx if (u >> c8) & c1 else -xx
                break
