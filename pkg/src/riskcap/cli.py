"""Command-line surface: solve, tabulate, simulate, compare, figure data.

Every command reads a flat key=value parameters file, applies --set
overrides, writes its outputs under --out, and echoes the effective
configuration into each output's metadata.  Exit codes: 0 success, 2
parameter validation, 3 solver failure, 4 simulation failure.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .closedform import all_safety_value, closed_form_value, leverage_value, merton_value
from .errors import (
    CandidateRejectedError,
    NonConvergenceError,
    SimulationError,
    SolverError,
    ValidationError,
)
from .freeboundary import (
    SolverConfig,
    leverage_policy,
    optimal_policy,
    policy,
    solution_summary,
    solve_free_boundary,
)
from .model import ModelParams, load_params, params_to_dict
from .sim import SimConfig, instantaneous_stats, simulate_paths, write_path_summary_csv

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_SIMULATION = 0, 2, 3, 4

_SOLVER_KEYS = {
    "solver.rtol": ("rtol", float),
    "solver.atol": ("atol", float),
    "solver.eps_start_factor": ("eps_start_factor", float),
    "solver.n_grid": ("n_grid", int),
    "solver.scan_points": ("scan_points", int),
    "solver.root_rtol": ("root_rtol", float),
    "solver.gate_rel": ("gate_rel", float),
}
_SIM_KEYS = {
    "sim.n_paths": ("n_paths", int),
    "sim.dt": ("dt", float),
    "sim.horizon_cap": ("horizon_cap", float),
    "sim.seed": ("seed", int),
    "sim.antithetic": ("antithetic", lambda s: s.lower() in ("1", "true", "yes")),
    "sim.sample_mortality": ("sample_mortality", lambda s: s.lower() in ("1", "true", "yes")),
}
_MODEL_KEYS = {"mu", "sigma", "lambda", "delta", "c", "R", "K", "alpha", "L", "W0"}
_COMPARE_KEYS = {"compare.b": ("b", float)}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="riskcap",
        description="Retirement portfolio choice under a dollar risk-capacity cap.",
    )
    ap.add_argument("command", choices=["solve", "policy-table", "value-table", "simulate", "compare", "figures"])
    ap.add_argument("--params", required=True, help="flat key=value parameters file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--format", choices=["csv", "json"], default="csv", help="table output format")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a model/solver/sim key (repeatable)")
    ap.add_argument("--seed", type=int, default=None, help="simulation seed override")
    return ap


def _apply_overrides(overrides, p: ModelParams, solver_cfg: SolverConfig, sim_cfg: SimConfig, extra: dict):
    model_over: dict[str, float] = {}
    ode_over: dict = {}
    solver_over: dict = {}
    sim_over: dict = {}
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _MODEL_KEYS and key not in _SOLVER_KEYS and key not in _SIM_KEYS and key not in _COMPARE_KEYS:
            raise ValidationError(f"unknown --set key {key!r}")
        try:
            if key in _MODEL_KEYS:
                model_over["lambda_mort" if key == "lambda" else key] = float(val)
            elif key in _SOLVER_KEYS:
                name, conv = _SOLVER_KEYS[key]
                target = ode_over if name in ("rtol", "atol", "eps_start_factor", "n_grid") else solver_over
                target[name] = conv(val)
            elif key in _SIM_KEYS:
                name, conv = _SIM_KEYS[key]
                sim_over[name] = conv(val)
            else:
                name, conv = _COMPARE_KEYS[key]
                extra[name] = conv(val)
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"bad value for --set {key}: {val!r}") from exc
    if model_over:
        p = dataclasses.replace(p, **model_over)
    if ode_over:
        solver_cfg = dataclasses.replace(solver_cfg, ode=dataclasses.replace(solver_cfg.ode, **ode_over))
    if solver_over:
        solver_cfg = dataclasses.replace(solver_cfg, **solver_over)
    if sim_over:
        sim_cfg = dataclasses.replace(sim_cfg, **sim_over)
    return p, solver_cfg, sim_cfg


def _metadata(p: ModelParams, sim_cfg: SimConfig | None = None, **extra) -> dict:
    md = dict(params_to_dict(p))
    if sim_cfg is not None:
        md.update({f"sim_{k}": v for k, v in dataclasses.asdict(sim_cfg).items()})
    md.update(extra)
    return md


def _write_table(path_base: Path, fmt: str, header: list[str], rows, metadata: dict):
    if fmt == "json":
        path = path_base.with_suffix(".json")
        payload = {"metadata": metadata, "columns": header, "rows": [[float(v) for v in r] for r in rows]}
        path.write_text(json.dumps(payload, indent=2))
    else:
        path = path_base.with_suffix(".csv")
        with open(path, "w", encoding="utf-8") as fh:
            for key, val in metadata.items():
                fh.write(f"# {key} = {val}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        p = load_params(args.params)
        solver_cfg = SolverConfig()
        sim_cfg = SimConfig()
        extra: dict = {}
        p, solver_cfg, sim_cfg = _apply_overrides(args.set, p, solver_cfg, sim_cfg, extra)
        if args.seed is not None:
            sim_cfg = dataclasses.replace(sim_cfg, seed=args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _dispatch(args.command, args.format, p, solver_cfg, sim_cfg, extra, out_dir)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, "validation", exc)
    except (SolverError, CandidateRejectedError, NonConvergenceError) as exc:
        return _fail(EXIT_SOLVER, "solver", exc)
    except SimulationError as exc:
        return _fail(EXIT_SIMULATION, "simulation", exc)


def _fail(code: int, kind: str, exc: Exception) -> int:
    record = {"error": kind, "exit_code": code, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    return code


def _dispatch(command, fmt, p, solver_cfg, sim_cfg, extra, out_dir: Path) -> int:
    if command == "solve":
        return _cmd_solve(p, solver_cfg, out_dir)
    if command == "value-table":
        return _cmd_value_table(p, solver_cfg, fmt, out_dir)
    if command == "policy-table":
        return _cmd_policy_table(p, solver_cfg, fmt, out_dir)
    if command == "simulate":
        return _cmd_simulate(p, solver_cfg, sim_cfg, out_dir)
    if command == "compare":
        return _cmd_compare(p, solver_cfg, sim_cfg, extra, out_dir)
    if command == "figures":
        return _cmd_figures(p, solver_cfg, fmt, out_dir)
    raise ValidationError(f"unknown command {command!r}")


def _cmd_solve(p, solver_cfg, out_dir: Path) -> int:
    fb = solve_free_boundary(p, solver_cfg)
    summary = solution_summary(fb, p)
    path = out_dir / "solution.json"
    path.write_text(json.dumps(summary, indent=2))
    print(f"W* = {fb.w_star:.6f}  (wrote {path})")
    return EXIT_OK


def _default_grid(p: ModelParams, fb) -> np.ndarray:
    return np.geomspace(1e-3 * fb.w_star, 1e2 * fb.w_star, 241)


def _cmd_value_table(p, solver_cfg, fmt, out_dir: Path) -> int:
    fb = solve_free_boundary(p, solver_cfg)
    from .freeboundary import value_function

    grid = _default_grid(p, fb)
    rows = []
    for w in grid:
        v, vp, vpp = value_function(float(w), fb, p)
        rows.append((w, v, vp, vpp))
    path = _write_table(out_dir / "value_table", fmt, ["W", "V", "dV", "d2V"],
                        rows, _metadata(p, w_star=fb.w_star))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_policy_table(p, solver_cfg, fmt, out_dir: Path) -> int:
    fb = solve_free_boundary(p, solver_cfg)
    grid = _default_grid(p, fb)
    rows = []
    for w in grid:
        x = policy(float(w), fb, p)
        rows.append((w, x, x / w))
    path = _write_table(out_dir / "policy_table", fmt, ["W", "X", "X_over_W"],
                        rows, _metadata(p, w_star=fb.w_star))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_simulate(p, solver_cfg, sim_cfg, out_dir: Path) -> int:
    fb = solve_free_boundary(p, solver_cfg)
    result = simulate_paths(fb, p, sim_cfg)
    payload = {
        "mc_value": result.mc_value,
        "std_error": result.std_error,
        "mean_terminal_wealth": result.mean_terminal_wealth,
        "ruin_fraction": result.ruin_fraction,
        "tail_bound": result.tail_bound,
        "n_paths": result.n_paths,
        "dt": result.dt,
        "horizon_cap": result.horizon_cap,
        "seed": result.seed,
        "w_star": fb.w_star,
        "instantaneous_stats": result.instantaneous_stats.tolist(),
        "params": params_to_dict(p),
    }
    path = out_dir / "sim_result.json"
    path.write_text(json.dumps(payload, indent=2))
    write_path_summary_csv(result, out_dir / "path_summary.csv", _metadata(p, sim_cfg))
    print(f"MC value = {result.mc_value:.6f} +- {result.std_error:.6f}  (wrote {path})")
    return EXIT_OK


def _cmd_compare(p, solver_cfg, sim_cfg, extra, out_dir: Path) -> int:
    b = extra.get("b", 0.7)
    fb = solve_free_boundary(p, solver_cfg)
    from .freeboundary import value_function

    mert = merton_value(p)
    lev = leverage_value(p, b)
    v_opt = value_function(p.W0, fb, p)[0]
    analytic = {
        "all_safety": float(all_safety_value(p.W0, p)),
        "leverage": float(closed_form_value(lev, p.W0, p)),
        "merton": float(closed_form_value(mert, p.W0, p)),
        "optimal_capacity": float(v_opt),
    }
    policies = {
        "all_safety": 0.0,
        "leverage": leverage_policy(p, b),
        "merton": mert.policy_slope,
        "optimal_capacity": optimal_policy(fb, p),
    }
    mc = {}
    for name, pol in policies.items():
        res = simulate_paths(pol, p, sim_cfg)
        mc[name] = {
            "value": res.mc_value,
            "std_error": res.std_error,
            "horizon_tail": res.tail_bound,
        }
    checks = []
    ok_order = analytic["all_safety"] <= analytic["leverage"] <= analytic["merton"]
    checks.append(("ordering all_safety <= leverage <= merton", ok_order))
    ok_nest = analytic["all_safety"] <= analytic["optimal_capacity"] <= analytic["merton"]
    checks.append(("ordering all_safety <= optimal <= merton", ok_nest))
    for name in analytic:
        # the simulation stops at the horizon cap, so add back the analytic
        # tail of the discounted-utility integral before comparing
        diff = abs(mc[name]["value"] + mc[name]["horizon_tail"] - analytic[name])
        ok = diff <= 3.0 * mc[name]["std_error"] + 1e-4 * abs(analytic[name])
        checks.append((f"mc matches analytic: {name}", ok))
    grid = np.geomspace(0.25 * p.W0, 20.0 * p.W0, 9)
    cov_opt = instantaneous_stats(optimal_policy(fb, p), p, grid)[:, 2]
    cov_lev = instantaneous_stats(leverage_policy(p, b), p, grid)[:, 2]
    checks.append(("leverage covariance flat", bool(np.allclose(cov_lev, cov_lev[0], rtol=1e-12))))
    checks.append(("optimal covariance decaying", bool(np.all(np.diff(cov_opt) < 0.0))))

    payload = {
        "b": b,
        "w_star": fb.w_star,
        "analytic": analytic,
        "monte_carlo": mc,
        "covariance_grid": grid.tolist(),
        "covariance_optimal": cov_opt.tolist(),
        "covariance_leverage": cov_lev.tolist(),
        "checks": [{"name": n, "pass": bool(okv)} for n, okv in checks],
        "params": params_to_dict(p),
    }
    path = out_dir / "comparison.json"
    path.write_text(json.dumps(payload, indent=2))
    for name, okv in checks:
        print(f"{'PASS' if okv else 'FAIL'}  {name}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_figures(p, solver_cfg, fmt, out_dir: Path) -> int:
    fb = solve_free_boundary(p, solver_cfg)
    d = fb.constants
    md = _metadata(p, w_star=fb.w_star)

    rows1 = list(zip(fb.gsol.grid_g, fb.gsol.grid_G))
    _write_table(out_dir / "fig1", "csv", ["g", "G"], rows1, md)

    grid = np.linspace(0.0, 2.0 * p.W0, 201)
    rows2, rows3 = [], []
    bpc_slope = 0.5 * d.merton_fraction
    for w in grid:
        x_model = policy(float(w), fb, p)
        x_capped = min(d.merton_fraction * w, p.L)
        x_bpc = bpc_slope * w
        rows2.append((w, x_model, x_capped, x_bpc))
        if w > 0.0:
            rows3.append((w, x_model / w, x_capped / w, x_bpc / w))
    _write_table(out_dir / "fig2", "csv", ["W", "X_model", "X_merton_capped_benchmark", "X_bpc"], rows2, md)
    _write_table(out_dir / "fig3", "csv", ["W", "share_model", "share_merton_capped", "share_bpc"], rows3, md)

    factors = (0.5, 1.0, 1.5)
    fbs = [fb if f == 1.0 else solve_free_boundary(dataclasses.replace(p, L=f * p.L), solver_cfg) for f in factors]
    rows4 = []
    for w in grid:
        row = [w]
        for f, fbx in zip(factors, fbs):
            px = dataclasses.replace(p, L=f * p.L)
            row.append(policy(float(w), fbx, px))
        rows4.append(tuple(row))
    md4 = dict(md)
    md4.update({f"L_{i+1}": f * p.L for i, f in enumerate(factors)})
    _write_table(out_dir / "fig4", "csv", ["W", "X_L1", "X_L2", "X_L3"], rows4, md4)
    print(f"wrote fig1..fig4 under {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
