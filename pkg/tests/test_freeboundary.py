import json
import math

import numpy as np
import pytest

import riskcap as rc
from riskcap.closedform import all_safety_value, closed_form_value, merton_value
from riskcap.constrained import derivative_envelopes, v_constrained
from riskcap.errors import CandidateRejectedError, ValidationError
from riskcap.freeboundary import (
    all_safety_policy,
    constant_dollar_policy,
    hjb_residual,
    leverage_policy,
    merton_policy,
    myopic_capped_policy,
    optimal_policy,
    policy,
    policy_left_derivative,
    solution_summary,
    solve_free_boundary,
    unconstrained_demand,
    value_function,
    value_matching_residual,
    write_policy_table_csv,
    write_value_table_csv,
)
from riskcap.gode import v_unconstrained


def test_threshold_reproduces_reference_value(solved):
    assert abs(solved.w_star - 492_235.0) / 492_235.0 < 0.01


def test_threshold_exceeds_myopic_level(solved, derived):
    assert derived.w_L == pytest.approx(315_000.0)
    assert solved.w_star > derived.w_L


def test_residual_sign_structure(params, derived):
    # coarse scan: crashed orbits below the root, positive residuals above
    lo_entry = None
    hi_entry = None
    for w in np.geomspace(derived.w_L * 1.1, derived.w_L * 5.0, 9):
        try:
            r = value_matching_residual(float(w), params, derived)
            hi_entry = (w, r)
            if lo_entry is not None:
                break
        except CandidateRejectedError as exc:
            lo_entry = (w, exc.reason)
    assert lo_entry is not None and lo_entry[1] == "dove"
    assert hi_entry is not None and hi_entry[1] > 0.0


def test_residual_small_at_converged_root(params, solved):
    v_at_star = solved.gsol.value_offset
    assert abs(solved.value_matching_residual) <= 1e-8 * abs(v_at_star)


def test_residual_nonzero_at_myopic_threshold(params, derived):
    # pasting at w_L itself fails: either the orbit crashes or the values gap
    try:
        res = value_matching_residual(derived.w_L, params, derived)
        assert abs(res) > 1.0
    except CandidateRejectedError:
        pass


def test_threshold_increasing_in_capacity(params, solved, solved_half_L):
    _, fb_half = solved_half_L
    p_up = rc.example_params(L=1_050_000.0)
    fb_up = solve_free_boundary(p_up)
    assert fb_half.w_star < solved.w_star < fb_up.w_star


def test_pasting_is_smooth(params, solved):
    w = solved.w_star
    vl = v_unconstrained(w, solved.gsol, params)
    vr = v_constrained(w, solved.coef, params, solved.constants)
    assert abs(vl[0] - vr[0]) / abs(vr[0]) <= 1e-7
    assert abs(vl[1] - vr[1]) / abs(vr[1]) <= 1e-7
    assert abs(vl[2] - vr[2]) / abs(vr[2]) <= 1e-5


def test_value_function_dispatch_and_origin(params, solved):
    v0_, vp0, vpp0 = value_function(0.0, solved, params)
    assert v0_ == 0.0 and vp0 == math.inf and vpp0 == -math.inf
    # at W* exactly, the left branch is returned
    v_at = value_function(solved.w_star, solved, params)
    v_left = v_unconstrained(solved.w_star, solved.gsol, params)
    assert v_at == v_left
    with pytest.raises(ValidationError):
        value_function(-1.0, solved, params)


def test_value_ordering_between_closed_forms(params, solved):
    mert = merton_value(params)
    for w in np.geomspace(0.05 * solved.w_star, 20 * solved.w_star, 17):
        v = value_function(float(w), solved, params)[0]
        assert all_safety_value(float(w), params) < v < closed_form_value(mert, float(w), params)


def test_value_concave_both_sides(params, solved):
    for w in np.geomspace(1e-2 * solved.w_star, 30 * solved.w_star, 40):
        _, vp, vpp = value_function(float(w), solved, params)
        assert vp > 0.0 and vpp < 0.0


def test_region_dichotomy(params, solved):
    for w in np.geomspace(5e-3 * solved.w_star, 0.999 * solved.w_star, 25):
        assert unconstrained_demand(float(w), solved, params) < params.L
    for w in np.geomspace(1.001 * solved.w_star, 1e2 * solved.w_star, 25):
        assert unconstrained_demand(float(w), solved, params) >= params.L * (1 - 1e-9)


def test_policy_shape(params, solved):
    d = solved.constants
    assert policy(solved.w_star, solved, params) == params.L
    for w in (solved.w_star, 2 * solved.w_star, 1e8):
        assert policy(float(w), solved, params) == params.L
    grid = np.geomspace(1e-4 * solved.w_star, 1e2 * solved.w_star, 300)
    shares = np.array([policy(float(w), solved, params) / w for w in grid])
    assert np.all(np.diff(shares) <= 1e-10)
    assert np.all(shares <= d.merton_fraction * (1 + 1e-12))
    assert policy(0.0, solved, params) == 0.0


def test_policy_continuous_at_threshold(params, solved):
    just_below = policy(solved.w_star * (1 - 1e-9), solved, params)
    assert just_below == pytest.approx(params.L, rel=1e-6)


def test_policy_kink_at_threshold(params, solved):
    slope_left = policy_left_derivative(solved, params)
    assert abs(slope_left) > 0.1  # right derivative is 0: genuine kink
    # matches a one-sided finite difference of the policy itself
    h = solved.w_star * 1e-6
    fd = (policy(solved.w_star - h, solved, params) - policy(solved.w_star - 2 * h, solved, params)) / h
    assert slope_left == pytest.approx(fd, rel=1e-3)


def test_policy_approaches_unconstrained_share_at_small_wealth(params, solved):
    # the limit share is mu/(R sigma^2); convergence is a slow power of W,
    # so only a loose band is meaningful at 1e-4 W*
    d = solved.constants
    share = policy(1e-4 * solved.w_star, solved, params) / (1e-4 * solved.w_star)
    assert share < d.merton_fraction
    assert share == pytest.approx(d.merton_fraction, rel=0.10)


def test_policy_dominance_in_capacity(params, solved, solved_half_L):
    p_half, fb_half = solved_half_L
    for w in np.geomspace(1e4, 5e6, 30):
        x1 = policy(float(w), fb_half, p_half)
        x2 = policy(float(w), solved, params)
        assert x1 <= x2 * (1 + 1e-9)


def test_hjb_residual_small_everywhere(params, solved):
    grid = np.geomspace(1e-3 * solved.w_star, 1e2 * solved.w_star, 50)
    for w in grid:
        assert hjb_residual(float(w), solved, params) <= 1e-6


def test_hjb_interior_maximizer_matches_policy(params, solved):
    from riskcap.freeboundary import optimal_control

    for w in (0.2 * solved.w_star, 0.7 * solved.w_star):
        _, vp, vpp = value_function(float(w), solved, params)
        x_argmax = optimal_control(vp, vpp, params)
        assert x_argmax == pytest.approx(policy(float(w), solved, params), rel=1e-9)
    for w in (2 * solved.w_star, 10 * solved.w_star):
        _, vp, vpp = value_function(float(w), solved, params)
        assert optimal_control(vp, vpp, params) == params.L


def test_marginal_value_envelopes(params, solved):
    lo, hi = derivative_envelopes(params)
    for w in np.geomspace(1e-2 * solved.w_star, 50 * solved.w_star, 30):
        _, vp, _ = value_function(float(w), solved, params)
        assert lo * w ** (-params.R) <= vp <= hi * w ** (-params.R)


def test_policy_function_objects(params, solved):
    d = solved.constants
    pol = optimal_policy(solved, params)
    grid = np.array([1e3, 1e5, solved.w_star, 5e6])
    vec = pol(grid)
    for w, x in zip(grid, vec):
        assert x == pytest.approx(policy(float(w), solved, params), rel=1e-6)
    assert myopic_capped_policy(params)(1e4) == pytest.approx(d.merton_fraction * 1e4)
    assert myopic_capped_policy(params)(1e7) == params.L
    assert merton_policy(params)(1e7) == pytest.approx(d.merton_fraction * 1e7)
    assert all_safety_policy(params)(1e6) == 0.0
    assert constant_dollar_policy(params)(5.0) == params.L
    assert constant_dollar_policy(params)(0.0) == 0.0
    assert leverage_policy(params, 0.7)(2e6) == pytest.approx(1.4e6)


def test_solution_summary_round_trips_through_json(params, solved):
    payload = solution_summary(solved, params)
    text = json.dumps(payload)
    back = json.loads(text)
    assert back["w_star"] == solved.w_star
    assert back["constants"]["w_L"] == solved.constants.w_L
    assert back["params"]["lambda_mort"] == params.lambda_mort


def test_table_writers(tmp_path, params, solved):
    grid = np.geomspace(1e4, 2e6, 7)
    vpath = tmp_path / "value.csv"
    ppath = tmp_path / "policy.csv"
    write_value_table_csv(solved, params, grid, vpath, {"w_star": solved.w_star})
    write_policy_table_csv(solved, params, grid, ppath)
    vlines = vpath.read_text().splitlines()
    assert vlines[0].startswith("# w_star")
    assert vlines[1] == "W,V,dV,d2V"
    assert len(vlines) == 2 + len(grid)
    plines = ppath.read_text().splitlines()
    assert plines[0] == "W,X,X_over_W"
    row = plines[3].split(",")
    assert float(row[2]) == pytest.approx(float(row[1]) / float(row[0]))


def test_solver_validations():
    with pytest.raises(ValidationError):
        solve_free_boundary(rc.example_params(c=0.01))
    with pytest.raises(ValidationError):
        solve_free_boundary(rc.example_params(mu=0.0))
    with pytest.raises(ValidationError):
        solve_free_boundary(rc.example_params(lambda_mort=1e-9, delta=0.0))


def test_evaluation_at_exact_threshold_uses_left_branch(params, solved):
    # documented convention; both branches agree to solver accuracy anyway
    v_exact = value_function(solved.w_star, solved, params)[0]
    v_left = v_unconstrained(solved.w_star, solved.gsol, params)[0]
    assert v_exact == v_left
