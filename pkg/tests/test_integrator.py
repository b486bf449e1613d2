import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from canard.errors import InvalidEpsilon
from canard.integrator import (
    DetectionMode,
    SolverOptions,
    Termination,
    Trajectory,
    detect_switch,
    integrate,
    summarize,
    sweep,
)
from canard.model import QuadraticCoefficients, SimulationWindow, classify, critical_manifold
from canard.slow_analysis import entry_exit_profile, reduced_solution, switch_times


def radau_reference(coeffs, window, eps, t_eval):
    c = coeffs

    def rhs(t, u):
        x, y = u
        return [x * (c.A + c.B * x + c.C * y), y * (c.D + c.E * y + c.F * x) / eps]

    sol = solve_ivp(rhs, (window.t0, window.T), [window.x0, window.y0], method="Radau",
                    t_eval=t_eval, rtol=1e-10, atol=1e-14)
    return sol.y


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_matches_implicit_reference(p1, eps):
    c, w = p1
    traj = integrate(c, w, eps)
    ref = radau_reference(c, w, eps, traj.t)
    np.testing.assert_allclose(traj.x, ref[0], rtol=1e-6)
    np.testing.assert_allclose(traj.y, ref[1], rtol=1e-5, atol=1e-12)


def test_natural_and_log_coordinates_agree(p1):
    c, w = p1
    log = integrate(c, w, 0.1)
    nat = integrate(c, w, 0.1, SolverOptions(use_log_fast_variable=False))
    assert nat.termination is Termination.REACHED_T
    assert log.x[-1] == pytest.approx(nat.x[-1], rel=1e-6)
    assert log.y[-1] == pytest.approx(nat.y[-1], rel=1e-5)


@pytest.mark.parametrize("eps", [0.2, 0.02, 0.005])
def test_positivity_and_reaching_t(p1, eps):
    traj = integrate(*p1, eps)
    assert traj.termination is Termination.REACHED_T
    assert traj.t[0] == 0.0 and traj.t[-1] == 1.0
    assert np.all(np.diff(traj.t) > 0)
    assert np.all(traj.x > 0) and np.all(traj.y > 0)
    np.testing.assert_allclose(traj.w, eps * np.log(traj.y), rtol=1e-12, atol=1e-300)


def test_max_step_bounds_sampling(p1):
    traj = integrate(*p1, 0.05)
    assert np.max(np.diff(traj.t)) <= 1.0 / 500 * (1 + 1e-12)


def test_deterministic(p1):
    a, b = integrate(*p1, 0.01), integrate(*p1, 0.01)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x) and np.array_equal(a.w, b.w)


@pytest.mark.parametrize("eps", [0.0, -0.1, 0.3, math.nan])
def test_invalid_epsilon(p1, eps):
    with pytest.raises(InvalidEpsilon):
        integrate(*p1, eps)


def test_domain_exit(p1):
    c, _ = p1
    traj = integrate(c, SimulationWindow(0, 1, 0.5, 0.5, M=0.9), 0.05)
    assert traj.termination is Termination.DOMAIN_EXIT
    assert traj.x[-1] > 0.9


def test_step_underflow(p1):
    traj = integrate(*p1, 0.05, SolverOptions(rel_tol=1e-14, abs_tol=1e-16, min_step=1e-3))
    assert traj.termination is Termination.STEP_UNDERFLOW


def test_solver_options_validated():
    with pytest.raises(ValueError):
        SolverOptions(rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_step=1e-14)


def test_x_stays_below_reduced_flow_before_switch(p1):
    c, w = p1
    red = reduced_solution(*c.reduced_rates(), w.x0)
    for eps in (0.05, 0.01):
        traj = integrate(c, w, eps)
        obs = detect_switch(traj, critical_manifold(c), classify(c, w))
        before = traj.t < obs.t_sw
        assert np.all(traj.x[before] <= red(traj.t[before]) + 1e-6)


@pytest.mark.parametrize("eps", [0.05, 0.02])
def test_upper_solution_bound(p1, eps):
    c, w = p1
    prof = entry_exit_profile(c, w)
    traj = integrate(c, w, eps)
    inside = (traj.t >= 0.05) & (traj.t <= prof.t_star - 0.05)
    log_bound = math.log(w.y0) + prof(traj.t[inside]) / eps + 1.0
    assert np.all(traj.w[inside] / eps <= log_bound)


def test_refinement_stability(p1):
    c, w = p1
    label = classify(c, w)
    m = critical_manifold(c)
    t_c, t_star = switch_times(c, w, label)
    coarse = integrate(c, w, 0.01)
    fine = integrate(c, w, 0.01, SolverOptions(rel_tol=5e-9, abs_tol=5e-11))
    a = detect_switch(coarse, m, label, predicted=t_star, t_c=t_c)
    b = detect_switch(fine, m, label, predicted=t_star, t_c=t_c)
    assert abs(a.t_sw - b.t_sw) < 1e-3


# -- detection on hand-made trajectories ------------------------------------------------


def _traj(t, x, y, eps=0.1):
    t, x, y = map(np.asarray, (t, x, y))
    return Trajectory(eps, t, x, y, eps * np.log(y))


def test_detect_rise_interpolates(p1):
    c, w = p1
    m, label = critical_manifold(c), classify(c, w)
    # phi(x) = x - 1; threshold 0.5 phi = 0.5 at x = 2
    t = [0.0, 1.0, 2.0]
    x = [2.0, 2.0, 2.0]
    y = [0.1, 0.3, 0.7]
    obs = detect_switch(_traj(t, x, y), m, label, predicted=1.0)
    assert obs.detection_mode is DetectionMode.RISE_TO_PHI
    assert obs.t_sw == pytest.approx(1.5)
    assert obs.abs_error == pytest.approx(0.5)


def test_detect_respects_crossing_gate(p1):
    c, w = p1
    m, label = critical_manifold(c), classify(c, w)
    t = [0.0, 1.0, 2.0, 3.0]
    x = [2.0, 2.0, 2.0, 2.0]
    y = [0.8, 0.2, 0.2, 0.9]
    assert detect_switch(_traj(t, x, y), m, label, t_c=1.5).t_sw == pytest.approx(2.0 + 3 / 7)


def test_detect_nothing(p1):
    c, w = p1
    obs = detect_switch(_traj([0, 1], [0.5, 0.6], [0.1, 0.1]), critical_manifold(c), classify(c, w))
    assert not obs.detected and math.isnan(obs.t_sw) and math.isnan(obs.abs_error)


def test_detect_immediate_crossing(p2):
    c, w = p2
    obs = detect_switch(_traj([0, 1, 2], [0.2, 0.4, 0.6], [0.5, 0.5, 0.5]),
                        critical_manifold(c), classify(c, w), predicted=1.4)
    assert obs.detection_mode is DetectionMode.FALL_TO_ZERO
    assert obs.t_sw == pytest.approx(1.5)


def test_theta_range(p1):
    c, w = p1
    with pytest.raises(ValueError):
        detect_switch(_traj([0], [0.5], [0.5]), critical_manifold(c), classify(c, w), theta=1.0)


# -- sweeps ------------------------------------------------------------------------------


def test_summarize_trend():
    from canard.integrator import SwitchObservation

    def obs(e):
        return SwitchObservation(0.1, 0.0, 0.5, 0.0, e, DetectionMode.RISE_TO_PHI)

    assert summarize([obs(0.2), obs(0.29), obs(0.1)]).trend_ok
    assert not summarize([obs(0.2), obs(0.31)]).trend_ok
    assert not summarize([obs(0.2), obs(math.nan)]).trend_ok


@pytest.mark.parametrize("eps", [[], [0.01, 0.05], [0.1, 0.1], [0.5, 0.1]])
def test_sweep_rejects_bad_epsilons(p1, eps):
    with pytest.raises(ValueError):
        sweep(*p1, classify(*p1), eps)


def test_sweep_is_order_independent_of_workers(p1):
    eps = [0.1, 0.05, 0.02]
    serial = sweep(*p1, classify(*p1), eps)
    threaded = sweep(*p1, classify(*p1), eps, workers=3)
    assert serial == threaded


def test_p2_sweep_tracks_crossing(p2):
    res = sweep(*p2, classify(*p2), [0.1, 0.02, 0.005])
    assert all(o.predicted == pytest.approx(3.0) for o in res.observations)
    assert res.summary.errors[-1] < res.summary.errors[0]


def test_member_stopped_before_switch_is_not_detected():
    # x leaves the guard box M = 0.9 before reaching psi = 1
    c = QuadraticCoefficients(1.0, 1.0, -1.0, -1.0, -1.0, 1.0)
    w = SimulationWindow(0, 1, 0.5, 0.5, M=0.9)
    res = sweep(c, w, classify(c, w), [0.1, 0.05])
    assert all(not o.detected for o in res.observations)
    assert not res.summary.trend_ok
