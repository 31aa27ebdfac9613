"""Feedback law, coupled integration, shooting, and cost evaluation."""

import numpy as np
import pytest

from anthractl import (
    BangRegimeError,
    ConstantForcing,
    ControlSignal,
    CostSpec,
    GridMismatchError,
    HostState,
    ModelParams,
    SampledPath,
    SeasonalForcing,
    ShootingError,
    eval_adjoint_rhs,
    eval_cost_JT,
    integrate_adjoint,
    integrate_coupled,
    integrate_ode,
    optimal_u_feedback,
    shoot_p0,
    solve_feedback_cubic,
)


# ---------------------------------------------------------------------------
#  Cubic feedback law
# ---------------------------------------------------------------------------

def test_cubic_root_residual_and_range(rng):
    for _ in range(200):
        k = rng.uniform(0.05, 10.0)
        c3 = rng.uniform(0.0, 8.0 * k / 27.0 * 0.999)
        theta1 = rng.uniform(0.05, 0.95)
        w3 = solve_feedback_cubic(c3, k, theta1)
        assert 1.0 <= w3 <= min(1.5, 1.0 / (1.0 - theta1)) + 1e-12
        if w3 < min(1.5, 1.0 / (1.0 - theta1)):  # interior root: residual check
            assert abs(c3 * w3**3 - 2.0 * k * w3 + 2.0 * k) < 1e-10


def test_cubic_threshold_root_is_three_halves():
    # Substitution at the exact saturation threshold c3 = 8k/27:
    # g(3/2) = (27/8)c3 - 3k + 2k = k - k = 0, identically in k.
    for k in (0.3, 1.0, 4.7):
        c3 = 8.0 * k / 27.0
        assert abs(c3 * 1.5**3 - 2.0 * k * 1.5 + 2.0 * k) < 1e-15 * k
        # g'(3/2) = 0 at the threshold (double root), so a relative delta in
        # c3 moves the root by O(sqrt(delta)); 1e-12 below gives ~1e-6 slack.
        w3 = solve_feedback_cubic(c3 * (1.0 - 1e-12), k)
        assert w3 == pytest.approx(1.5, abs=1e-5)


def test_cubic_bang_regime_raises():
    with pytest.raises(BangRegimeError):
        solve_feedback_cubic(8.0 / 27.0, 1.0)  # exactly at the threshold
    with pytest.raises(BangRegimeError):
        solve_feedback_cubic(1.0, 1.0)


def test_cubic_zero_pressure_gives_unit_root():
    # c3 = 0: g(w) = 2k(1 - w), root w = 1, i.e. u = 0.
    assert solve_feedback_cubic(0.0, 2.0) == pytest.approx(1.0, abs=1e-12)
    assert optimal_u_feedback(0.0, 0.5, 0.5, 0.6, 1.0) == 0.0


def test_feedback_saturates_and_is_monotone_in_pressure():
    theta1, k = 0.6, 1.0
    us = [optimal_u_feedback(a, 0.8, 0.9, theta1, k) for a in np.linspace(0.0, 12.0, 40)]
    assert us[0] == 0.0
    assert us[-1] == 1.0
    assert all(b >= a - 1e-12 for a, b in zip(us, us[1:]))


def test_feedback_discontinuity_for_large_theta1():
    # theta1 > 1/3: u jumps from (interior cap) to 1 across the threshold.
    theta1, k, theta, p = 0.6, 1.0, 0.9, 0.9
    c3_star = 8.0 * k / 27.0
    alpha_star = c3_star / (theta1**2 * theta * p)
    below = optimal_u_feedback(alpha_star * (1.0 - 1e-9), theta, p, theta1, k)
    above = optimal_u_feedback(alpha_star * (1.0 + 1e-9), theta, p, theta1, k)
    assert above == 1.0
    # interior branch tops out at u = (3/2-1)/(theta1*3/2) = 1/(3*theta1) = 5/9;
    # the root is double at the threshold, so 1e-9 below lands within ~1e-4
    assert below == pytest.approx(1.0 / (3.0 * theta1), abs=1e-4)
    assert above - below > 0.4  # genuine jump


def test_adjoint_rhs_value():
    # dp/dt = alpha*p/(1-theta1*u) - 2*theta
    assert eval_adjoint_rhs(0.0, 2.0, 0.25, 0.5, 3.0, 0.6) == \
        pytest.approx(3.0 * 2.0 / 0.7 - 0.5)


# ---------------------------------------------------------------------------
#  Coupled integration
# ---------------------------------------------------------------------------

def test_coupled_feedback_consistency(season_params, unit_cost):
    th, p, u = integrate_coupled(0.76, 0.2, season_params, unit_cost, T=1.0, dt=1e-3)
    # stored u must replay the feedback law at the stored (theta, p) nodes
    alpha = season_params.alpha
    for i in range(0, len(th.times), 97):
        expect = optimal_u_feedback(alpha(th.times[i], 0.0), th.values[i],
                                    p.values[i], season_params.theta1, unit_cost.k)
        assert u.values[i] == pytest.approx(expect, abs=1e-12)


def test_coupled_terminal_map_is_continuous(season_params, unit_cost):
    # Event location keeps p(T) continuous in p0 even though the feedback
    # law jumps; without it the map is a staircase and shooting stalls.
    p0s = np.linspace(0.7619, 0.7621, 9)
    pT = [integrate_coupled(p0, 0.2, season_params, unit_cost, 1.0, 1e-3)[1].values[-1]
          for p0 in p0s]
    gaps = np.abs(np.diff(pT))
    assert np.max(gaps) < 5e-4  # smooth variation across the switch region


def test_coupled_rejects_state_dependent_alpha(unit_cost):
    p = ModelParams.with_default_forcings(theta1=0.5, alpha=1.0)
    object.__setattr__(p, "alpha", lambda t, th: 1.0 + th)
    with pytest.raises(ValueError, match="time only"):
        integrate_coupled(0.5, 0.2, p, unit_cost, T=1.0, dt=0.01)


def test_integrate_adjoint_reverses_forward(season_params, unit_cost):
    # forward state run under fixed u, then backward reconstruction
    u_const = 0.3
    traj = integrate_ode(season_params, u_const, HostState(0.2, 0.5, 0.0),
                         T=1.0, dt=1e-3)
    th_b, p_b = integrate_adjoint(float(traj.theta[-1]), season_params,
                                  unit_cost, u_const, 0.0, 1.0, 1e-3)
    assert th_b.values[0] == pytest.approx(0.2, abs=1e-9)
    assert p_b.values[-1] == pytest.approx(1.0)  # f(theta)=theta => f'=1


# ---------------------------------------------------------------------------
#  Shooting
# ---------------------------------------------------------------------------

def test_shoot_low_initial_inhibition(season_params, unit_cost):
    sol = shoot_p0(0.2, season_params, unit_cost, T=1.0, dt=1e-3)
    assert sol.residual < 1e-8
    assert sol.p0 == pytest.approx(0.7619851106, abs=1e-6)
    assert sol.cost == pytest.approx(0.7221961518, abs=1e-6)
    assert np.all(sol.control.values >= 0.0) and np.all(sol.control.values <= 1.0)


def test_shoot_high_initial_inhibition(season_params, unit_cost):
    sol = shoot_p0(0.5, season_params, unit_cost, T=1.0, dt=1e-3)
    assert sol.residual < 1e-8
    assert sol.p0 == pytest.approx(0.7308572096, abs=1e-6)
    assert sol.cost == pytest.approx(0.9324979805, abs=1e-6)


def test_shoot_reports_best_on_budget_exhaustion(season_params, unit_cost):
    with pytest.raises(ShootingError) as err:
        shoot_p0(0.2, season_params, unit_cost, T=1.0, dt=1e-3, max_iter=3)
    assert err.value.best_residual > 0.0
    assert 0.0 <= err.value.best_p0 <= 1.0


def test_shoot_constant_alpha_zero_control():
    # alpha=0: no infection pressure, optimal control is u=0 everywhere and
    # theta stays put; p(T)=f'(theta)=1.
    p = ModelParams.with_default_forcings(theta1=0.5, alpha=0.0)
    sol = shoot_p0(0.3, p, CostSpec(k=1.0), T=1.0, dt=1e-3)
    assert np.max(sol.control.values) == 0.0
    assert sol.theta_path.values[-1] == pytest.approx(0.3, abs=1e-12)


# ---------------------------------------------------------------------------
#  Cost evaluation
# ---------------------------------------------------------------------------

def test_cost_hand_value():
    times = np.linspace(0.0, 1.0, 1001)
    u = ControlSignal(times=times, values=np.full(1001, 0.5))
    th = SampledPath(times=times, values=np.full(1001, 0.2))
    # integral(k*0.25 + 0.04) dt + f(0.2) = 2*0.25 + 0.04 + 0.2
    cost = CostSpec(k=2.0)
    assert eval_cost_JT(u, th, cost, 1e-3) == pytest.approx(0.74, abs=1e-12)


def test_cost_terminal_override():
    times = np.linspace(0.0, 1.0, 11)
    u = ControlSignal(times=times, values=np.zeros(11))
    th = SampledPath(times=times, values=np.full(11, 0.4))
    cost = CostSpec(k=1.0, terminal_f=lambda th_: 10.0 * th_,
                    terminal_f_prime=lambda th_: 10.0)
    val = eval_cost_JT(u, th, cost, 0.1)
    assert val == pytest.approx(0.16 + 4.0, abs=1e-12)


def test_cost_grid_mismatch_raises():
    u = ControlSignal(times=np.linspace(0.0, 1.0, 11), values=np.zeros(11))
    th = SampledPath(times=np.linspace(0.0, 1.0, 21), values=np.zeros(21))
    with pytest.raises(GridMismatchError):
        eval_cost_JT(u, th, CostSpec(k=1.0), 0.1)
    th2 = SampledPath(times=np.linspace(0.0, 1.0, 11), values=np.zeros(11))
    with pytest.raises(GridMismatchError):
        eval_cost_JT(u, th2, CostSpec(k=1.0), 0.05)  # wrong declared dt


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec(k=0.0)
    with pytest.raises(ValueError):
        CostSpec(k=-1.0)
