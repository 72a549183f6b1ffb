import math

import numpy as np
import pytest

from convoylat.vehicle_model import (ActuatorParams, DivergenceError,
                                     GroundState, LateralState,
                                     SingularSpeedError, VehicleParams,
                                     actuator_derivatives, lateral_derivatives,
                                     mkz_actuator, mkz_params, step,
                                     wrap_angle)


@pytest.fixture
def params():
    return mkz_params()


@pytest.fixture
def act():
    return mkz_actuator()


def lateral_matrices(p, v):
    """Independent assembly of the 4-state error dynamics from the
    mass/damping/stiffness matrix form (oracle for lateral_derivatives)."""
    m_mat = np.diag([p.m, p.i_z])
    c_mat = np.array([
        [(p.c_f + p.c_r) / v, (p.a * p.c_f - p.b * p.c_r) / v],
        [(p.a * p.c_f - p.b * p.c_r) / v,
         (p.a ** 2 * p.c_f + p.b ** 2 * p.c_r) / v],
    ])
    l_mat = np.array([
        [0.0, -(p.c_f + p.c_r)],
        [0.0, -(p.a * p.c_f - p.b * p.c_r)],
    ])
    b_vec = np.array([1.0, p.a])
    f_vec = np.array([p.m * v * v + (p.a * p.c_f - p.b * p.c_r),
                      p.a ** 2 * p.c_f + p.b ** 2 * p.c_r])
    minv = np.linalg.inv(m_mat)
    # state (e, e', te, te'): x'' = -Minv C x' - Minv L x + Minv B cf d - Minv F k
    a_lat = np.zeros((4, 4))
    a_lat[0, 1] = 1.0
    a_lat[2, 3] = 1.0
    a_lat[np.ix_([1, 3], [0, 2])] = -minv @ l_mat
    a_lat[np.ix_([1, 3], [1, 3])] = -minv @ c_mat
    b_lat = np.zeros(4)
    b_lat[[1, 3]] = minv @ b_vec * p.c_f
    f_lat = np.zeros(4)
    f_lat[[1, 3]] = -minv @ f_vec
    return a_lat, b_lat, f_lat


def test_zero_state_is_equilibrium(params):
    state = LateralState()
    d = lateral_derivatives(state, 30.0, 0.0, 0.0, params)
    assert d == (0.0, 0.0, 0.0, 0.0)


def test_curvature_disturbance_only(params):
    state = LateralState()
    d = lateral_derivatives(state, 30.0, 1.0 / 500.0, 0.0, params)
    expected_e = -(params.m * 900.0 + params.a * params.c_f
                   - params.b * params.c_r) / params.m / 500.0
    expected_te = -(params.a ** 2 * params.c_f
                    + params.b ** 2 * params.c_r) / params.i_z / 500.0
    assert d[1] == pytest.approx(expected_e, rel=1e-12)
    assert d[3] == pytest.approx(expected_te, rel=1e-12)
    assert d[0] == 0.0 and d[2] == 0.0


def test_derivatives_match_matrix_assembly(params):
    rng = np.random.default_rng(42)
    a_lat, b_lat, f_lat = lateral_matrices(params, 30.0)
    for _ in range(50):
        x = rng.standard_normal(4) * [1.0, 2.0, 0.3, 0.5]
        delta, kappa = rng.uniform(-0.1, 0.1), rng.uniform(-1 / 300, 1 / 300)
        state = LateralState(e_lat=x[0], e_lat_dot=x[1],
                             theta_err=x[2], theta_err_dot=x[3])
        got = np.array(lateral_derivatives(state, 30.0, kappa, delta, params))
        want = a_lat @ x + b_lat * delta + f_lat * kappa
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)


def test_low_speed_raises(params):
    with pytest.raises(SingularSpeedError):
        lateral_derivatives(LateralState(), 0.5, 0.0, 0.0, params)


def test_actuator_steady_state(act):
    assert actuator_derivatives((0.07, 0.0), 0.07, act) == (0.0, 0.0)


def _simulate_actuator(act, delta_c, t_end, dt=1e-4):
    eta = (0.0, 0.0)
    trace = []
    t = 0.0
    while t < t_end:
        k1 = actuator_derivatives(eta, delta_c, act)
        e2 = (eta[0] + 0.5 * dt * k1[0], eta[1] + 0.5 * dt * k1[1])
        k2 = actuator_derivatives(e2, delta_c, act)
        e3 = (eta[0] + 0.5 * dt * k2[0], eta[1] + 0.5 * dt * k2[1])
        k3 = actuator_derivatives(e3, delta_c, act)
        e4 = (eta[0] + dt * k3[0], eta[1] + dt * k3[1])
        k4 = actuator_derivatives(e4, delta_c, act)
        eta = (eta[0] + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
               eta[1] + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
        trace.append(eta[0])
        t += dt
    return np.array(trace)


def test_actuator_step_overshoot(act):
    # standard second-order overshoot exp(-pi zeta / sqrt(1 - zeta^2))
    expected = math.exp(-math.pi * act.zeta / math.sqrt(1 - act.zeta ** 2))
    trace = _simulate_actuator(act, 1.0, 1.5)
    assert trace.max() - 1.0 == pytest.approx(expected, abs=1e-3)


def test_actuator_critically_damped_no_overshoot():
    trace = _simulate_actuator(ActuatorParams(zeta=1.0, omega_n=1.0), 1.0, 30.0)
    assert trace.max() <= 1.0 + 1e-9
    assert trace[-1] == pytest.approx(1.0, abs=1e-6)  # unit DC gain


def test_actuator_impulse_energy_finite(act):
    # impulse response decays; its energy converges
    dt = 1e-4
    eta = (0.0, 1.0)  # unit impulse through the rate state
    energy = 0.0
    for _ in range(200000):
        k1 = actuator_derivatives(eta, 0.0, act)
        eta = (eta[0] + dt * k1[0], eta[1] + dt * k1[1])
        energy += eta[0] ** 2 * dt
    assert abs(eta[0]) < 1e-12
    assert math.isfinite(energy) and energy > 0.0


def test_straight_advance(params, act):
    g = GroundState(x=0.0, y=0.0, theta=0.0, theta_dot=0.0, v_x=30.0)
    g2, _ = step(g, LateralState(), 0.0, 0.0, 0.001, params, act, n_steps=1000)
    assert g2.x == pytest.approx(30.0, abs=1e-9)
    assert g2.y == 0.0
    assert g2.theta == 0.0


def test_steady_state_cornering_radius(params, act):
    # constant command equal to the steady cornering steer for R = 500
    r_target, v = 500.0, 30.0
    d_ff = (params.wheelbase + params.k_sg * v * v) / r_target
    g = GroundState(v_x=v)
    g, _ = step(g, LateralState(), d_ff, 1.0 / r_target, 0.001, params, act,
                n_steps=30000)
    r_measured = v / g.theta_dot
    assert abs(r_measured - r_target) / r_target < 0.01


def test_step_convergence_with_dt(params, act):
    # halving dt moves the 30 s endpoint by < 1e-6 m
    def endpoint(dt, n):
        g = GroundState(v_x=30.0)
        g, _ = step(g, LateralState(), 0.01, 0.0, dt, params, act, n_steps=n)
        return np.array([g.x, g.y])

    e1 = endpoint(0.001, 30000)
    e2 = endpoint(0.0005, 60000)
    assert np.linalg.norm(e1 - e2) < 1e-6


def test_rk4_order_richardson(params, act):
    # endpoint error scales ~dt^4 over a fixed 2 s cornering scenario
    def endpoint(dt):
        g = GroundState(v_x=30.0)
        l = LateralState()
        g, l = step(g, l, 0.02, 1.0 / 500.0, dt, params, act,
                    n_steps=round(2.0 / dt))
        return np.array([g.x, g.y, g.theta, g.v_y, l.delta_f])

    ref = endpoint(0.0005)
    errs = [np.linalg.norm(endpoint(dt) - ref) for dt in (0.008, 0.004, 0.002)]
    order1 = math.log2(errs[0] / errs[1])
    order2 = math.log2(errs[1] / errs[2])
    assert 3.3 < order1 < 4.7
    assert 3.3 < order2 < 4.7


def test_homogeneous_equilibrium(params, act):
    g = GroundState(v_x=25.0)
    l = LateralState()
    g, l = step(g, l, 0.0, 0.0, 0.001, params, act, n_steps=5000)
    assert l.e_lat == 0.0 and l.theta_err == 0.0
    assert g.y == 0.0 and g.theta == 0.0


def test_lateral_charpoly_matches_openloop(params):
    # char poly of the assembled 4-state matrix == monic open-loop quartic
    v = 30.0
    a_lat, _, _ = lateral_matrices(params, v)
    got = np.poly(a_lat)
    c3 = (params.c_f * (params.i_z + params.a ** 2 * params.m)
          + params.c_r * (params.i_z + params.b ** 2 * params.m)) / v
    c2 = ((params.a + params.b) ** 2 * params.c_f * params.c_r / v ** 2
          - params.m * (params.a * params.c_f - params.b * params.c_r))
    mi = params.m * params.i_z
    want = np.array([1.0, c3 / mi, c2 / mi, 0.0, 0.0])
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9 * abs(c2 / mi))


def test_divergence_detected(params, act):
    g = GroundState(v_x=30.0)
    with pytest.raises(DivergenceError) as exc_info:
        step(g, LateralState(), 1e300, 0.0, 0.001, params, act, n_steps=2000)
    assert exc_info.value.time > 0.0


def test_param_validation():
    with pytest.raises(ValueError):
        VehicleParams(m=-1, i_z=1, c_f=1, c_r=1, a=1, b=1)
    with pytest.raises(ValueError):
        ActuatorParams(zeta=0.0, omega_n=1.0)


def test_understeer_gradient_tracks_field_changes(params):
    k0 = params.k_sg
    params.c_f = 400_000.0
    assert params.k_sg != k0
    assert params.k_sg > 0.0  # understeered with the corrected stiffness


def test_mkz_preset_values(params, act):
    assert params.m == 1896.0
    assert params.i_z == 3803.0
    assert (params.a, params.b) == (1.2682, 1.5816)
    assert act.zeta == 0.4056
    assert act.omega_n == 21.4813


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)  # interval (-pi, pi]
    assert wrap_angle(2 * math.pi + 0.3) == pytest.approx(0.3)
    assert wrap_angle(-7.0) == pytest.approx(-7.0 + 2 * math.pi)
