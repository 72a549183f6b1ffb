"""Single-vehicle lateral dynamics.

Linear bicycle model written in tracking-error coordinates
(cross-track error, heading error and their rates), a second-order
steering actuator, and fixed-step RK4 integration of the full
ground-frame state for simulation.

Conventions: SI units throughout; headings in rad measured CCW from the
ground +X axis; positive steering turns left (CCW yaw).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

G_ACCEL = 9.80665  # m/s^2

# The 1/v_x terms make the model singular at standstill.
V_MIN = 1.0  # m/s


class SingularSpeedError(ValueError):
    """Longitudinal speed below the model's validity floor."""


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6f} s)")
        self.time = time


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass
class VehicleParams:
    """Physical constants of the bicycle model.

    m       total mass [kg]
    i_z     yaw inertia about the CG [kg m^2]
    c_f     front axle cornering stiffness [N/rad]
    c_r     rear axle cornering stiffness [N/rad]
    a       CG to front axle [m]
    b       CG to rear axle [m]
    w_f     front axle load [N] (informational)
    w_r     rear axle load [N] (informational)
    """

    m: float
    i_z: float
    c_f: float
    c_r: float
    a: float
    b: float
    w_f: float | None = None
    w_r: float | None = None

    def __post_init__(self):
        for name in ("m", "i_z", "c_f", "c_r", "a", "b"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"VehicleParams.{name} must be > 0")

    @property
    def wheelbase(self) -> float:
        return self.a + self.b

    @property
    def k_sg(self) -> float:
        """Understeer gradient [rad s^2/m]; > 0 for understeered vehicles.

        Recomputed on access, so it always reflects the current m, a, b,
        c_f, c_r.
        """
        return (self.m / (self.a + self.b)) * (self.b / self.c_f - self.a / self.c_r)


@dataclass
class ActuatorParams:
    """Second-order steering actuation: unit-DC-gain transfer
    omega_n^2 / (s^2 + 2 zeta omega_n s + omega_n^2)."""

    zeta: float
    omega_n: float

    def __post_init__(self):
        if self.zeta <= 0.0:
            raise ValueError("ActuatorParams.zeta must be > 0")
        if self.omega_n <= 0.0:
            raise ValueError("ActuatorParams.omega_n must be > 0")


def mkz_params() -> VehicleParams:
    """Lincoln MKZ sedan parameter preset."""
    return VehicleParams(
        m=1896.0,
        i_z=3803.0,
        c_f=4_000_000.0,
        c_r=381_900.0,
        a=1.2682,
        b=1.5816,
        w_f=1052.3 * G_ACCEL,
        w_r=843.68 * G_ACCEL,
    )


def mkz_actuator() -> ActuatorParams:
    return ActuatorParams(zeta=0.4056, omega_n=21.4813)


@dataclass
class LateralState:
    """Error-frame state plus the actuator state (delta_f, delta_f rate)."""

    e_lat: float = 0.0
    e_lat_dot: float = 0.0
    theta_err: float = 0.0
    theta_err_dot: float = 0.0
    delta_f: float = 0.0
    delta_f_dot: float = 0.0


@dataclass
class GroundState:
    """Ground-frame state: position, heading, yaw rate, body velocities."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0
    v_x: float = 30.0
    v_y: float = 0.0


def lateral_derivatives(
    state: LateralState,
    v_x: float,
    curvature: float,
    delta_f: float,
    params: VehicleParams,
) -> tuple[float, float, float, float]:
    """Time derivative of (e_lat, e_lat_dot, theta_err, theta_err_dot).

    Error dynamics of the bicycle model about a reference of constant
    curvature (1/R; 0 for a straight segment), with the speed-dependent
    coefficients evaluated at the instantaneous v_x.
    """
    if v_x < V_MIN:
        raise SingularSpeedError(f"v_x = {v_x} below v_min = {V_MIN}")
    cf, cr, a, b = params.c_f, params.c_r, params.a, params.b
    e_dot = state.e_lat_dot
    te = state.theta_err
    te_dot = state.theta_err_dot

    # mass row: m e'' + (cf+cr)/v e' - (cf+cr) te + (a cf - b cr)/v te'
    #           = cf delta - (m v^2 + a cf - b cr) kappa
    e_ddot = (
        cf * delta_f
        - (cf + cr) / v_x * e_dot
        + (cf + cr) * te
        - (a * cf - b * cr) / v_x * te_dot
        - (params.m * v_x * v_x + (a * cf - b * cr)) * curvature
    ) / params.m
    # yaw row: I te'' + (a cf - b cr)/v e' - (a cf - b cr) te
    #          + (a^2 cf + b^2 cr)/v te' = a cf delta - (a^2 cf + b^2 cr) kappa
    te_ddot = (
        a * cf * delta_f
        - (a * cf - b * cr) / v_x * e_dot
        + (a * cf - b * cr) * te
        - (a * a * cf + b * b * cr) / v_x * te_dot
        - (a * a * cf + b * b * cr) * curvature
    ) / params.i_z
    return (e_dot, e_ddot, te_dot, te_ddot)


def actuator_derivatives(
    eta: tuple[float, float], delta_c: float, params: ActuatorParams
) -> tuple[float, float]:
    """Derivative of the actuator state eta = (delta_f, delta_f_dot)."""
    delta_f, delta_f_dot = eta
    wn = params.omega_n
    return (delta_f_dot, wn * wn * (delta_c - delta_f) - 2.0 * params.zeta * wn * delta_f_dot)


def _rk4_advance(
    state: tuple,
    delta_c: float,
    curvature: float,
    dt: float,
    n_steps: int,
    params: VehicleParams,
    act: ActuatorParams,
    v_x0: float,
    v_x_dot: float,
    t0: float,
) -> tuple:
    """Advance the 11-state (ground + error + actuator) by n_steps of RK4
    with the steering command and curvature held constant.

    State layout: (X, Y, theta, v_y, r, e, e_dot, te, te_dot, df, df_dot).
    v_x evolves linearly from v_x0 at rate v_x_dot (exogenous speed).
    Hot path of the convoy simulation: plain floats only.
    """
    cf, cr, a, b = params.c_f, params.c_r, params.a, params.b
    m, iz = params.m, params.i_z
    wn, zt = act.omega_n, act.zeta
    wn2 = wn * wn
    two_zw = 2.0 * zt * wn
    csum = cf + cr
    cdiff = a * cf - b * cr
    csq = a * a * cf + b * b * cr

    def derivs(s, vx):
        X, Y, th, vy, r, e, ed, te, ted, df, dfd = s
        if vx < V_MIN:
            raise SingularSpeedError(f"v_x = {vx} below v_min = {V_MIN}")
        cos_t = math.cos(th)
        sin_t = math.sin(th)
        fy = cf * df - csum / vx * vy - cdiff / vx * r
        mz = a * cf * df - cdiff / vx * vy - csq / vx * r
        return (
            vx * cos_t - vy * sin_t,
            vx * sin_t + vy * cos_t,
            r,
            fy / m - vx * r,
            mz / iz,
            ed,
            (cf * df - csum / vx * ed + csum * te - cdiff / vx * ted
             - (m * vx * vx + cdiff) * curvature) / m,
            ted,
            (a * cf * df - cdiff / vx * ed + cdiff * te - csq / vx * ted
             - csq * curvature) / iz,
            dfd,
            wn2 * (delta_c - df) - two_zw * dfd,
        )

    h = dt
    half = 0.5 * h
    sixth = h / 6.0
    s = tuple(float(v) for v in state)
    delta_c = float(delta_c)
    curvature = float(curvature)
    v_x0 = float(v_x0)
    v_x_dot = float(v_x_dot)
    try:
        for k in range(n_steps):
            tau = k * h
            v1 = v_x0 + v_x_dot * tau
            v2 = v_x0 + v_x_dot * (tau + half)
            v4 = v_x0 + v_x_dot * (tau + h)
            k1 = derivs(s, v1)
            k2 = derivs(tuple(si + half * ki for si, ki in zip(s, k1)), v2)
            k3 = derivs(tuple(si + half * ki for si, ki in zip(s, k2)), v2)
            k4 = derivs(tuple(si + h * ki for si, ki in zip(s, k3)), v4)
            s = tuple(
                si + sixth * (a1 + 2.0 * (a2 + a3) + a4)
                for si, a1, a2, a3, a4 in zip(s, k1, k2, k3, k4)
            )
    except (ValueError, OverflowError) as exc:
        # trig of an overflowed heading, etc.
        if isinstance(exc, SingularSpeedError):
            raise
        raise DivergenceError("state overflow during integration",
                              t0 + k * h) from exc
    for v in s:
        if not math.isfinite(v):
            raise DivergenceError("non-finite state during integration", t0 + n_steps * h)
    return s


def step(
    ground: GroundState,
    lateral: LateralState,
    delta_c: float,
    curvature: float,
    dt: float,
    params: VehicleParams,
    act: ActuatorParams,
    v_x_dot: float = 0.0,
    n_steps: int = 1,
    t0: float = 0.0,
) -> tuple[GroundState, LateralState]:
    """RK4-advance the coupled ground-frame body dynamics, error dynamics
    and actuator by n_steps of size dt under a held command.

    The returned LateralState's error part is the linear-model propagation;
    simulations recompute those errors from geometry at each control tick
    and treat the ground-frame part as truth.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    s = (
        ground.x, ground.y, ground.theta, ground.v_y, ground.theta_dot,
        lateral.e_lat, lateral.e_lat_dot, lateral.theta_err, lateral.theta_err_dot,
        lateral.delta_f, lateral.delta_f_dot,
    )
    s = _rk4_advance(s, delta_c, curvature, dt, n_steps, params, act,
                     ground.v_x, v_x_dot, t0)
    new_ground = GroundState(
        x=s[0], y=s[1], theta=s[2], theta_dot=s[4],
        v_x=ground.v_x + v_x_dot * n_steps * dt, v_y=s[3],
    )
    new_lateral = LateralState(
        e_lat=s[5], e_lat_dot=s[6], theta_err=s[7], theta_err_dot=s[8],
        delta_f=s[9], delta_f_dot=s[10],
    )
    return new_ground, new_lateral
