"""Closed-loop stability analysis over the controller-gain space.

The loop (error dynamics + second-order actuator + static feedback) has a
degree-6 characteristic polynomial whose coefficients are evaluated in
closed form. Gain triples are classified with a Routh table; the
stabilizing set is built by classifying a 3-D grid whose
signature-invariant cells are bounded by the root-at-origin plane
(ke = 0) and the imaginary-axis crossing surfaces, and sets for several
operating speeds are intersected pointwise. A companion 6-state state
matrix, affine in the inverse speed, provides an independent eigenvalue
cross-check and the ingredients of the slowly-varying-speed test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import Gains
from .vehicle_model import ActuatorParams, V_MIN, VehicleParams

MPH_TO_MPS = 0.44704  # exact

STABLE = "stable"
UNSTABLE = "unstable"
BOUNDARY = "boundary"

_CLASS_CODE = {UNSTABLE: 0, STABLE: 1, BOUNDARY: 2}
_CODE_CLASS = {v: k for k, v in _CLASS_CODE.items()}

ROUTH_TOL = 1e-9  # relative to the largest entry of the entry's row


class GridMismatchError(ValueError):
    """Regions to intersect were built on different grids."""


@dataclass
class CharPoly:
    """Degree-6 closed-loop characteristic polynomial.

    coeffs holds (A6, ..., A0), descending powers. The producing
    parameters are recorded for traceability.
    """

    coeffs: np.ndarray
    params: VehicleParams | None = None
    act: ActuatorParams | None = None
    gains: Gains | None = None
    v0: float | None = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (7,):
            raise ValueError("expected 7 coefficients A6..A0")
        if self.coeffs[0] <= 0.0:
            raise ValueError("leading coefficient A6 = I*m/omega_n^2 must be > 0")

    def roots(self) -> np.ndarray:
        return np.roots(self.coeffs)


def _coeff_pieces(params: VehicleParams, act: ActuatorParams, v0: float):
    """Gain-independent building blocks of the coefficients."""
    cf, cr, a, b = params.c_f, params.c_r, params.a, params.b
    m, iz = params.m, params.i_z
    wn, zt = act.omega_n, act.zeta
    c3 = (cf * (iz + a * a * m) + cr * (iz + b * b * m)) / v0
    c2 = (a + b) ** 2 * cf * cr / v0 ** 2 - m * (a * cf - b * cr)
    return c3, c2, m, iz, cf, cr, a, b, wn, zt


def char_coeffs(params: VehicleParams, act: ActuatorParams, gains: Gains,
                v0: float) -> CharPoly:
    """Coefficients A6..A0 of the closed-loop characteristic polynomial.

    The -m(a c_f - b c_r) term is grouped with the (a+b)^2 c_f c_r / V0^2
    term everywhere (so it carries the 1/omega_n^2 factor in A4 and the
    2 zeta/omega_n factor in A3); this grouping is the one that matches
    the eigenvalues of the assembled closed-loop state matrix.
    """
    if v0 < V_MIN:
        raise ValueError(f"v0 = {v0} below v_min = {V_MIN}")
    c3, c2, m, iz, cf, cr, a, b, wn, zt = _coeff_pieces(params, act, v0)
    ke, kth, kw = gains.as_tuple()
    a6 = iz * m / wn ** 2
    a5 = 2.0 * iz * m * zt / wn + c3 / wn ** 2
    a4 = m * iz + 2.0 * zt * c3 / wn + c2 / wn ** 2
    a3 = c3 + 2.0 * zt * c2 / wn + cf * m * a * kw
    a2 = c2 + cf * iz * ke + cf * cr * (a + b) / v0 * kw + m * a * cf * kth
    a1 = cf * cr * (a + b) / v0 * (b * ke + kth)
    a0 = cf * cr * (a + b) * ke
    return CharPoly(np.array([a6, a5, a4, a3, a2, a1, a0]),
                    params=params, act=act, gains=gains, v0=v0)


def routh_classify(coeffs: np.ndarray, tol: float = ROUTH_TOL) -> np.ndarray:
    """Routh-table classification of stacked polynomials.

    coeffs has shape (..., n+1), descending powers, positive leading
    coefficient. Returns an int8 array of class codes (0 unstable,
    1 stable, 2 boundary); an entry is boundary when any leading Routh
    entry falls within tol (relative to the largest magnitude in its row)
    of zero.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[-1] - 1
    lead = c[..., 0]
    if np.any(lead <= 0.0):
        raise ValueError("leading coefficient must be > 0")

    width = (n + 2) // 2
    row_prev = np.zeros(c.shape[:-1] + (width,))
    row_cur = np.zeros_like(row_prev)
    row_prev[..., : c[..., 0::2].shape[-1]] = c[..., 0::2]
    row_cur[..., : c[..., 1::2].shape[-1]] = c[..., 1::2]

    boundary = np.zeros(c.shape[:-1], dtype=bool)
    negative = np.zeros_like(boundary)

    def inspect(row):
        scale = np.max(np.abs(row), axis=-1)
        first = row[..., 0]
        near_zero = np.abs(first) <= tol * np.maximum(scale, 1e-300)
        return first, near_zero | (scale == 0.0)

    first, near = inspect(row_prev)
    boundary |= near
    negative |= first < 0.0
    first, near = inspect(row_cur)
    boundary |= near
    negative |= (first < 0.0) & ~near

    for _ in range(n - 1):
        pivot = row_cur[..., 0]
        safe = np.where(np.abs(pivot) > 0.0, pivot, 1.0)
        nxt = np.empty_like(row_cur)
        nxt[..., :-1] = (pivot[..., None] * row_prev[..., 1:]
                         - row_prev[..., 0][..., None] * row_cur[..., 1:]) / safe[..., None]
        nxt[..., -1] = 0.0
        first, near = inspect(nxt)
        boundary |= near
        negative |= (first < 0.0) & ~near
        row_prev, row_cur = row_cur, nxt

    codes = np.ones(c.shape[:-1], dtype=np.int8)
    codes[negative] = _CLASS_CODE[UNSTABLE]
    codes[boundary] = _CLASS_CODE[BOUNDARY]
    return codes


def hurwitz(poly: CharPoly, tol: float = ROUTH_TOL) -> str:
    """Classify one polynomial: 'stable', 'unstable' or 'boundary'."""
    if poly.coeffs[0] == 0.0:
        raise ValueError("degenerate degree: A6 = 0")
    return _CODE_CLASS[int(routh_classify(poly.coeffs, tol=tol))]


@dataclass
class GridSpec:
    """Rectilinear gain grid; bounds chosen to contain the known
    stabilizing set and the default gains."""

    ke: tuple[float, float, int] = (0.0, 0.5, 101)
    ktheta: tuple[float, float, int] = (0.0, 3.0, 101)
    komega: tuple[float, float, int] = (0.0, 0.5, 51)

    def axes(self):
        return (np.linspace(*self.ke), np.linspace(*self.ktheta),
                np.linspace(*self.komega))


@dataclass
class StabRegion:
    """Per-point classification of a gain grid at one speed (or at the
    intersection over several speeds, v0 = tuple)."""

    ke: np.ndarray
    ktheta: np.ndarray
    komega: np.ndarray
    classes: np.ndarray  # int8, shape (len(ke), len(ktheta), len(komega))
    v0: float | tuple

    # ke = 0 makes A0 vanish: a root sits at the origin for every
    # (ktheta, komega), an analytic D-decomposition boundary plane.
    analytic_boundary_ke: float = 0.0

    def classify(self, gains: Gains) -> str:
        """Class of the grid point nearest to the given gains."""
        i = int(np.argmin(np.abs(self.ke - gains.ke)))
        j = int(np.argmin(np.abs(self.ktheta - gains.ktheta)))
        k = int(np.argmin(np.abs(self.komega - gains.komega)))
        return _CODE_CLASS[int(self.classes[i, j, k])]

    def count(self, label: str) -> int:
        return int(np.count_nonzero(self.classes == _CLASS_CODE[label]))

    def stable_mask(self) -> np.ndarray:
        return self.classes == _CLASS_CODE[STABLE]


def _mark_flip_neighbors(classes: np.ndarray) -> np.ndarray:
    """Mark grid points adjacent to a stable/unstable flip as boundary."""
    out = classes.copy()
    stable = classes == _CLASS_CODE[STABLE]
    unstable = classes == _CLASS_CODE[UNSTABLE]
    for axis in range(classes.ndim):
        s0 = [slice(None)] * classes.ndim
        s1 = [slice(None)] * classes.ndim
        s0[axis] = slice(None, -1)
        s1[axis] = slice(1, None)
        flip = (stable[tuple(s0)] & unstable[tuple(s1)]) | (
            unstable[tuple(s0)] & stable[tuple(s1)])
        out[tuple(s0)][flip] = _CLASS_CODE[BOUNDARY]
        out[tuple(s1)][flip] = _CLASS_CODE[BOUNDARY]
    return out


def stab_region(params: VehicleParams, act: ActuatorParams, v0: float,
                grid: GridSpec | None = None, tol: float = ROUTH_TOL,
                mark_flips: bool = True) -> StabRegion:
    """Classify every grid point of the gain space at speed v0.

    The coefficients are affine in the gains, so the grid is evaluated by
    broadcasting; classification is the vectorized Routh test. Points next
    to a stable/unstable flip are re-marked as boundary (grid-resolution
    uncertainty), and the exact ke = 0 root-at-origin plane is recorded on
    the region.
    """
    grid = grid or GridSpec()
    ke_ax, kth_ax, kw_ax = grid.axes()
    c3, c2, m, iz, cf, cr, a, b, wn, zt = _coeff_pieces(params, act, v0)

    ke = ke_ax[:, None, None]
    kth = kth_ax[None, :, None]
    kw = kw_ax[None, None, :]
    shape = (len(ke_ax), len(kth_ax), len(kw_ax))

    coeffs = np.empty(shape + (7,))
    coeffs[..., 0] = iz * m / wn ** 2
    coeffs[..., 1] = 2.0 * iz * m * zt / wn + c3 / wn ** 2
    coeffs[..., 2] = m * iz + 2.0 * zt * c3 / wn + c2 / wn ** 2
    coeffs[..., 3] = c3 + 2.0 * zt * c2 / wn + np.broadcast_to(cf * m * a * kw, shape)
    coeffs[..., 4] = c2 + cf * iz * ke + cf * cr * (a + b) / v0 * kw + m * a * cf * kth
    coeffs[..., 5] = cf * cr * (a + b) / v0 * (b * ke + kth)
    coeffs[..., 6] = np.broadcast_to(cf * cr * (a + b) * ke, shape)

    codes = routh_classify(coeffs, tol=tol)
    if mark_flips:
        codes = _mark_flip_neighbors(codes)
    return StabRegion(ke=ke_ax, ktheta=kth_ax, komega=kw_ax,
                      classes=codes, v0=v0)


def intersect_regions(regions: list[StabRegion]) -> StabRegion:
    """Pointwise conjunction over speeds: stable only where stable at
    every speed; unstable where unstable at any; boundary otherwise."""
    if not regions:
        raise ValueError("no regions to intersect")
    first = regions[0]
    for r in regions[1:]:
        if (not np.array_equal(r.ke, first.ke)
                or not np.array_equal(r.ktheta, first.ktheta)
                or not np.array_equal(r.komega, first.komega)):
            raise GridMismatchError("regions use different gain grids")
    stacked = np.stack([r.classes for r in regions])
    out = np.full_like(first.classes, _CLASS_CODE[BOUNDARY])
    out[np.all(stacked == _CLASS_CODE[STABLE], axis=0)] = _CLASS_CODE[STABLE]
    out[np.any(stacked == _CLASS_CODE[UNSTABLE], axis=0)] = _CLASS_CODE[UNSTABLE]
    speeds = tuple(r.v0 for r in regions)
    return StabRegion(ke=first.ke, ktheta=first.ktheta, komega=first.komega,
                      classes=out, v0=speeds)


@dataclass
class ClosedLoopMatrix:
    """6-state closed loop, affine in gamma = 1/V0:
    A(gamma) = a_const + gamma * a_slope.

    State order: (e_lat, theta_err, e_lat_dot, theta_err_dot,
    delta_f, delta_f_dot). f_bar scales the road-curvature disturbance.
    """

    a_const: np.ndarray
    a_slope: np.ndarray
    gamma: float
    f_bar: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.a_const + self.gamma * self.a_slope

    def at(self, gamma: float) -> np.ndarray:
        return self.a_const + gamma * self.a_slope

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def assemble_A(params: VehicleParams, act: ActuatorParams, gains: Gains,
               gamma: float,
               gamma_bounds: tuple[float, float] = (1e-3, 1.0 / V_MIN)) -> ClosedLoopMatrix:
    """Assemble the closed-loop state matrix at inverse speed gamma.

    Block rows: error kinematics, error dynamics (speed-dependent damping
    enters through the gamma-scaled block), and the actuator in
    controllable canonical form driven by the static feedback
    delta_c = -[ke ktheta] x - [0 komega] x_dot.
    """
    lo, hi = gamma_bounds
    if not lo <= gamma <= hi:
        raise ValueError(f"gamma = {gamma} outside [{lo}, {hi}]")
    cf, cr, a, b = params.c_f, params.c_r, params.a, params.b
    m, iz = params.m, params.i_z
    wn, zt = act.omega_n, act.zeta
    ke, kth, kw = gains.as_tuple()

    a_const = np.zeros((6, 6))
    a_slope = np.zeros((6, 6))
    a_const[0, 2] = 1.0
    a_const[1, 3] = 1.0
    # -M^-1 L
    a_const[2, 1] = (cf + cr) / m
    a_const[3, 1] = (a * cf - b * cr) / iz
    # -gamma * M^-1 C0
    a_slope[2, 2] = -(cf + cr) / m
    a_slope[2, 3] = -(a * cf - b * cr) / m
    a_slope[3, 2] = -(a * cf - b * cr) / iz
    a_slope[3, 3] = -(a * a * cf + b * b * cr) / iz
    # M^-1 B cf [1 0] eta
    a_const[2, 4] = cf / m
    a_const[3, 4] = a * cf / iz
    # actuator: eta_dot = Q eta + G delta_c
    a_const[4, 5] = 1.0
    a_const[5, 4] = -wn ** 2
    a_const[5, 5] = -2.0 * zt * wn
    a_const[5, 0] = -wn ** 2 * ke
    a_const[5, 1] = -wn ** 2 * kth
    a_const[5, 3] = -wn ** 2 * kw

    v0 = 1.0 / gamma
    f_bar = np.zeros(6)
    f_bar[2] = -(m * v0 * v0 + (a * cf - b * cr)) / m
    f_bar[3] = -(a * a * cf + b * b * cr) / iz
    return ClosedLoopMatrix(a_const=a_const, a_slope=a_slope, gamma=gamma,
                            f_bar=f_bar)


@dataclass
class SpeedProfile:
    """Sampled longitudinal speed on a uniform time grid."""

    t: np.ndarray
    v_x: np.ndarray
    v_min: float = field(default=None)  # type: ignore[assignment]
    v_max: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v_x = np.asarray(self.v_x, dtype=float)
        if self.t.shape != self.v_x.shape or self.t.ndim != 1 or len(self.t) < 2:
            raise ValueError("t and v_x must be matching 1-D arrays, len >= 2")
        dt = np.diff(self.t)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform")
        if self.v_min is None:
            self.v_min = float(self.v_x.min())
        if self.v_max is None:
            self.v_max = float(self.v_x.max())
        if self.v_min < V_MIN:
            raise ValueError(f"v_min = {self.v_min} below the model floor {V_MIN}")
        if np.any(self.v_x < self.v_min - 1e-12) or np.any(self.v_x > self.v_max + 1e-12):
            raise ValueError("profile leaves its [v_min, v_max] bounds")

    @property
    def accel(self) -> np.ndarray:
        return np.gradient(self.v_x, self.t)

    @property
    def gamma(self) -> np.ndarray:
        return 1.0 / self.v_x

    def accel_energy(self) -> float:
        """Integral of the squared longitudinal acceleration [m^2/s^3]."""
        return float(np.trapezoid(self.accel ** 2, self.t))


@dataclass
class TimeVaryingSpeedReport:
    """Slowly-varying-speed stability check.

    Exponential stability of the time-varying closed loop holds when the
    frozen-speed eigenvalues keep a uniform margin over the speed interval
    and the longitudinal acceleration has finite energy; A(gamma) is
    affine in gamma, so its norm is automatically bounded on the interval.
    """

    sigma: float
    max_real_eig: float
    eig_margin_ok: bool
    accel_energy: float
    accel_energy_ok: bool
    sup_matrix_norm: float
    bounded_ok: bool
    gamma_lo: float
    gamma_hi: float

    @property
    def all_ok(self) -> bool:
        return self.eig_margin_ok and self.accel_energy_ok and self.bounded_ok


def check_time_varying_speed(profile: SpeedProfile, params: VehicleParams,
                       act: ActuatorParams, gains: Gains, sigma: float = 0.05,
                       gamma_grid: np.ndarray | None = None) -> TimeVaryingSpeedReport:
    """Evaluate the frozen-speed margin and acceleration energy for the
    given speed profile.

    gamma_grid defaults to 101 points spanning [1/v_max, 1/v_min] of the
    profile. The eigenvalue margin is the max real part over the grid.
    """
    if gamma_grid is None:
        gamma_grid = np.linspace(1.0 / profile.v_max, 1.0 / profile.v_min, 101)
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    lo, hi = float(gamma_grid.min()), float(gamma_grid.max())
    g_profile = profile.gamma
    if g_profile.min() < lo - 1e-12 or g_profile.max() > hi + 1e-12:
        raise ValueError("speed profile leaves the gamma interval under test")

    clm = assemble_A(params, act, gains, lo)
    max_real = -math.inf
    sup_norm = 0.0
    for g in gamma_grid:
        mat = clm.at(g)
        max_real = max(max_real, float(np.linalg.eigvals(mat).real.max()))
        sup_norm = max(sup_norm, float(np.linalg.norm(mat, 2)))
    energy = profile.accel_energy()
    return TimeVaryingSpeedReport(
        sigma=sigma,
        max_real_eig=max_real,
        eig_margin_ok=max_real <= -sigma,
        accel_energy=energy,
        accel_energy_ok=math.isfinite(energy),
        sup_matrix_norm=sup_norm,
        bounded_ok=math.isfinite(sup_norm),
        gamma_lo=lo,
        gamma_hi=hi,
    )
