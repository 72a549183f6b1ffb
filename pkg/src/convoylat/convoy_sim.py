"""Multi-vehicle convoy simulation of a double lane change.

The lead vehicle tracks an analytic reference path through the same
control stack the followers use (the reference plays the role of its
communicated preview data). Each follower ingests position broadcasts
from the convoy lead and from its immediately preceding vehicle, fits
target trajectories per the selected architecture, and steers with the
feedforward/feedback law. Physics runs at a fixed millisecond step with
zero-order-hold commands updated at the control rate; broadcasts happen
at the GPS rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import preview_path as pp
from .controller import (ArchitectureConfig, Gains, SteerLimits, command,
                         feedback_composite, feedback_separate,
                         feedforward_composite, feedforward_separate)
from .stability import SpeedProfile
from .tracking_errors import EndOfPath, ErrorSignals, active_segment, errors
from .vehicle_model import (ActuatorParams, DivergenceError, GroundState,
                            VehicleParams, _rk4_advance, mkz_actuator,
                            mkz_params)

HOLD_LAST_TARGET_S = 0.5  # keep the previous fit this long on data dropout


def _quintic(tau: float) -> float:
    """Minimum-jerk blend: zero value/velocity/acceleration at both ends."""
    return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))


@dataclass
class ReferencePath:
    """Lead vehicle's target: straight driving with lane changes executed
    as quintic lateral blends inside the scheduled time windows (first
    window moves out by lane_offset, the next one back, alternating)."""

    lane_offset: float
    windows: tuple[tuple[float, float], ...]
    speed: float | SpeedProfile

    def __post_init__(self):
        last_end = -math.inf
        for t0, t1 in self.windows:
            if t1 <= t0:
                raise ValueError(f"window ({t0}, {t1}) has nonpositive length")
            if t0 < last_end:
                raise ValueError("lane-change windows overlap")
            last_end = t1

    def offset(self, t: float) -> float:
        level = 0.0
        for j, (t0, t1) in enumerate(self.windows):
            target = self.lane_offset if j % 2 == 0 else 0.0
            if t < t0:
                return level
            if t <= t1:
                return level + (target - level) * _quintic((t - t0) / (t1 - t0))
            level = target
        return level

    def station(self, t: float) -> float:
        if isinstance(self.speed, SpeedProfile):
            p = self.speed
            dist = np.concatenate(
                ([0.0], np.cumsum(0.5 * (p.v_x[1:] + p.v_x[:-1]) * np.diff(p.t))))
            if t < p.t[0]:
                return float(p.v_x[0] * (t - p.t[0]))
            if t > p.t[-1]:
                return float(dist[-1] + p.v_x[-1] * (t - p.t[-1]))
            return float(np.interp(t, p.t, dist))
        return self.speed * t

    def position(self, t: float) -> tuple[float, float]:
        return (self.station(t), self.offset(t))


def make_reference(windows, lane_offset: float,
                   speed: float | SpeedProfile) -> ReferencePath:
    return ReferencePath(lane_offset=lane_offset, windows=tuple(
        (float(t0), float(t1)) for t0, t1 in windows), speed=speed)


@dataclass
class ConvoyConfig:
    n_vehicles: int = 4
    params: VehicleParams = field(default_factory=mkz_params)
    actuator: ActuatorParams = field(default_factory=mkz_actuator)
    gains: Gains = field(default_factory=Gains)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    limits: SteerLimits = field(default_factory=SteerLimits)
    speed: float | SpeedProfile = 30.0          # m/s, common to all vehicles
    spacing: float = 30.0                        # m, initial gap
    gps_rate: float = 20.0                       # Hz
    gps_noise: float = 0.0                       # m, std dev per coordinate
    latency: float = 0.0                         # s, rounded to GPS periods
    lane_offset: float = 3.5                     # m
    lane_change_windows: tuple = ((8.0, 15.0), (24.0, 30.0))
    duration: float = 40.0                       # s
    seed: int = 0
    use_lead_data: bool = True
    l_preview: float = pp.DEFAULT_L_PREVIEW      # m
    epsilon: float = pp.DEFAULT_EPSILON          # m, line-prefix threshold
    control_rate: float = 50.0                   # Hz
    physics_dt: float = 0.001                    # s

    def __post_init__(self):
        if self.n_vehicles < 2:
            raise ValueError("convoy needs at least 2 vehicles")
        if self.spacing <= 0.0:
            raise ValueError("spacing must be > 0")
        if self.gps_rate > 20.0 + 1e-9:
            raise ValueError("GPS broadcast rate is capped at 20 Hz")
        if not self.use_lead_data and self.architecture.mode == "separate":
            raise ValueError("separate architecture requires lead data")
        for rate in (self.gps_rate, self.control_rate):
            steps = 1.0 / (rate * self.physics_dt)
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError("gps/control rates must divide the physics step grid")

    def v_at(self, t: float) -> float:
        if isinstance(self.speed, SpeedProfile):
            return float(np.interp(t, self.speed.t, self.speed.v_x))
        return self.speed


TRACE_COLUMNS = (
    "t", "vehicle", "x", "y", "theta", "theta_dot", "v_x",
    "e_lat", "theta_err", "theta_err_dot",
    "delta_ff", "delta_fb", "delta_c", "delta_f",
    "segment", "fit_radius",
)


@dataclass
class ConvoyTrace:
    """Per-control-tick records for every vehicle, in column arrays."""

    columns: dict

    def __len__(self):
        return len(self.columns["t"])

    def vehicle_rows(self, idx: int) -> np.ndarray:
        return np.asarray(self.columns["vehicle"]) == idx

    def series(self, name: str, vehicle: int | None = None) -> np.ndarray:
        arr = np.asarray(self.columns[name])
        if vehicle is None:
            return arr
        return arr[self.vehicle_rows(vehicle)]

    @property
    def n_vehicles(self) -> int:
        return int(max(self.columns["vehicle"])) + 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            cols = [self.columns[name] for name in TRACE_COLUMNS]
            for row in zip(*cols):
                writer.writerow([
                    v if isinstance(v, (str, int)) else f"{v:.10g}" for v in row
                ])


@dataclass
class StringStabilityReport:
    """Peak cross-track error per vehicle and the along-convoy verdict:
    True iff every follower's peak is at most its predecessor's peak
    scaled by (1 + tol)."""

    peaks: list[float]
    peak_times: list[float]
    monotone_non_increasing: bool
    tol: float

    def to_dict(self) -> dict:
        return {
            "peaks_m": self.peaks,
            "peak_times_s": self.peak_times,
            "monotone_non_increasing": self.monotone_non_increasing,
            "tolerance": self.tol,
        }


def string_report(trace: ConvoyTrace, tol: float = 0.05) -> StringStabilityReport:
    n = trace.n_vehicles
    if n < 2:
        raise ValueError("string-stability report needs >= 2 vehicles")
    peaks, times = [], []
    for i in range(n):
        e = np.abs(trace.series("e_lat", i))
        t = trace.series("t", i)
        j = int(np.argmax(e))
        peaks.append(float(e[j]))
        times.append(float(t[j]))
    ok = all(peaks[i + 1] <= peaks[i] * (1.0 + tol) for i in range(n - 1))
    return StringStabilityReport(peaks=peaks, peak_times=times,
                                 monotone_non_increasing=ok, tol=tol)


class _Runner:
    """One vehicle's runtime state and control bookkeeping."""

    __slots__ = ("idx", "state", "buffer", "delta_c", "last_spline",
                 "last_fit_t", "last_row")

    def __init__(self, idx: int, x0: float, v0: float, config: ConvoyConfig):
        self.idx = idx
        # (X, Y, theta, v_y, r, e, e_dot, te, te_dot, delta_f, delta_f_dot)
        self.state = (x0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        self.buffer = pp.PreviewBuffer(l_preview=config.l_preview)
        self.delta_c = 0.0
        self.last_spline: dict = {}
        self.last_fit_t: dict = {}
        self.last_row = None

    def ground(self, v_x: float) -> GroundState:
        s = self.state
        return GroundState(x=s[0], y=s[1], theta=s[2], theta_dot=s[4],
                           v_x=v_x, v_y=s[3])


def _straight_ahead(ego: GroundState, span: float) -> pp.Line:
    return pp.Line(x0=ego.x, y0=ego.y, ux=math.cos(ego.theta),
                   uy=math.sin(ego.theta), span=span)


@dataclass
class SimResult:
    trace: ConvoyTrace
    report: StringStabilityReport
    broadcasts: dict  # vehicle idx -> list[(t, x, y)] as transmitted


class _Simulation:
    def __init__(self, config: ConvoyConfig):
        self.cfg = config
        self.reference = make_reference(config.lane_change_windows,
                                        config.lane_offset, config.speed)
        self.rng = np.random.default_rng(config.seed)
        dt = config.physics_dt
        self.gps_every = round(1.0 / (config.gps_rate * dt))
        self.ctrl_every = round(1.0 / (config.control_rate * dt))
        self.total_steps = round(config.duration / dt)
        self.latency_steps = round(config.latency * config.gps_rate) * self.gps_every
        self.runners = [
            _Runner(i, -i * config.spacing, config.v_at(0.0), config)
            for i in range(config.n_vehicles)
        ]
        self.pending: dict[int, list] = {}
        self.broadcast_log: dict[int, list] = {i: [] for i in range(config.n_vehicles)}
        self.rows: dict[str, list] = {name: [] for name in TRACE_COLUMNS}
        self._seed_buffers()

    # -- initialisation -------------------------------------------------

    def _seed_buffers(self):
        cfg = self.cfg
        v0 = cfg.v_at(0.0)
        gap = v0 / cfg.gps_rate
        # Lead: the analytic reference sampled at the GPS rate, covering a
        # little behind the start through the whole run plus one preview.
        t0 = -(self.runners[0].buffer.behind_margin / v0 + 1.0 / cfg.gps_rate)
        t1 = cfg.duration + (cfg.l_preview + gap) / cfg.v_at(cfg.duration)
        t = t0
        lead = self.runners[0]
        while t <= t1:
            x, y = self.reference.position(t)
            lead.buffer.ingest(pp.GpsSample(x=x, y=y, source=pp.LEAD, t=t),
                               lead.ground(v0))
            t += 1.0 / cfg.gps_rate
        # Followers: warm straight-line trails for both sources, as if the
        # senders had already driven the initial straight at speed.
        for i in range(1, cfg.n_vehicles):
            runner = self.runners[i]
            ego = runner.ground(v0)
            for tag, sender in ((pp.LEAD, 0), (pp.PRECEDING, i - 1)):
                x_sender = -sender * cfg.spacing
                j = 1
                while True:
                    x = x_sender - j * gap
                    if x < ego.x - runner.buffer.behind_margin:
                        break
                    runner.buffer.ingest(
                        pp.GpsSample(x=x, y=0.0, source=tag, t=-j / cfg.gps_rate),
                        ego)
                    j += 1

    # -- broadcasting ---------------------------------------------------

    def _broadcast(self, step: int, t: float, v_now: float):
        cfg = self.cfg
        positions = []
        for r in self.runners:
            x, y = r.state[0], r.state[1]
            if cfg.gps_noise > 0.0:
                x += cfg.gps_noise * self.rng.standard_normal()
                y += cfg.gps_noise * self.rng.standard_normal()
            positions.append((x, y))
            self.broadcast_log[r.idx].append((t, x, y))
        deliveries = []
        for i in range(1, cfg.n_vehicles):
            xl, yl = positions[0]
            deliveries.append((i, pp.GpsSample(x=xl, y=yl, source=pp.LEAD, t=t)))
            xp, yp = positions[i - 1]
            deliveries.append((i, pp.GpsSample(x=xp, y=yp, source=pp.PRECEDING, t=t)))
        if self.latency_steps == 0:
            self._deliver(deliveries, v_now)
        else:
            self.pending.setdefault(step + self.latency_steps, []).extend(deliveries)
        # keep the lead's pre-seeded reference buffer trimmed as it advances
        self.runners[0].buffer.prune(self.runners[0].ground(v_now))

    def _deliver(self, deliveries, v_now: float):
        for idx, sample in deliveries:
            r = self.runners[idx]
            r.buffer.ingest(sample, r.ground(v_now))

    # -- control --------------------------------------------------------

    def _target(self, runner: _Runner, ego: GroundState, slot: str,
                mode: str, t: float) -> pp.ArcSpline:
        cfg = self.cfg
        try:
            spline = pp.build_target(runner.buffer, ego, mode, cfg.epsilon)
            runner.last_spline[slot] = spline
            runner.last_fit_t[slot] = t
        except pp.InsufficientPreviewData:
            held = runner.last_spline.get(slot)
            if held is not None and t - runner.last_fit_t[slot] <= HOLD_LAST_TARGET_S:
                spline = held
            else:
                spline = pp.ArcSpline([_straight_ahead(ego, cfg.l_preview)])
        return spline

    def _segment_errors(self, spline: pp.ArcSpline, ego: GroundState):
        try:
            seg = active_segment(spline, ego)
        except EndOfPath:
            seg = _straight_ahead(ego, self.cfg.l_preview)
        return seg, errors(ego, seg)

    def _control(self, runner: _Runner, t: float, v_now: float):
        cfg = self.cfg
        ego = runner.ground(v_now)
        arch = cfg.architecture
        if runner.idx == 0 or arch.mode == "composite":
            if runner.idx == 0:
                mode = pp.SEPARATE_LEAD  # reference is the lead's only source
            elif cfg.use_lead_data:
                mode = pp.COMPOSITE
            else:
                mode = pp.SEPARATE_PRECEDING
            spline = self._target(runner, ego, "main", mode, t)
            seg, err = self._segment_errors(spline, ego)
            d_ff = feedforward_composite(seg, v_now, cfg.params)
            d_fb = feedback_composite(err, cfg.gains)
        else:
            spline_l = self._target(runner, ego, "lead", pp.SEPARATE_LEAD, t)
            spline_p = self._target(runner, ego, "prec", pp.SEPARATE_PRECEDING, t)
            seg_l, err_l = self._segment_errors(spline_l, ego)
            seg_p, err_p = self._segment_errors(spline_p, ego)
            d_ff = feedforward_separate(seg_l, seg_p, arch.alpha, v_now, cfg.params)
            d_fb = feedback_separate(err_l, err_p, arch.alpha, cfg.gains)
            a = arch.alpha
            err = ErrorSignals(
                e_lat=a * err_p.e_lat + (1 - a) * err_l.e_lat,
                theta_err=a * err_p.theta_err + (1 - a) * err_l.theta_err,
                theta_err_dot=a * err_p.theta_err_dot + (1 - a) * err_l.theta_err_dot,
                theta_ref=err_p.theta_ref,
                curvature=err_p.curvature,
            )
            seg = seg_p  # preceding-trajectory view goes into the trace
        runner.delta_c = command(d_ff, d_fb, cfg.limits)

        rows = self.rows
        rows["t"].append(t)
        rows["vehicle"].append(runner.idx)
        rows["x"].append(runner.state[0])
        rows["y"].append(runner.state[1])
        rows["theta"].append(runner.state[2])
        rows["theta_dot"].append(runner.state[4])
        rows["v_x"].append(v_now)
        rows["e_lat"].append(err.e_lat)
        rows["theta_err"].append(err.theta_err)
        rows["theta_err_dot"].append(err.theta_err_dot)
        rows["delta_ff"].append(d_ff)
        rows["delta_fb"].append(d_fb)
        rows["delta_c"].append(runner.delta_c)
        rows["delta_f"].append(runner.state[9])
        rows["segment"].append(seg.kind)
        rows["fit_radius"].append(seg.radius if isinstance(seg, pp.Arc) else math.nan)

    # -- main loop ------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.cfg
        dt = cfg.physics_dt
        step = 0
        while step < self.total_steps:
            t = step * dt
            v_now = cfg.v_at(t)
            if step in self.pending:
                self._deliver(self.pending.pop(step), v_now)
            if step % self.gps_every == 0:
                self._broadcast(step, t, v_now)
            if step % self.ctrl_every == 0:
                for r in self.runners:
                    self._control(r, t, v_now)
            n_next = min(
                self.gps_every - step % self.gps_every,
                self.ctrl_every - step % self.ctrl_every,
                self.total_steps - step,
            )
            if self.pending:
                n_next = min(n_next, *(k - step for k in self.pending))
            t_next = (step + n_next) * dt
            v_dot = (cfg.v_at(t_next) - v_now) / (n_next * dt)
            for r in self.runners:
                try:
                    s = _rk4_advance(r.state, r.delta_c, 0.0, dt, n_next,
                                     cfg.params, cfg.actuator,
                                     v_now, v_dot, t)
                except DivergenceError as exc:
                    exc.trace = self._trace()  # diagnostic up to the failure
                    raise
                # error coordinates come from geometry at control ticks,
                # never from open-loop integration
                r.state = s[:5] + (0.0, 0.0, 0.0, 0.0) + s[9:]
            step += n_next
        trace = self._trace()
        return SimResult(trace=trace, report=string_report(trace),
                         broadcasts=self.broadcast_log)

    def _trace(self) -> ConvoyTrace:
        return ConvoyTrace(columns={k: list(v) for k, v in self.rows.items()})


def simulate(config: ConvoyConfig) -> SimResult:
    """Run the convoy and return the trace, report and broadcast logs."""
    return _Simulation(config).run()


def run(config: ConvoyConfig) -> tuple[ConvoyTrace, StringStabilityReport]:
    """Run the convoy simulation; abort with a diagnostic trace attached
    to the DivergenceError if any vehicle diverges."""
    result = simulate(config)
    return result.trace, result.report


def emulate_follower(config: ConvoyConfig, idx: int,
                     lead_broadcasts, preceding_broadcasts) -> ConvoyTrace:
    """Re-run follower `idx` standalone against recorded broadcast logs
    (lists of (t, x, y) transmissions), reproducing the live simulation's
    single-vehicle trace exactly when noise and latency match."""
    if not 1 <= idx < config.n_vehicles:
        raise ValueError("idx must identify a follower")
    sim = _Simulation(config)
    runner = sim.runners[idx]
    dt = config.physics_dt

    schedule: dict[int, list] = {}
    for tag, log in ((pp.LEAD, lead_broadcasts), (pp.PRECEDING, preceding_broadcasts)):
        for t, x, y in log:
            k = round(t / dt) + sim.latency_steps
            schedule.setdefault(k, []).append(
                pp.GpsSample(x=x, y=y, source=tag, t=t))

    step = 0
    while step < sim.total_steps:
        t = step * dt
        v_now = config.v_at(t)
        for sample in schedule.pop(step, ()):
            runner.buffer.ingest(sample, runner.ground(v_now))
        if step % sim.ctrl_every == 0:
            sim._control(runner, t, v_now)
        n_next = min(sim.ctrl_every - step % sim.ctrl_every,
                     sim.total_steps - step)
        if schedule:
            pending_next = min((k - step for k in schedule if k > step), default=n_next)
            n_next = min(n_next, max(pending_next, 1))
        t_next = (step + n_next) * dt
        v_dot = (config.v_at(t_next) - v_now) / (n_next * dt)
        s = _rk4_advance(runner.state, runner.delta_c, 0.0, dt,
                         n_next, config.params, config.actuator,
                         v_now, v_dot, t)
        runner.state = s[:5] + (0.0, 0.0, 0.0, 0.0) + s[9:]
        step += n_next
    return sim._trace()
