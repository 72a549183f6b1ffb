"""Command-line front end.

Subcommands
    sim         run a convoy simulation -> trace CSV + report JSON
    fit         fit arc-spline segments to a point CSV -> segments JSON
    stabset     classify a gain grid over speeds -> CSV + summary JSON
    check-gains classify one gain triple across speeds -> JSON
    eigsweep    max closed-loop eigenvalue real part over a speed range
    tvcheck     time-varying-speed stability report from a profile CSV

All physical quantities are SI (m, s, rad; speeds m/s unless a flag says
mph). Outputs are deterministic given identical inputs and --seed; report
paths also render PNG figures next to the CSV/JSON unless --no-plots.

Exit codes: 0 success, 2 malformed configuration/input, 3 numerical
divergence during simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import convoy_sim, preview_path as pp, stability
from .controller import ArchitectureConfig, Gains, SteerLimits
from .stability import MPH_TO_MPS, GridSpec, SpeedProfile
from .vehicle_model import (DivergenceError, VehicleParams, mkz_actuator,
                            mkz_params)


class ConfigError(ValueError):
    """Malformed configuration; message names the offending key."""


_SIM_KEYS = {
    "n_vehicles": "vehicle count (>= 2)",
    "speed": "longitudinal speed [m/s] (all vehicles)",
    "duration": "simulated time [s]",
    "spacing": "initial inter-vehicle gap [m]",
    "gains": "[ke, ktheta, komega] = [rad/m, rad/rad, rad s/rad]",
    "architecture": "'composite' or 'separate'",
    "alpha": "separate-architecture weight on the preceding trajectory [0..1]",
    "lane_offset": "lane-change lateral offset [m]",
    "windows": "lane-change windows [[t0, t1], ...] [s]",
    "gps_rate": "broadcast rate [Hz] (<= 20)",
    "gps_noise": "broadcast position noise sigma [m]",
    "latency": "communication latency [s] (whole GPS periods)",
    "seed": "noise seed",
    "use_lead_data": "followers also use the convoy lead's trace (bool)",
    "l_preview": "preview window length [m]",
    "epsilon": "line-prefix distance threshold [m]",
    "delta_max": "steering saturation [rad] (null disables)",
    "preset": "vehicle preset name ('mkz')",
    "params": "vehicle parameter overrides {m, i_z, c_f, c_r, a, b} [SI]",
    "actuator": "actuator overrides {zeta, omega_n} [-, rad/s]",
}


def _vehicle_params(preset: str, overrides: dict | None) -> VehicleParams:
    if preset != "mkz":
        raise ConfigError(f"unknown vehicle preset {preset!r}")
    params = mkz_params()
    if overrides:
        for key, val in overrides.items():
            if key not in ("m", "i_z", "c_f", "c_r", "a", "b", "w_f", "w_r"):
                raise ConfigError(f"unknown vehicle parameter {key!r}")
            params = replace(params, **{key: float(val)})
    return params


def _load_sim_config(path: str | None, args) -> convoy_sim.ConvoyConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for key in raw:
            if key not in _SIM_KEYS:
                raise ConfigError(f"unknown config key {key!r}")

    # command-line flags override file values
    if args.arch is not None:
        raw["architecture"] = args.arch
    if args.alpha is not None:
        raw["alpha"] = args.alpha
    if args.gains is not None:
        raw["gains"] = args.gains
    if args.seed is not None:
        raw["seed"] = args.seed

    params = _vehicle_params(raw.get("preset", "mkz"), raw.get("params"))
    act = mkz_actuator()
    if raw.get("actuator"):
        for key, val in raw["actuator"].items():
            if key not in ("zeta", "omega_n"):
                raise ConfigError(f"unknown actuator parameter {key!r}")
            act = replace(act, **{key: float(val)})

    gains = Gains(*[float(g) for g in raw.get("gains", (0.06, 0.96, 0.08))])
    arch = ArchitectureConfig(mode=raw.get("architecture", "composite"),
                              alpha=float(raw.get("alpha", 0.5)))
    delta_max = raw.get("delta_max", 0.5)
    limits = (SteerLimits(enabled=False) if delta_max is None
              else SteerLimits(delta_max=float(delta_max)))
    try:
        return convoy_sim.ConvoyConfig(
            n_vehicles=int(raw.get("n_vehicles", 4)),
            params=params,
            actuator=act,
            gains=gains,
            architecture=arch,
            limits=limits,
            speed=float(raw.get("speed", 30.0)),
            spacing=float(raw.get("spacing", 30.0)),
            gps_rate=float(raw.get("gps_rate", 20.0)),
            gps_noise=float(raw.get("gps_noise", 0.0)),
            latency=float(raw.get("latency", 0.0)),
            lane_offset=float(raw.get("lane_offset", 3.5)),
            lane_change_windows=tuple(
                (float(t0), float(t1)) for t0, t1 in raw.get(
                    "windows", ((8.0, 15.0), (24.0, 30.0)))),
            duration=float(raw.get("duration", 40.0)),
            seed=int(raw.get("seed", 0)),
            use_lead_data=bool(raw.get("use_lead_data", True)),
            l_preview=float(raw.get("l_preview", pp.DEFAULT_L_PREVIEW)),
            epsilon=float(raw.get("epsilon", pp.DEFAULT_EPSILON)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_gains(text: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError("--gains expects ke,ktheta,komega")
    return [float(p) for p in parts]


def _parse_axis(text: str, name: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--{name} expects lo:hi:count")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _speeds(args) -> list[float]:
    if args.speeds_mph is not None:
        return [float(s) * MPH_TO_MPS for s in args.speeds_mph.split(",")]
    if args.speeds is not None:
        return [float(s) for s in args.speeds.split(",")]
    return [float(s) * MPH_TO_MPS for s in (10, 20, 30, 40, 50, 60, 67)]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_sim(args) -> int:
    config = _load_sim_config(args.config, args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    trace, report = convoy_sim.run(config)
    trace.to_csv(outdir / "trace.csv")
    _write_json(outdir / "report.json", report.to_dict())
    if not args.no_plots:
        from . import plots
        plots.convoy_figures(trace, outdir)
    peaks = ", ".join(f"{p:.4f}" for p in report.peaks)
    print(f"peaks [m]: {peaks}")
    print(f"monotone non-increasing: {report.monotone_non_increasing}")
    print(f"wrote {outdir / 'trace.csv'}")
    return 0


def _cmd_fit(args) -> int:
    points = []
    try:
        with open(args.input, newline="") as fh:
            for row in csv.DictReader(fh):
                points.append((row["source"], float(row["x"]), float(row["y"]),
                               float(row.get("t", 0) or 0)))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad point CSV {args.input}: {exc}") from exc
    if len(points) < 3:
        raise ConfigError("need at least 3 points")

    xy = [(x, y) for _, x, y, _ in points]
    if pp.line_prefix_split(xy, args.epsilon) is None:
        # wholly curved data: the source weighting applies to the circle
        prec = [(x, y) for s, x, y, _ in points if s != "lead"]
        lead = [(x, y) for s, x, y, _ in points if s == "lead"]
        segments = [pp.fit_circle(prec, lead, args.alpha)]
    else:
        segments = pp.compose_window(xy, args.epsilon)

    payload = {"epsilon": args.epsilon, "alpha": args.alpha,
               "segments": [pp.segment_to_dict(s) for s in segments]}
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    if not args.no_plots:
        from . import plots
        plots.fit_figure(xy, pp.ArcSpline(segments), out.parent)
    for seg in segments:
        if isinstance(seg, pp.Arc):
            print(f"arc: center ({seg.cx:.6g}, {seg.cy:.6g}) R = {seg.radius:.6g} m")
        else:
            print(f"line: heading {seg.heading:.6g} rad, span {seg.span:.6g} m")
    return 0


def _region_rows(region, speed):
    ke, kth, kw = np.meshgrid(region.ke, region.ktheta, region.komega,
                              indexing="ij")
    labels = np.array(["unstable", "stable", "boundary"])
    return zip(ke.ravel(), kth.ravel(), kw.ravel(),
               np.full(ke.size, speed), labels[region.classes.ravel()])


def _cmd_stabset(args) -> int:
    speeds = _speeds(args)
    grid = GridSpec(ke=_parse_axis(args.ke, "ke"),
                    ktheta=_parse_axis(args.ktheta, "ktheta"),
                    komega=_parse_axis(args.komega, "komega"))
    params, act = mkz_params(), mkz_actuator()
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    regions = [stability.stab_region(params, act, v, grid) for v in speeds]
    inter = stability.intersect_regions(regions) if len(regions) > 1 else regions[0]

    with open(outdir / "stabset.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ke", "ktheta", "komega", "speed", "class"])
        for region, speed in zip(regions, speeds):
            for row in _region_rows(region, speed):
                writer.writerow([f"{row[0]:.10g}", f"{row[1]:.10g}",
                                 f"{row[2]:.10g}", f"{row[3]:.10g}", row[4]])

    default = Gains()
    stable_mask = inter.stable_mask()
    summary = {
        "speeds_mps": speeds,
        "grid": {"ke": list(grid.ke), "ktheta": list(grid.ktheta),
                 "komega": list(grid.komega)},
        "counts": {label: inter.count(label)
                   for label in ("stable", "unstable", "boundary")},
        "default_gains": default.as_tuple(),
        "default_gains_class": inter.classify(default),
        "analytic_boundary": "ke = 0 plane (closed-loop root at s = 0)",
    }
    if stable_mask.any():
        idx = np.argwhere(stable_mask)
        summary["stable_bounding_box"] = {
            "ke": [float(inter.ke[idx[:, 0].min()]), float(inter.ke[idx[:, 0].max()])],
            "ktheta": [float(inter.ktheta[idx[:, 1].min()]),
                       float(inter.ktheta[idx[:, 1].max()])],
            "komega": [float(inter.komega[idx[:, 2].min()]),
                       float(inter.komega[idx[:, 2].max()])],
        }
    _write_json(outdir / "stabset_summary.json", summary)
    if not args.no_plots:
        from . import plots
        plots.stabset_figure(inter, outdir)
    print(f"stable points in intersection: {inter.count('stable')}"
          f" / {inter.classes.size}")
    print(f"default gains classify: {summary['default_gains_class']}")
    return 0


def _cmd_check_gains(args) -> int:
    gains = Gains(*_parse_gains(args.gains))
    speeds = _speeds(args)
    params, act = mkz_params(), mkz_actuator()
    per_speed = []
    all_stable = True
    for v in speeds:
        poly = stability.char_coeffs(params, act, gains, v)
        label = stability.hurwitz(poly)
        clm = stability.assemble_A(params, act, gains, 1.0 / v)
        max_re = float(clm.eigenvalues().real.max())
        all_stable &= label == "stable" and max_re < 0.0
        per_speed.append({"v0_mps": v, "class": label, "max_real_eig": max_re})
    payload = {"gains": gains.as_tuple(), "per_speed": per_speed,
               "stable_at_all_speeds": bool(all_stable)}
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "check_gains.json", payload)
    print("stable at all speeds" if all_stable else "NOT stable at all speeds")
    for entry in per_speed:
        print(f"  v0 = {entry['v0_mps']:7.3f} m/s  {entry['class']:8s}"
              f"  max Re(eig) = {entry['max_real_eig']:+.5f}")
    return 0 if all_stable else 1


def _cmd_eigsweep(args) -> int:
    gains = Gains(*_parse_gains(args.gains))
    params, act = mkz_params(), mkz_actuator()
    v_lo, v_hi = (float(v) for v in args.v_range.split(":"))
    gammas = np.linspace(1.0 / v_hi, 1.0 / v_lo, args.points)
    clm = stability.assemble_A(params, act, gains, float(gammas[0]))
    max_real = [float(np.linalg.eigvals(clm.at(g)).real.max()) for g in gammas]
    payload = {
        "gains": gains.as_tuple(),
        "gamma": [float(g) for g in gammas],
        "speed_mps": [float(1.0 / g) for g in gammas],
        "max_real_eig": max_real,
        "overall_max_real_eig": max(max_real),
    }
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "eigsweep.json", payload)
    if not args.no_plots:
        from . import plots
        plots.eigsweep_figure(gammas, max_real, outdir)
    print(f"max Re(eig) over [{v_lo}, {v_hi}] m/s: {max(max_real):+.5f}")
    return 0


def _cmd_tvcheck(args) -> int:
    try:
        t, vx = [], []
        with open(args.profile, newline="") as fh:
            for row in csv.DictReader(fh):
                t.append(float(row["t"]))
                vx.append(float(row["vx"]))
        profile = SpeedProfile(np.array(t), np.array(vx))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad speed profile {args.profile}: {exc}") from exc
    gains = Gains(*_parse_gains(args.gains)) if args.gains else Gains()
    report = stability.check_time_varying_speed(profile, mkz_params(), mkz_actuator(),
                                          gains, sigma=args.sigma)
    payload = {
        "sigma": report.sigma,
        "gamma_interval": [report.gamma_lo, report.gamma_hi],
        "max_real_eig": report.max_real_eig,
        "eig_margin_ok": report.eig_margin_ok,
        "accel_energy_m2_s3": report.accel_energy,
        "accel_energy_ok": report.accel_energy_ok,
        "sup_matrix_norm": report.sup_matrix_norm,
        "bounded_ok": report.bounded_ok,
        "all_ok": report.all_ok,
    }
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "tvcheck.json", payload)
    if not args.no_plots:
        from . import plots
        plots.tvcheck_figure(profile.t, profile.v_x, outdir)
    print(f"eigenvalue margin: max Re = {report.max_real_eig:+.5f}"
          f" (need <= {-report.sigma:+.3f}) -> {report.eig_margin_ok}")
    print(f"acceleration energy: {report.accel_energy:.6g} m^2/s^3"
          f" (finite: {report.accel_energy_ok})")
    return 0 if report.all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convoylat",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    config_help = "\n".join(f"  {k}: {v}" for k, v in _SIM_KEYS.items())
    p = sub.add_parser("sim", help="run a convoy simulation",
                       description="Convoy simulation. JSON config keys:\n" + config_help,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON config file (defaults used if omitted)")
    p.add_argument("--out", default="sim_out", help="output directory")
    p.add_argument("--arch", choices=["composite", "separate"],
                   help="override architecture")
    p.add_argument("--alpha", type=float, help="override blend weight [0..1]")
    p.add_argument("--gains", type=_parse_gains,
                   help="override gains ke,ktheta,komega [rad/m, rad/rad, rad s/rad]")
    p.add_argument("--seed", type=int, help="override noise seed")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.set_defaults(func=_cmd_sim)

    p = sub.add_parser("fit", help="fit segments to a source,x,y,t CSV")
    p.add_argument("--input", required=True, help="CSV with columns source,x,y,t [m, s]")
    p.add_argument("--output", required=True, help="segments JSON path")
    p.add_argument("--epsilon", type=float, default=pp.DEFAULT_EPSILON,
                   help="line-prefix threshold [m]")
    p.add_argument("--alpha", type=float, default=0.5,
                   help="weight on non-lead points [0..1]")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("stabset", help="classify a gain grid over speeds")
    p.add_argument("--speeds-mph", help="comma list [mph]")
    p.add_argument("--speeds", help="comma list [m/s]")
    p.add_argument("--ke", default="0:0.5:101", help="axis lo:hi:count [rad/m]")
    p.add_argument("--ktheta", default="0:3:101", help="axis lo:hi:count [rad/rad]")
    p.add_argument("--komega", default="0:0.5:51", help="axis lo:hi:count [rad s/rad]")
    p.add_argument("--out", default="stabset_out", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_stabset)

    p = sub.add_parser("check-gains",
                       help="classify one gain triple over speeds "
                            "(exits 1 when unstable at any speed)")
    p.add_argument("--gains", required=True, help="ke,ktheta,komega")
    p.add_argument("--speeds-mph", help="comma list [mph]")
    p.add_argument("--speeds", help="comma list [m/s]")
    p.add_argument("--out", help="optional output directory for JSON")
    p.set_defaults(func=_cmd_check_gains)

    p = sub.add_parser("eigsweep", help="eigenvalue sweep over a speed range")
    p.add_argument("--gains", required=True, help="ke,ktheta,komega")
    p.add_argument("--v-range", default="4.47:30", help="lo:hi speed [m/s]")
    p.add_argument("--points", type=int, default=60)
    p.add_argument("--out", default="eigsweep_out", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_eigsweep)

    p = sub.add_parser("tvcheck",
                       help="time-varying speed stability report "
                            "(exits 1 when a condition fails)")
    p.add_argument("--profile", required=True, help="CSV with columns t,vx [s, m/s]")
    p.add_argument("--gains", help="ke,ktheta,komega (default 0.06,0.96,0.08)")
    p.add_argument("--sigma", type=float, default=0.05,
                   help="required eigenvalue margin [1/s]")
    p.add_argument("--out", default="tvcheck_out", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_tvcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed a diagnostic
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: simulation diverged: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
