"""Feedback error signals of the ego vehicle relative to a path segment.

Sign convention: e_lat is positive when the vehicle is displaced to the
LEFT of the travel direction, for both line and arc segments, so one
feedback law serves every segment kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .preview_path import Arc, ArcSpline, Line, PathSegment
from .vehicle_model import GroundState, wrap_angle


class EndOfPath(Exception):
    """Ego projects beyond the end of the spline."""


class ProjectionUndefined(ValueError):
    """Ego sits at the arc center; radial projection is undefined."""


@dataclass
class ErrorSignals:
    e_lat: float            # m, positive left of travel
    theta_err: float        # rad, wrapped to (-pi, pi]
    theta_err_dot: float    # rad/s
    theta_ref: float        # rad, reference heading at the projection
    curvature: float        # 1/m of the segment used (0 for a line)


def errors_line(ego: GroundState, line: Line) -> ErrorSignals:
    """Errors relative to a straight segment; the desired yaw rate is zero."""
    dx = ego.x - line.x0
    dy = ego.y - line.y0
    e_lat = line.ux * dy - line.uy * dx  # left-of-direction is positive
    theta_ref = line.heading
    return ErrorSignals(
        e_lat=e_lat,
        theta_err=wrap_angle(ego.theta - theta_ref),
        theta_err_dot=ego.theta_dot,
        theta_ref=theta_ref,
        curvature=0.0,
    )


def errors_arc(ego: GroundState, arc: Arc) -> ErrorSignals:
    """Errors relative to a circular segment.

    The projection is radial: the ray from the center through the ego
    meets the circle at the reference point; theta_ref is the tangent
    there, oriented along travel. Desired yaw rate is curvature * v_x.
    """
    dx = ego.x - arc.cx
    dy = ego.y - arc.cy
    rho = math.hypot(dx, dy)
    if rho < 1e-9:
        raise ProjectionUndefined("ego at arc center")
    ccw = arc.curvature > 0.0
    e_lat = (arc.radius - rho) if ccw else (rho - arc.radius)
    phi = math.atan2(dy, dx)
    theta_ref = wrap_angle(phi + (0.5 * math.pi if ccw else -0.5 * math.pi))
    return ErrorSignals(
        e_lat=e_lat,
        theta_err=wrap_angle(ego.theta - theta_ref),
        theta_err_dot=ego.theta_dot - arc.curvature * ego.v_x,
        theta_ref=theta_ref,
        curvature=arc.curvature,
    )


def errors(ego: GroundState, segment: PathSegment) -> ErrorSignals:
    if isinstance(segment, Line):
        return errors_line(ego, segment)
    return errors_arc(ego, segment)


def _segment_projection(seg: PathSegment, x: float, y: float):
    """(distance to segment, arc-length parameter clamped into [0, span],
    overshoot past the far end)."""
    if isinstance(seg, Line):
        s = (x - seg.x0) * seg.ux + (y - seg.y0) * seg.uy
        s_cl = min(max(s, 0.0), seg.span)
        px, py = seg.point_at(s_cl)
        return math.hypot(x - px, y - py), s_cl, s - seg.span
    dx, dy = x - seg.cx, y - seg.cy
    rho = math.hypot(dx, dy)
    if rho < 1e-9:
        return abs(seg.radius), 0.0, -seg.span
    phi = math.atan2(dy, dx)
    sweep = seg.end_angle - seg.start_angle  # signed, matches curvature sign
    # angular progress from the start, measured along the travel direction
    prog = wrap_angle(phi - seg.start_angle) * math.copysign(1.0, sweep)
    if prog < 0.0:
        prog += 2.0 * math.pi
    s = prog * seg.radius
    if s <= seg.span:
        return abs(rho - seg.radius), s, s - seg.span
    # outside the angular extent: closer endpoint decides whether the ego
    # is past the end (positive overshoot) or before the start (negative)
    d_start = math.hypot(x - seg.point_at(0.0)[0], y - seg.point_at(0.0)[1])
    d_end = math.hypot(x - seg.end[0], y - seg.end[1])
    if d_end <= d_start:
        return d_end, seg.span, s - seg.span
    return d_start, 0.0, -(2.0 * math.pi * seg.radius - s)


def active_segment(spline: ArcSpline, ego: GroundState) -> PathSegment:
    """Segment that carries the ego's projection; downstream wins at ties.

    Raises EndOfPath when the ego projects beyond the end of the last
    segment, so a simulation can wind the vehicle down gracefully.
    """
    if len(spline) == 0:
        raise ValueError("empty spline")
    best = None
    for idx, seg in enumerate(spline):
        dist, s_cl, overshoot = _segment_projection(seg, ego.x, ego.y)
        if best is None or dist <= best[0] + 1e-12:
            best = (dist, idx, seg, overshoot)
    dist, idx, seg, overshoot = best
    if idx == len(spline.segments) - 1 and overshoot > 1e-9:
        raise EndOfPath(f"ego beyond spline end by {overshoot:.3f} m")
    return seg
