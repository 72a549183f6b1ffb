"""Steering synthesis: curvature feedforward plus static error feedback.

Two architectures: a single composite target trajectory, or separate
lead/preceding targets whose feedforward and feedback contributions are
blended with a weight alpha on the preceding-vehicle trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

from .preview_path import PathSegment
from .tracking_errors import ErrorSignals
from .vehicle_model import V_MIN, SingularSpeedError, VehicleParams


@dataclass
class Gains:
    ke: float = 0.06       # rad/m
    ktheta: float = 0.96   # rad/rad
    komega: float = 0.08   # rad s/rad

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.ke, self.ktheta, self.komega)


@dataclass
class SteerLimits:
    delta_max: float = 0.5  # rad
    enabled: bool = True


@dataclass
class ArchitectureConfig:
    mode: str = "composite"           # "composite" | "separate"
    alpha: float = 0.5                # weight on the preceding trajectory

    def __post_init__(self):
        if self.mode not in ("composite", "separate"):
            raise ValueError(f"unknown architecture {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def _curvature_feedforward(curvature: float, v0: float, params: VehicleParams) -> float:
    if v0 < V_MIN:
        raise SingularSpeedError(f"v0 = {v0} below v_min = {V_MIN}")
    return (params.wheelbase + params.k_sg * v0 * v0) * curvature


def feedforward_composite(segment: PathSegment, v0: float,
                          params: VehicleParams) -> float:
    """Steady-state cornering steer for the segment's signed curvature;
    zero on straight segments, positive for left turns."""
    return _curvature_feedforward(segment.curvature, v0, params)


def feedforward_separate(seg_lead: PathSegment, seg_preceding: PathSegment,
                         alpha: float, v0: float, params: VehicleParams) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return (alpha * _curvature_feedforward(seg_preceding.curvature, v0, params)
            + (1.0 - alpha) * _curvature_feedforward(seg_lead.curvature, v0, params))


def feedback_composite(err: ErrorSignals, gains: Gains) -> float:
    return -(gains.ke * err.e_lat
             + gains.ktheta * err.theta_err
             + gains.komega * err.theta_err_dot)


def feedback_separate(err_lead: ErrorSignals, err_preceding: ErrorSignals,
                      alpha: float, gains: Gains) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return ((1.0 - alpha) * feedback_composite(err_lead, gains)
            + alpha * feedback_composite(err_preceding, gains))


def command(delta_ff: float, delta_fb: float,
            limits: SteerLimits | None = None) -> float:
    """Total steering command, clamped to +/- delta_max when limits are on."""
    delta_c = delta_ff + delta_fb
    if limits is not None and limits.enabled:
        delta_c = min(max(delta_c, -limits.delta_max), limits.delta_max)
    return delta_c
