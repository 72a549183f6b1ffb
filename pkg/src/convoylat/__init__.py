"""Lateral control of a connected-vehicle convoy from GPS preview data.

Library layout:
    vehicle_model    error-frame bicycle dynamics, actuator, RK4 stepping
    preview_path     preview buffers and arc-spline target fitting
    tracking_errors  cross-track / heading / heading-rate error signals
    controller       feedforward + feedback steering synthesis
    stability        characteristic polynomial, stabilizing-gain sets,
                     time-varying-speed checks
    convoy_sim       multi-vehicle double-lane-change simulator
    cli              command-line front end (also renders figures)
"""

from .controller import ArchitectureConfig, Gains, SteerLimits
from .convoy_sim import (ConvoyConfig, ConvoyTrace, StringStabilityReport,
                         make_reference, run, simulate, string_report)
from .preview_path import (Arc, ArcSpline, GpsSample, Line, PreviewBuffer,
                           build_target, fit_circle, line_prefix_split)
from .stability import (CharPoly, GridSpec, SpeedProfile, StabRegion,
                        assemble_A, char_coeffs, check_time_varying_speed, hurwitz,
                        intersect_regions, stab_region)
from .tracking_errors import ErrorSignals, active_segment, errors_arc, errors_line
from .vehicle_model import (ActuatorParams, GroundState, LateralState,
                            VehicleParams, mkz_actuator, mkz_params, step)

__version__ = "0.1.0"
