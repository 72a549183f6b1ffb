"""Preview buffers and circular-arc-spline target construction.

Each following vehicle stores the GPS samples broadcast by the convoy
lead and by its immediately preceding vehicle, keeps the ones within a
lookahead window ahead of itself, and fits a target trajectory to them:
an optional straight-line prefix (largest run of near-collinear points)
followed by an optional circular arc found by weighted algebraic
least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .vehicle_model import GroundState

LEAD = "lead"
PRECEDING = "preceding"

DEFAULT_EPSILON = 0.10      # m, point-to-line threshold of the prefix test
DEFAULT_L_PREVIEW = 30.0    # m, ~0.8 s of time headway at highway speed
BEHIND_MARGIN = 2.0         # m retained behind the ego
RCOND_DEGENERATE = 1e-10    # reciprocal condition triggering the line fallback


class InsufficientPreviewData(ValueError):
    """Fewer usable points than the operation requires."""


@dataclass
class GpsSample:
    x: float
    y: float
    source: str = PRECEDING
    t: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("GPS sample coordinates must be finite")


@dataclass
class Line:
    """Straight segment: anchor point, unit direction, arc-length span."""

    x0: float
    y0: float
    ux: float
    uy: float
    span: float

    kind = "line"
    curvature = 0.0

    def __post_init__(self):
        norm = math.hypot(self.ux, self.uy)
        if norm == 0.0:
            raise ValueError("line direction must be nonzero")
        self.ux /= norm
        self.uy /= norm
        if self.span <= 0.0:
            raise ValueError("segment span must be > 0")

    def point_at(self, s: float) -> tuple[float, float]:
        return (self.x0 + s * self.ux, self.y0 + s * self.uy)

    @property
    def heading(self) -> float:
        return math.atan2(self.uy, self.ux)

    @property
    def end(self) -> tuple[float, float]:
        return self.point_at(self.span)


@dataclass
class Arc:
    """Circular segment with signed curvature (+1/R turns left/CCW).

    start_angle/end_angle are center angles of the segment endpoints,
    unwrapped so that end_angle - start_angle covers the travel direction
    (positive for CCW arcs).
    """

    cx: float
    cy: float
    radius: float
    curvature: float
    start_angle: float
    end_angle: float

    kind = "arc"

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("arc radius must be > 0")
        if not math.isclose(abs(self.curvature), 1.0 / self.radius, rel_tol=1e-9):
            raise ValueError("|curvature| must equal 1/radius")
        sweep = self.end_angle - self.start_angle
        if sweep == 0.0 or (sweep > 0) != (self.curvature > 0):
            raise ValueError("angle sweep must be nonzero and match the turn direction")

    @property
    def span(self) -> float:
        return abs(self.end_angle - self.start_angle) * self.radius

    def point_at(self, s: float) -> tuple[float, float]:
        phi = self.start_angle + math.copysign(s / self.radius, self.curvature)
        return (self.cx + self.radius * math.cos(phi),
                self.cy + self.radius * math.sin(phi))

    @property
    def end(self) -> tuple[float, float]:
        return (self.cx + self.radius * math.cos(self.end_angle),
                self.cy + self.radius * math.sin(self.end_angle))


PathSegment = Line | Arc


@dataclass
class ArcSpline:
    """Ordered, position-continuous run of segments (line/arc alternating;
    a fitting window contributes at most one line then one arc)."""

    segments: list = field(default_factory=list)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


class PreviewBuffer:
    """Per-source store of communicated GPS samples around the ego.

    Samples stay sorted by along-track distance from the ego (projection
    onto the ego heading; ties broken by time stamp). Samples more than
    `behind_margin` behind the ego are evicted on ingest; samples beyond
    `l_preview` ahead are retained in storage but excluded from the
    active window.
    """

    def __init__(self, l_preview: float = DEFAULT_L_PREVIEW,
                 behind_margin: float = BEHIND_MARGIN):
        self.l_preview = l_preview
        self.behind_margin = behind_margin
        self._store: dict[str, list[GpsSample]] = {}

    @staticmethod
    def _along(sample: GpsSample, ego: GroundState) -> float:
        return ((sample.x - ego.x) * math.cos(ego.theta)
                + (sample.y - ego.y) * math.sin(ego.theta))

    def ingest(self, sample: GpsSample, ego: GroundState) -> "PreviewBuffer":
        self._store.setdefault(sample.source, []).append(sample)
        self.prune(ego, (sample.source,))
        return self

    def prune(self, ego: GroundState, sources: tuple[str, ...] | None = None) -> None:
        """Re-sort by along-track distance from the ego and evict samples
        beyond the behind-ego retention margin."""
        ct, st = math.cos(ego.theta), math.sin(ego.theta)
        for src in sources if sources is not None else tuple(self._store):
            kept = []
            for s in self._store.get(src, ()):
                d = (s.x - ego.x) * ct + (s.y - ego.y) * st
                if d >= -self.behind_margin:
                    kept.append((d, s.t, s))
            kept.sort(key=lambda item: item[:2])
            self._store[src] = [s for _, _, s in kept]

    def samples(self, source: str) -> list[GpsSample]:
        return list(self._store.get(source, []))

    def active_window(self, ego: GroundState,
                      sources: tuple[str, ...] = (LEAD, PRECEDING)) -> list[tuple[float, float]]:
        """Points of the selected sources within [-behind_margin, l_preview]
        of the ego, merged and sorted by along-track distance."""
        ct, st = math.cos(ego.theta), math.sin(ego.theta)
        tagged = []
        for src in sources:
            for s in self._store.get(src, ()):
                d = (s.x - ego.x) * ct + (s.y - ego.y) * st
                if -self.behind_margin <= d <= self.l_preview:
                    tagged.append((d, s.t, s.x, s.y))
        tagged.sort()
        return [(x, y) for _, _, x, y in tagged]

    def window_count(self, ego: GroundState, source: str) -> int:
        return len(self.active_window(ego, (source,)))


def ingest(buffer: PreviewBuffer, sample: GpsSample, ego: GroundState) -> PreviewBuffer:
    return buffer.ingest(sample, ego)


def line_prefix_split(points, epsilon: float = DEFAULT_EPSILON):
    """Largest k >= 3 such that points 2..k-1 lie within epsilon
    (perpendicular distance) of the line through points 1 and k.

    Returns k (number of points in the line prefix), or None when even
    k = 3 fails. Raises InsufficientPreviewData for fewer than 3 points.
    """
    n = len(points)
    if n < 3:
        raise InsufficientPreviewData(f"line prefix test needs >= 3 points, got {n}")
    x0, y0 = points[0]
    for k in range(n, 2, -1):
        xk, yk = points[k - 1]
        dx, dy = xk - x0, yk - y0
        chord = math.hypot(dx, dy)
        if chord < 1e-12:
            continue
        ok = True
        for i in range(1, k - 1):
            xi, yi = points[i]
            dist = abs(dx * (yi - y0) - dy * (xi - x0)) / chord
            if dist > epsilon:
                ok = False
                break
        if ok:
            return k
    return None


def _tls_line(pts: np.ndarray, weights: np.ndarray) -> Line:
    """Total-least-squares line through weighted points, oriented along
    the travel order of the input."""
    w = weights / weights.sum()
    cx, cy = w @ pts
    centered = pts - (cx, cy)
    cov = (centered * w[:, None]).T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    ux, uy = eigvecs[:, np.argmax(eigvals)]
    head = pts[-1] - pts[0]
    if ux * head[0] + uy * head[1] < 0.0:
        ux, uy = -ux, -uy
    s = centered @ (ux, uy)
    s0, s1 = float(s.min()), float(s.max())
    if s1 - s0 <= 0.0:
        raise InsufficientPreviewData("degenerate point set: zero extent")
    return Line(x0=cx + s0 * ux, y0=cy + s0 * uy, ux=ux, uy=uy, span=s1 - s0)


def fit_circle(preceding_pts, lead_pts, alpha: float):
    """Weighted algebraic circle fit.

    Minimizes
        J = alpha * sum_p ((x-Xc)^2 + (y-Yc)^2 - R^2)^2
          + (1-alpha) * sum_l (...)^2
    over the preceding/lead point lists, which is linear in
    (Xc, Yc, R^2 - Xc^2 - Yc^2) and solved through the 3x3 normal
    equations. Near-singular systems (collinear data) fall back to a
    total-least-squares Line.

    Parameters
    ----------
    preceding_pts, lead_pts : sequences of (x, y) in travel order
    alpha : weight in [0, 1] on the preceding points

    Returns
    -------
    Arc or Line
        Arc with signed curvature and angular extents covering the input,
        or the degenerate Line.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    pts = []
    wts = []
    if alpha > 0.0:
        pts.extend(preceding_pts)
        wts.extend([alpha] * len(preceding_pts))
    if alpha < 1.0:
        pts.extend(lead_pts)
        wts.extend([1.0 - alpha] * len(lead_pts))
    if len(pts) < 3:
        raise InsufficientPreviewData(
            f"circle fit needs >= 3 effective points, got {len(pts)}")
    p = np.asarray(pts, dtype=float)
    w = np.asarray(wts, dtype=float)

    # Solve about the weighted centroid: conditioning then measures the
    # geometry (collinearity), not the distance from the ground origin.
    origin = (w / w.sum()) @ p
    q = p - origin
    design = np.column_stack([2.0 * q[:, 0], 2.0 * q[:, 1], np.ones(len(q))])
    rhs = q[:, 0] ** 2 + q[:, 1] ** 2
    normal = design.T @ (design * w[:, None])
    moment = design.T @ (w * rhs)

    svals = np.linalg.svd(normal, compute_uv=False)
    rcond = svals[-1] / svals[0] if svals[0] > 0.0 else 0.0
    if rcond < RCOND_DEGENERATE:
        return _tls_line(p, w)

    uc, vc, c = np.linalg.solve(normal, moment)
    r_sq = c + uc * uc + vc * vc
    if r_sq <= 0.0:
        return _tls_line(p, w)
    radius = math.sqrt(r_sq)
    xc, yc = origin[0] + uc, origin[1] + vc

    # Degeneracy guard beyond conditioning: keep the circle only when it
    # explains the data at least as well as the straight line does.
    # Scattered near-collinear clouds otherwise yield small-radius fits
    # whose geometric residuals exceed the line's.
    line = _tls_line(p, w)
    rho = np.hypot(p[:, 0] - xc, p[:, 1] - yc)
    sse_circle = float(w @ (rho - radius) ** 2)
    perp = (p[:, 0] - line.x0) * (-line.uy) + (p[:, 1] - line.y0) * line.ux
    sse_line = float(w @ perp ** 2)
    if sse_circle > sse_line:
        return line

    # A left (CCW) turn has the circle center on the left of the travel
    # direction; the TLS line carries the travel orientation of the input.
    # Robust on merged windows, where cross products of successive chords
    # can be dominated by hops between the interleaved source traces.
    side = (xc - origin[0]) * (-line.uy) + (yc - origin[1]) * line.ux
    sign = 1.0 if side > 0.0 else -1.0
    # Angular extent: spread of the point angles about the centroid angle
    # (windows subtend well under a half turn).
    phi_c = math.atan2(origin[1] - yc, origin[0] - xc)
    rel = np.mod(np.arctan2(p[:, 1] - yc, p[:, 0] - xc) - phi_c + math.pi,
                 2.0 * math.pi) - math.pi
    lo, hi = float(rel.min()), float(rel.max())
    if hi - lo <= 0.0:
        hi = lo + 1e-9
    start, stop = (phi_c + lo, phi_c + hi) if sign > 0 else (phi_c + hi, phi_c + lo)
    return Arc(cx=float(xc), cy=float(yc), radius=radius,
               curvature=sign / radius, start_angle=start, end_angle=stop)


COMPOSITE = "composite"
SEPARATE_LEAD = "separate_lead"
SEPARATE_PRECEDING = "separate_preceding"

_MODE_SOURCES = {
    COMPOSITE: (LEAD, PRECEDING),
    SEPARATE_LEAD: (LEAD,),
    SEPARATE_PRECEDING: (PRECEDING,),
}


def _point_segment_dist(seg, x: float, y: float) -> float:
    if isinstance(seg, Line):
        s = (x - seg.x0) * seg.ux + (y - seg.y0) * seg.uy
        s = min(max(s, 0.0), seg.span)
        px, py = seg.point_at(s)
        return math.hypot(x - px, y - py)
    return abs(math.hypot(x - seg.cx, y - seg.cy) - seg.radius)


def _sse(seg, points) -> float:
    return sum(_point_segment_dist(seg, x, y) ** 2 for x, y in points)


def compose_window(window, epsilon: float = DEFAULT_EPSILON) -> list:
    """Segment composition for one preview window: at most one straight
    prefix (least-squares line over the prefix points) followed by at
    most one arc on the remainder.

    The prefix test uses the p1->pk chord; the emitted segment is the
    least-squares line through all k prefix points, which averages the
    source traces in a merged window instead of jumping between
    whichever trace happens to supply the end points.

    Every curve is locally straight to within epsilon, so inside
    sustained curvature the largest-k rule still shaves off a pseudo
    prefix around the ego. The ego-adjacent half of the window
    arbitrates: when the whole-window circle explains the near half
    better than that half's own best straight line, the window is a
    single arc (which is what hands the ego a usable feedforward
    curvature); a genuine straight run under the ego keeps the split,
    whose remainder arc carries the exact downstream curvature.
    """
    n = len(window)
    if n < 3:
        raise InsufficientPreviewData(f"window has {n} points, need >= 3")
    k = line_prefix_split(window, epsilon)
    if k is None:
        return [fit_circle(window, (), 1.0)]
    prefix = _tls_line(np.asarray(window[:k], dtype=float), np.ones(k))
    if k == n:
        return [prefix]
    remainder = window[k - 1:]  # junction point shared with the prefix
    if len(remainder) < 3:
        return [_extend_line(prefix, window)]
    arc = fit_circle(remainder, (), 1.0)
    if isinstance(arc, Arc) and n >= 6:
        near = window[:(n + 1) // 2]
        near_line = _tls_line(np.asarray(near, dtype=float), np.ones(len(near)))
        whole = fit_circle(window, (), 1.0)
        if isinstance(whole, Arc) and _sse(whole, near) < _sse(near_line, near):
            return [whole]
    return [prefix, arc]


def build_target(buffer: PreviewBuffer, ego: GroundState, mode: str = COMPOSITE,
                 epsilon: float = DEFAULT_EPSILON) -> ArcSpline:
    """Fit the target trajectory to the active preview window.

    Composite mode merges lead and preceding samples into one point set;
    the separate modes use a single source. The window yields at most one
    line prefix followed by at most one arc; a remainder of fewer than 3
    points extends the line instead.

    Raises InsufficientPreviewData when the window has < 3 points; the
    caller decides whether to hold the previous target or fall back.
    """
    try:
        sources = _MODE_SOURCES[mode]
    except KeyError:
        raise ValueError(f"unknown target mode {mode!r}") from None
    window = buffer.active_window(ego, sources)
    if len(window) < 3:
        raise InsufficientPreviewData(
            f"active window has {len(window)} points, need >= 3")
    return ArcSpline(compose_window(window, epsilon))


def _extend_line(line: Line, window) -> Line:
    """Stretch a line prefix to cover the projection of the last point."""
    xe, ye = window[-1]
    span = max(line.span, (xe - line.x0) * line.ux + (ye - line.y0) * line.uy)
    return Line(x0=line.x0, y0=line.y0, ux=line.ux, uy=line.uy, span=span)


def segment_to_dict(seg: PathSegment) -> dict:
    if isinstance(seg, Line):
        return {"kind": "line", "x0": seg.x0, "y0": seg.y0,
                "ux": seg.ux, "uy": seg.uy, "span": seg.span}
    return {"kind": "arc", "cx": seg.cx, "cy": seg.cy, "radius": seg.radius,
            "curvature": seg.curvature, "start_angle": seg.start_angle,
            "end_angle": seg.end_angle, "span": seg.span}


def segment_from_dict(d: dict) -> PathSegment:
    kind = d.get("kind")
    if kind == "line":
        return Line(x0=d["x0"], y0=d["y0"], ux=d["ux"], uy=d["uy"], span=d["span"])
    if kind == "arc":
        return Arc(cx=d["cx"], cy=d["cy"], radius=d["radius"],
                   curvature=d["curvature"], start_angle=d["start_angle"],
                   end_angle=d["end_angle"])
    raise ValueError(f"unknown segment kind {kind!r}")
