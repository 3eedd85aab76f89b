"""
Horizontal curves in the Heisenberg group.

A curve is a tuple of exact segments (coordinate chords and circular-arc
geodesics) plus a piecewise-linear parameter map from [0, 1] to the arc
length fraction. Segments are values: they serialize, translate and dilate
without resampling.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from heisholder.services.heis_core import (
    DEFAULT_TOL,
    HPoint,
    arc_offsets,
    dilate,
    inv,
    mul,
    mul_array,
    solve_geodesic,
    straight_offsets,
)

logger = logging.getLogger(__name__)

CLOSURE_TOL = 1e-9
RECLOSE_TOL = 1e-6
_SNAP = 1e-13


class SegmentMode(str, Enum):
    STRAIGHT = "straight-horizontal"
    GEODESIC = "cc-geodesic"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class Chord:
    """Path with constant left-invariant velocity from p0 to p1.

    For a horizontal pair this is the lift of the planar segment; a vertical
    pair gives the fibre segment.
    """

    p0: HPoint
    p1: HPoint
    mode: SegmentMode = SegmentMode.STRAIGHT

    @cached_property
    def increment(self) -> np.ndarray:
        return mul(inv(self.p0), self.p1).as_array()

    @property
    def start(self) -> HPoint:
        return self.p0

    @property
    def end(self) -> HPoint:
        return self.p1

    @cached_property
    def length(self) -> float:
        dx, dy, dz = self.increment
        return math.sqrt(dx * dx + dy * dy + (dz - dx * dy / 2.0) ** 2)

    @cached_property
    def planar_length(self) -> float:
        return math.hypot(self.p1.x - self.p0.x, self.p1.y - self.p0.y)

    def defect(self) -> float:
        """Deviation from the lift relation dz = (x0 + x1) dy / 2."""
        p, q = self.p0, self.p1
        return (q.z - p.z) - (p.x + q.x) * (q.y - p.y) / 2.0

    def points(self, s: np.ndarray) -> np.ndarray:
        return mul_array(self.p0.as_array(), straight_offsets(self.increment, s))

    def point(self, s: float) -> HPoint:
        if s <= 0.0:
            return self.p0
        if s >= 1.0:
            return self.p1
        return HPoint.from_array(self.points(np.array([s]))[0])

    def frame_velocity(self, s: np.ndarray) -> np.ndarray:
        dx, dy, dz = self.increment
        row = np.array([dx, dy, dz - dx * dy / 2.0])
        return np.broadcast_to(row, (len(np.atleast_1d(s)), 3))

    def piece(self, sa: float, sb: float) -> "Chord":
        return Chord(self.point(sa), self.point(sb), self.mode)

    def reversed(self) -> "Chord":
        return Chord(self.p1, self.p0, self.mode)

    def left_translate(self, g: HPoint) -> "Chord":
        return Chord(mul(g, self.p0), mul(g, self.p1), self.mode)

    def dilate(self, r: float) -> "Chord":
        return Chord(dilate(r, self.p0), dilate(r, self.p1), self.mode)

    def to_dict(self) -> dict:
        return {"kind": "chord", "mode": self.mode.value, "start": self.p0.as_list(), "end": self.p1.as_list()}


@dataclass(frozen=True)
class Arc:
    """Lift of a planar circular arc, traversed over arc length [t0, t1]
    from the anchor (the point at arc length 0)."""

    anchor: HPoint
    heading: float
    curvature: float
    t0: float
    t1: float
    mode: SegmentMode = field(default=SegmentMode.GEODESIC)

    def _at(self, t: np.ndarray) -> np.ndarray:
        return mul_array(self.anchor.as_array(), arc_offsets(self.heading, self.curvature, t))

    @cached_property
    def start(self) -> HPoint:
        return self.anchor if self.t0 == 0.0 else HPoint.from_array(self._at(np.array([self.t0]))[0])

    @cached_property
    def end(self) -> HPoint:
        return self.anchor if self.t1 == 0.0 else HPoint.from_array(self._at(np.array([self.t1]))[0])

    @property
    def length(self) -> float:
        return abs(self.t1 - self.t0)

    @property
    def planar_length(self) -> float:
        return self.length

    def defect(self) -> float:
        return 0.0

    def points(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self._at(self.t0 + s * (self.t1 - self.t0))

    def point(self, s: float) -> HPoint:
        if s <= 0.0:
            return self.start
        if s >= 1.0:
            return self.end
        return HPoint.from_array(self.points(np.array([s]))[0])

    def frame_velocity(self, s: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        span = self.t1 - self.t0
        angle = self.heading + self.curvature * (self.t0 + s * span)
        return np.stack([span * np.cos(angle), span * np.sin(angle), np.zeros_like(angle)], axis=-1)

    def piece(self, sa: float, sb: float) -> "Arc":
        span = self.t1 - self.t0
        return Arc(self.anchor, self.heading, self.curvature, self.t0 + sa * span, self.t0 + sb * span)

    def reversed(self) -> "Arc":
        return Arc(self.anchor, self.heading, self.curvature, self.t1, self.t0)

    def left_translate(self, g: HPoint) -> "Arc":
        return Arc(mul(g, self.anchor), self.heading, self.curvature, self.t0, self.t1)

    def dilate(self, r: float) -> Union["Arc", Chord]:
        if r == 0.0:
            origin = dilate(0.0, self.anchor)
            return Chord(origin, origin)
        return Arc(dilate(r, self.anchor), self.heading, self.curvature / r, r * self.t0, r * self.t1)

    def to_dict(self) -> dict:
        return {
            "kind": "arc",
            "anchor": self.anchor.as_list(),
            "heading": self.heading,
            "curvature": self.curvature,
            "t0": self.t0,
            "t1": self.t1,
        }


Segment = Union[Chord, Arc]


def segment_from_dict(data: dict) -> Segment:
    if data["kind"] == "arc":
        return Arc(HPoint.from_array(data["anchor"]), float(data["heading"]), float(data["curvature"]),
                   float(data["t0"]), float(data["t1"]))
    return Chord(HPoint.from_array(data["start"]), HPoint.from_array(data["end"]), SegmentMode(data["mode"]))


def _close(p: HPoint, q: HPoint, tol: float) -> bool:
    scale = 1.0 + max(abs(p.x), abs(p.y), abs(p.z))
    return max(abs(p.x - q.x), abs(p.y - q.y), abs(p.z - q.z)) <= tol * scale


@dataclass(frozen=True)
class HCurve:
    segments: Tuple[Segment, ...]
    closed: bool = False
    knots_t: Tuple[float, ...] = (0.0, 1.0)
    knots_s: Tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a curve needs at least one segment")
        t = np.asarray(self.knots_t)
        s = np.asarray(self.knots_s)
        if t.shape != s.shape or t.size < 2:
            raise ValueError("param knots must be two equal-length sequences of at least 2 values")
        if t[0] != 0.0 or t[-1] != 1.0 or s[0] != 0.0 or s[-1] != 1.0:
            raise ValueError("param knots must run from 0 to 1")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError("param must be strictly monotone")
        if self.closed and not _close(self.segments[0].start, self.segments[-1].end, CLOSURE_TOL):
            raise ValueError("closed curve must end where it starts")

    @classmethod
    def from_segments(cls, segments: Sequence[Segment], closed: bool = False, samples: int = 2) -> "HCurve":
        knots = tuple(np.linspace(0.0, 1.0, max(int(samples), 2)).tolist())
        return cls(tuple(segments), closed, knots, knots)

    @classmethod
    def concatenate(cls, curves: Iterable["HCurve"], closed: bool = False) -> "HCurve":
        segments: List[Segment] = []
        for curve in curves:
            segments.extend(curve.segments)
        return cls.from_segments(segments, closed=closed)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([seg.length for seg in self.segments], dtype=float)

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.lengths)])

    @property
    def total_length(self) -> float:
        return float(self.cumulative[-1])

    @property
    def vertices(self) -> List[HPoint]:
        return [seg.start for seg in self.segments] + [self.segments[-1].end]

    @property
    def modes(self) -> List[SegmentMode]:
        return [seg.mode for seg in self.segments]

    @property
    def start(self) -> HPoint:
        return self.segments[0].start

    @property
    def end(self) -> HPoint:
        return self.segments[-1].end

    def _locate(self, fraction: float) -> Tuple[int, float]:
        total = self.total_length
        if total == 0.0:
            return 0, 0.0
        target = min(max(fraction, 0.0), 1.0) * total
        idx = int(np.searchsorted(self.cumulative, target, side="right")) - 1
        idx = min(max(idx, 0), len(self.segments) - 1)
        seg_len = self.lengths[idx]
        local = (target - self.cumulative[idx]) / seg_len if seg_len > 0 else 0.0
        if local < _SNAP:
            local = 0.0
        elif local > 1.0 - _SNAP:
            local = 1.0
        return idx, local

    def point_at_fraction(self, fraction: float) -> HPoint:
        """Point at the given fraction of arc length."""
        if fraction <= 0.0:
            return self.start
        if fraction >= 1.0:
            return self.end
        idx, local = self._locate(fraction)
        return self.segments[idx].point(local)

    def fraction_of(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.closed:
            t = np.mod(t, 1.0)
        elif np.any((t < 0.0) | (t > 1.0)):
            raise ValueError("open curve parameter must lie in [0, 1]")
        return np.interp(t, self.knots_t, self.knots_s)

    def at(self, t: float) -> HPoint:
        return self.point_at_fraction(float(self.fraction_of(t)))

    def points_at_fractions(self, fractions: np.ndarray) -> np.ndarray:
        fractions = np.clip(np.asarray(fractions, dtype=float), 0.0, 1.0)
        out = np.empty(fractions.shape + (3,))
        total = self.total_length
        if total == 0.0:
            out[...] = self.start.as_array()
            return out
        target = fractions * total
        idx = np.clip(np.searchsorted(self.cumulative, target, side="right") - 1, 0, len(self.segments) - 1)
        for k in np.unique(idx):
            mask = idx == k
            seg_len = self.lengths[k]
            local = (target[mask] - self.cumulative[k]) / seg_len if seg_len > 0 else np.zeros(mask.sum())
            out[mask] = self.segments[k].points(np.clip(local, 0.0, 1.0))
        return out

    def sample(self, per_segment: int = 16) -> np.ndarray:
        """Polyline through every segment, per_segment points each, joints shared."""
        parts = []
        s = np.linspace(0.0, 1.0, per_segment + 1)
        for k, seg in enumerate(self.segments):
            pts = seg.points(s)
            parts.append(pts if k == 0 else pts[1:])
        return np.vstack(parts)

    def subcurve(self, fa: float, fb: float) -> "HCurve":
        """Open piece between two arc-length fractions (fa < fb)."""
        if not 0.0 <= fa < fb <= 1.0:
            raise ValueError(f"need 0 <= fa < fb <= 1, got {fa}, {fb}")
        ia, la = self._locate(fa)
        ib, lb = self._locate(fb)
        if fb >= 1.0:
            ib, lb = len(self.segments) - 1, 1.0
        if fa <= 0.0:
            ia, la = 0, 0.0
        if lb == 0.0 and ib > ia:
            ib, lb = ib - 1, 1.0
        if la == 1.0 and ia < ib:
            ia, la = ia + 1, 0.0
        pieces: List[Segment] = []
        for k in range(ia, ib + 1):
            seg = self.segments[k]
            sa = la if k == ia else 0.0
            sb = lb if k == ib else 1.0
            pieces.append(seg if (sa == 0.0 and sb == 1.0) else seg.piece(sa, sb))
        return HCurve.from_segments(pieces)

    def with_param(self, knots_t: Sequence[float], knots_s: Sequence[float]) -> "HCurve":
        return HCurve(self.segments, self.closed, tuple(knots_t), tuple(knots_s))

    def left_translate(self, g: HPoint) -> "HCurve":
        return HCurve(tuple(seg.left_translate(g) for seg in self.segments), self.closed, self.knots_t, self.knots_s)

    def dilate(self, r: float) -> "HCurve":
        if r < 0:
            raise ValueError(f"dilation factor must be nonnegative, got {r}")
        return HCurve(tuple(seg.dilate(r) for seg in self.segments), self.closed, self.knots_t, self.knots_s)

    def reversed(self) -> "HCurve":
        knots_t = tuple((1.0 - np.asarray(self.knots_t[::-1])).tolist())
        knots_s = tuple((1.0 - np.asarray(self.knots_s[::-1])).tolist())
        segments = tuple(seg.reversed() for seg in reversed(self.segments))
        return HCurve(segments, self.closed, knots_t, knots_s)

    def is_constant_speed(self, rel: float = 1e-12) -> bool:
        t = np.asarray(self.knots_t)
        s = np.asarray(self.knots_s)
        return bool(np.all(np.abs(t - s) <= rel))


def horizontal_lift(planar: Sequence[Sequence[float]], z0: float = 0.0) -> HCurve:
    """Horizontal lift of a planar polyline starting at height z0.

    Across each planar segment z grows by the integral of x dy. Repeated
    consecutive points are dropped; the parameter is uniform per segment.
    """
    pts = [(float(p[0]), float(p[1])) for p in planar]
    if len(pts) < 2:
        raise ValueError("a planar polyline needs at least 2 points")
    distinct = [pts[0]] + [q for p, q in zip(pts, pts[1:]) if q != p]
    first = HPoint.of(distinct[0][0], distinct[0][1], z0)
    if len(distinct) == 1:
        return HCurve.from_segments([Chord(first, first)])

    vertices = [first]
    for (x0, y0), (x1, y1) in zip(distinct, distinct[1:]):
        z = vertices[-1].z + (x0 + x1) * (y1 - y0) / 2.0
        vertices.append(HPoint.of(x1, y1, z))
    segments = tuple(Chord(a, b) for a, b in zip(vertices, vertices[1:]))

    closed = distinct[0] == distinct[-1] and abs(vertices[-1].z - z0) <= CLOSURE_TOL
    lengths = np.array([seg.planar_length for seg in segments])
    knots_t = np.linspace(0.0, 1.0, len(segments) + 1)
    knots_s = np.concatenate([[0.0], np.cumsum(lengths)]) / lengths.sum()
    knots_s[-1] = 1.0
    logger.debug(f"Lifted {len(distinct)} planar points, z-defect {vertices[-1].z - z0:.6g}")
    return HCurve(segments, closed, tuple(knots_t.tolist()), tuple(knots_s.tolist()))


def constant_speed(c: HCurve, samples: int = 64) -> HCurve:
    """Reparametrize by arc length, keeping samples knots per segment."""
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    if c.total_length == 0.0:
        raise ValueError("cannot reparametrize a zero-length curve")
    knots = tuple(np.linspace(0.0, 1.0, samples * len(c.segments) + 1).tolist())
    return c.with_param(knots, knots)


def translate_to_origin(c: HCurve) -> Tuple[HCurve, HPoint]:
    g = c.at(0.0)
    return c.left_translate(inv(g)), g


def reclose(c: HCurve, rel: float = RECLOSE_TOL) -> HCurve:
    """Closed copy of c whose last segment ends exactly where the first starts.

    The gap may be at most rel times the length in the plane and rel times
    the squared length along z. A closing arc is re-anchored at its end.
    """
    start, end = c.start, c.end
    length = max(c.total_length, np.finfo(float).tiny)
    planar_gap = math.hypot(end.x - start.x, end.y - start.y)
    if planar_gap > rel * length or abs(end.z - start.z) > rel * length * length:
        raise ValueError(f"closing gap {planar_gap:.3e} (z {end.z - start.z:.3e}) too large for length {length:.6g}")
    last = c.segments[-1]
    if isinstance(last, Arc):
        snapped: Segment = Arc(start, last.heading + last.curvature * last.t1, last.curvature,
                               last.t0 - last.t1, 0.0, last.mode)
    else:
        snapped = Chord(last.p0, start, last.mode)
    return HCurve(c.segments[:-1] + (snapped,), True, c.knots_t, c.knots_s)


def normalize_closed(c: HCurve, r: float) -> Tuple[HCurve, HPoint]:
    """Move the start of a closed curve to 0 and dilate by r, re-closed exactly.

    Returns the normalized curve and the start g, so that c is
    g * dilate(1/r, normalized).
    """
    if not c.closed:
        raise ValueError("normalize_closed needs a closed curve")
    g = c.start
    opened = HCurve(c.segments, False, c.knots_t, c.knots_s)
    return reclose(opened.left_translate(inv(g)).dilate(r)), g


def curve_length_dc(c: HCurve) -> float:
    total = 0.0
    for seg in c.segments:
        if seg.mode is SegmentMode.VERTICAL:
            if seg.length > 0.0:
                raise ValueError("vertical segments have infinite Carnot length")
            continue
        total += seg.planar_length
    return total


def is_horizontal(c: HCurve, tol: float = DEFAULT_TOL) -> bool:
    for seg in c.segments:
        if seg.mode is SegmentMode.VERTICAL:
            if seg.length > 0.0:
                return False
            continue
        if abs(seg.defect()) > tol * max(seg.length, 1e-300):
            if seg.length > 0.0 or seg.defect() != 0.0:
                return False
    return True


def close_with_geodesic(c: HCurve, tol: float = DEFAULT_TOL) -> HCurve:
    """Close an open curve with one Carnot geodesic from its end to its start."""
    if _close(c.start, c.end, CLOSURE_TOL):
        return HCurve(c.segments, True, c.knots_t, c.knots_s)
    arc = solve_geodesic(c.end, c.start, tol)
    if arc.curvature == 0.0:
        closing: Segment = Chord(c.end, c.start)
    else:
        closing = Arc(c.end, arc.heading, arc.curvature, 0.0, arc.length)
    return HCurve.from_segments(list(c.segments) + [closing], closed=True)


def planar_shoelace(planar: Sequence[Sequence[float]]) -> float:
    """Integral of x dy around a closed planar polygon."""
    pts = np.asarray(planar, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return float(np.sum((x[:-1] + x[1:]) * (y[1:] - y[:-1])) / 2.0)


def signed_area(c: HCurve) -> float:
    """Integral of x dy along the planar projection of c.

    For a horizontal curve this is the z gained along it, so it vanishes on
    closed horizontal curves.
    """
    total = 0.0
    for seg in c.segments:
        p, q = seg.start, seg.end
        if isinstance(seg, Arc):
            total += q.z - p.z
        else:
            total += (p.x + q.x) * (q.y - p.y) / 2.0
    return total
