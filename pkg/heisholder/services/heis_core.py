"""
Heisenberg group arithmetic and Carnot-Caratheodory geometry.

Points are (x, y, z) in exponential coordinates with the product
(x, y, z)(x', y', z') = (x + x', y + y', z + z' + x y'). The metric is the
standard one: X = d/dx, Y = d/dy + x d/dz and Z = d/dz are orthonormal.
Distances are solved exactly through the Dido problem; every scalar
operation has a vectorized companion working on (..., 3) arrays.
"""
import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, FiniteFloat
from scipy import integrate

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
MAX_BISECTION_STEPS = 200

# Bracket ends for the log-space bisection; outside them the arc is
# numerically a straight chord or a full circle.
_THETA_FLOOR = 1e-300
_EPS_FLOOR = 1e-150

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(32)


class ConvergenceError(RuntimeError):
    """Raised when the geodesic root-finder does not reach its tolerance."""


class HPoint(BaseModel):
    """A point of the Heisenberg group."""

    model_config = ConfigDict(frozen=True)

    x: FiniteFloat = 0.0
    y: FiniteFloat = 0.0
    z: FiniteFloat = 0.0

    @classmethod
    def of(cls, x: float, y: float, z: float) -> "HPoint":
        return cls(x=float(x), y=float(y), z=float(z))

    @classmethod
    def from_array(cls, values) -> "HPoint":
        x, y, z = (float(v) for v in values)
        return cls(x=x, y=y, z=z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def as_list(self) -> list:
        return [self.x, self.y, self.z]


IDENTITY = HPoint()


@dataclass(frozen=True)
class GeodesicArc:
    """Planar data of a geodesic leaving the identity: the projection is a
    circular arc (or segment) with initial heading and signed curvature."""

    heading: float
    curvature: float
    length: float


def mul(p: HPoint, q: HPoint) -> HPoint:
    return HPoint(x=p.x + q.x, y=p.y + q.y, z=p.z + q.z + p.x * q.y)


def inv(p: HPoint) -> HPoint:
    return HPoint(x=-p.x, y=-p.y, z=-p.z + p.x * p.y)


def dilate(r: float, p: HPoint) -> HPoint:
    if r < 0:
        raise ValueError(f"dilation factor must be nonnegative, got {r}")
    return HPoint(x=r * p.x, y=r * p.y, z=r * r * p.z)


def mul_array(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = p + q
    out[..., 2] = p[..., 2] + q[..., 2] + p[..., 0] * q[..., 1]
    return out


def inv_array(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = -p
    out[..., 2] = -p[..., 2] + p[..., 0] * p[..., 1]
    return out


def dilate_array(r, p: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("dilation factor must be nonnegative")
    p = np.asarray(p, dtype=float)
    out = p * r[..., None] if r.ndim else p * r
    out[..., 2] = p[..., 2] * r * r
    return out


def _dido_ratio_low(theta: np.ndarray) -> np.ndarray:
    """Area/chord^2 of a circular arc turning by theta in (0, pi]."""
    small = theta < 1e-3
    t = np.where(small, 1.0, theta)
    exact = (t - np.sin(t)) / (8.0 * np.sin(t / 2.0) ** 2)
    sq = theta * theta
    series = theta / 12.0 * (1.0 - sq / 20.0 + sq * sq / 840.0) / (1.0 - sq / 12.0 + sq * sq / 360.0)
    return np.where(small, series, exact)


def _dido_ratio_high(eps: np.ndarray) -> np.ndarray:
    """Same ratio for the arc turning by 2*pi - eps, eps in (0, pi]."""
    return (2.0 * math.pi - eps + np.sin(eps)) / (8.0 * np.sin(eps / 2.0) ** 2)


def _bisect_log(func, target: np.ndarray, lo: float, hi: float, increasing: bool,
                length_of, area_scale: np.ndarray, tol: float) -> np.ndarray:
    """Bisect func(exp(w)) = target over w in [log lo, log hi].

    Stops per entry once the bracketing lengths and the bracketing areas
    (func times area_scale) both agree to tol/4, or the log-bracket is at
    machine resolution.
    """
    w_lo = np.full(target.shape, math.log(lo))
    w_hi = np.full(target.shape, math.log(hi))
    for _ in range(MAX_BISECTION_STEPS):
        th_lo, th_hi = np.exp(w_lo), np.exp(w_hi)
        loose = (np.abs(length_of(th_hi) - length_of(th_lo)) > 0.25 * tol) | (
            np.abs(func(th_hi) - func(th_lo)) * area_scale > 0.25 * tol
        )
        active = loose & (w_hi - w_lo > 4e-16 * np.maximum(1.0, np.abs(w_lo)))
        if not np.any(active):
            break
        mid = 0.5 * (w_lo + w_hi)
        above = func(np.exp(mid)) > target
        go_low = above if increasing else ~above
        w_hi = np.where(active & go_low, mid, w_hi)
        w_lo = np.where(active & ~go_low, mid, w_lo)
    len_lo = length_of(np.exp(w_lo))
    len_hi = length_of(np.exp(w_hi))
    slack = tol + 8.0 * np.spacing(np.maximum(np.abs(len_lo), np.abs(len_hi)))
    if np.any(np.abs(len_hi - len_lo) > slack):
        worst = float(np.max(np.abs(len_hi - len_lo)))
        raise ConvergenceError(
            f"Dido bisection did not converge: length bracket {worst:.3e} exceeds tol {tol:.1e}"
        )
    return 0.5 * (w_lo + w_hi)


def _solve_dido(chord: np.ndarray, area: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Solve the Dido problem for chords and signed areas.

    Returns (length, turning) where turning is the total angle swept by the
    arc (0 for a segment, 2*pi for a full circle).
    """
    chord = np.asarray(chord, dtype=float)
    abs_area = np.abs(np.asarray(area, dtype=float))
    length = np.array(chord, copy=True)
    turning = np.zeros_like(chord)

    vertical = (chord == 0.0) & (abs_area > 0.0)
    length[vertical] = 2.0 * np.sqrt(math.pi * abs_area[vertical])
    turning[vertical] = 2.0 * math.pi

    curved = (chord > 0.0) & (abs_area > 0.0)
    if np.any(curved):
        c = chord[curved]
        tau = abs_area[curved] / (c * c)
        low = tau <= math.pi / 8.0
        arc_len = np.empty_like(c)
        arc_turn = np.empty_like(c)

        idx = np.flatnonzero(low)
        if idx.size:
            t_tau, t_c = tau[idx], c[idx]
            flat = t_tau <= _dido_ratio_low(np.array([_THETA_FLOOR]))[0]
            theta = np.zeros_like(t_tau)
            solve = ~flat
            if np.any(solve):
                cs = t_c[solve]
                w = _bisect_log(
                    _dido_ratio_low, t_tau[solve], _THETA_FLOOR, math.pi, True,
                    lambda th: cs * th / (2.0 * np.sin(th / 2.0)), cs * cs, tol,
                )
                theta[solve] = np.exp(w)
            arc_turn[idx] = theta
            safe = np.where(theta > 0.0, theta, 1.0)
            arc_len[idx] = np.where(theta > 0.0, t_c * safe / (2.0 * np.sin(safe / 2.0)), t_c)

        idx = np.flatnonzero(~low)
        if idx.size:
            t_tau, t_c = tau[idx], c[idx]
            circle = t_tau >= _dido_ratio_high(np.array([_EPS_FLOOR]))[0]
            eps = np.zeros_like(t_tau)
            solve = ~circle
            if np.any(solve):
                cs = t_c[solve]
                w = _bisect_log(
                    _dido_ratio_high, t_tau[solve], _EPS_FLOOR, math.pi, False,
                    lambda e: cs * (2.0 * math.pi - e) / (2.0 * np.sin(e / 2.0)), cs * cs, tol,
                )
                eps[solve] = np.exp(w)
            arc_turn[idx] = 2.0 * math.pi - eps
            safe = np.where(eps > 0.0, eps, 1.0)
            full = 2.0 * np.sqrt(math.pi * t_tau * t_c * t_c)
            arc_len[idx] = np.where(eps > 0.0, t_c * (2.0 * math.pi - eps) / (2.0 * np.sin(safe / 2.0)), full)

        length[curved] = arc_len
        turning[curved] = arc_turn
    return length, turning


def _check_tol(tol: float) -> None:
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")


def cc_distance_array(p: np.ndarray, q: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    _check_tol(tol)
    d = mul_array(inv_array(p), q)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    length, _ = _solve_dido(np.hypot(x, y).ravel(), (z - 0.5 * x * y).ravel(), tol)
    return length.reshape(x.shape)


def cc_distance(p: HPoint, q: HPoint, tol: float = DEFAULT_TOL) -> float:
    _check_tol(tol)
    if p == q:
        return 0.0
    return float(cc_distance_array(p.as_array()[None, :], q.as_array()[None, :], tol)[0])


def solve_geodesic(p: HPoint, q: HPoint, tol: float = DEFAULT_TOL) -> GeodesicArc:
    return solve_geodesic_array(p.as_array()[None, :], q.as_array()[None, :], tol)[0]


def solve_geodesic_array(p: np.ndarray, q: np.ndarray, tol: float = DEFAULT_TOL) -> list:
    """Geodesic arcs for many endpoint pairs at once (rows of p and q)."""
    _check_tol(tol)
    d = mul_array(inv_array(np.atleast_2d(p)), np.atleast_2d(q))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    chord = np.hypot(x, y)
    area = z - 0.5 * x * y
    length, turning = _solve_dido(chord, area, tol)
    sign = np.sign(area)
    bearing = np.where(chord > 0.0, np.arctan2(y, x), 0.0)
    heading = bearing - sign * turning / 2.0
    safe = np.where(length > 0.0, length, 1.0)
    curvature = np.where(length > 0.0, sign * turning / safe, 0.0)
    return [GeodesicArc(float(h), float(k), float(l)) for h, k, l in zip(heading, curvature, length)]


def _sinc(u: np.ndarray) -> np.ndarray:
    return np.sinc(u / math.pi)


def _swept(phi: np.ndarray) -> np.ndarray:
    """(phi - sin phi) / phi^2, odd in phi."""
    small = np.abs(phi) < 1e-3
    p = np.where(small, 1.0, phi)
    exact = (p - np.sin(p)) / (p * p)
    series = phi / 6.0 - phi ** 3 / 120.0 + phi ** 5 / 5040.0
    return np.where(small, series, exact)


def arc_offsets(heading: float, curvature: float, t: np.ndarray) -> np.ndarray:
    """Group elements reached from the identity after arc length t along the
    horizontal lift of the planar arc (heading, curvature)."""
    t = np.asarray(t, dtype=float)
    phi = curvature * t
    mid = heading + phi / 2.0
    s = t * _sinc(phi / 2.0)
    a = s * np.cos(mid)
    b = s * np.sin(mid)
    c = 0.5 * a * b + 0.5 * t * t * _swept(phi)
    return np.stack([a, b, c], axis=-1)


def straight_offsets(delta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Points of the straight coordinate chord with increment delta, lifted
    so that the vertical defect is spread uniformly."""
    u = np.asarray(u, dtype=float)
    dx, dy, dz = (float(v) for v in delta)
    a = u * dx
    b = u * dy
    c = u * dz + (u * u - u) * dx * dy / 2.0
    return np.stack([a, b, c], axis=-1)


def riemannian_length(curve) -> float:
    """Length under the left-invariant metric, integrating the frame
    coefficients (x', y', z' - x y') of the tangent with Gauss-Legendre."""
    total = 0.0
    for segment in curve.segments:
        u = 0.5 * (_GAUSS_NODES + 1.0)
        velocity = segment.frame_velocity(u)
        total += 0.5 * float(np.dot(_GAUSS_WEIGHTS, np.linalg.norm(velocity, axis=-1)))
    return total


def straight_segment_length_array(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Riemannian length of t -> p + t (q - p) in coordinates, an upper proxy
    for the Riemannian distance."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    d = q - p
    u = 0.5 * (_GAUSS_NODES + 1.0)
    x = p[:, 0, None] + u[None, :] * d[:, 0, None]
    vertical = d[:, 2, None] - x * d[:, 1, None]
    speed = np.sqrt(d[:, 0, None] ** 2 + d[:, 1, None] ** 2 + vertical ** 2)
    return 0.5 * speed @ _GAUSS_WEIGHTS


def cc_geodesic(p: HPoint, q: HPoint, samples: int = 64, tol: float = DEFAULT_TOL):
    """Horizontal curve from p to q of length d_c(p, q)."""
    from heisholder.services.curves import Arc, Chord, HCurve, SegmentMode

    if samples < 2:
        raise ValueError(f"samples must be at least 2, got {samples}")
    _check_tol(tol)
    if p == q:
        return HCurve.from_segments([Chord(p, q, SegmentMode.STRAIGHT)], samples=samples)
    arc = solve_geodesic(p, q, tol)
    if arc.curvature == 0.0:
        segment = Chord(p, q, SegmentMode.STRAIGHT)
    else:
        segment = Arc(anchor=p, heading=arc.heading, curvature=arc.curvature, t0=0.0, t1=arc.length)
    logger.debug(f"Geodesic solved: length={arc.length:.6g}, curvature={arc.curvature:.6g}")
    return HCurve.from_segments([segment], samples=samples)


@dataclass(frozen=True)
class MetricComparison:
    L: float
    violations: int
    pairs: int
    worst_ratio: float


def metric_comparison_report(samples: int, box: float, seed: int, tol: float = DEFAULT_TOL,
                             chunk: int = 1 << 14) -> MetricComparison:
    """Fit the least L with d_c <= L * proxy + L on random pairs in [-box, box]^3.

    The planar projection is 1-Lipschitz for the Riemannian metric, so
    planar <= d_0 <= d_c must hold for every pair; failures are counted.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    rng = np.random.default_rng(seed)
    fitted = 0.0
    violations = 0
    for start in range(0, samples, chunk):
        size = min(chunk, samples - start)
        p = rng.uniform(-box, box, size=(size, 3))
        q = rng.uniform(-box, box, size=(size, 3))
        batch = metric_comparison_pairs(p, q, tol)
        fitted = max(fitted, batch.L)
        violations += batch.violations
    logger.info(f"Metric comparison on {samples} pairs in box {box}: L={fitted:.6g}, violations={violations}")
    return MetricComparison(L=fitted, violations=violations, pairs=samples, worst_ratio=fitted)


def metric_comparison_pairs(p: np.ndarray, q: np.ndarray, tol: float = DEFAULT_TOL) -> MetricComparison:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    dc = cc_distance_array(p, q, tol)
    proxy = straight_segment_length_array(p, q)
    planar = np.hypot(q[:, 0] - p[:, 0], q[:, 1] - p[:, 1])
    ratio = dc / (proxy + 1.0)
    violations = int(np.count_nonzero(planar > dc + tol))
    fitted = float(np.max(ratio)) if ratio.size else 0.0
    return MetricComparison(L=fitted, violations=violations, pairs=len(p), worst_ratio=fitted)


def verify_metric_comparison(samples: int, box: float, seed: int, tol: float = DEFAULT_TOL) -> float:
    report = metric_comparison_report(samples, box, seed, tol)
    if report.violations:
        raise AssertionError(
            f"projection bound violated on {report.violations} of {report.pairs} pairs"
        )
    return report.L


def _scaling_speed(x: HPoint):
    a = x.x * x.x + x.y * x.y
    w = 2.0 * x.z - x.x * x.y
    return lambda r: math.sqrt(a + (r * w) ** 2)


def scaling_curve_length(x: HPoint, s: float, t: float) -> float:
    """Riemannian length of r -> dilate(r, x) over [s, t]."""
    if not 0.0 <= s <= t <= 1.0:
        raise ValueError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")
    if s == t:
        return 0.0
    value, _ = integrate.quad(_scaling_speed(x), s, t, epsabs=1e-13, epsrel=1e-12)
    return float(value)


def fit_scaling_constant(samples: int, box: float, seed: int, tol: float = DEFAULT_TOL) -> float:
    """Least L with speed <= L (d_c(x, 0) + 1)^2 along every scaling curve.

    The speed of r -> dilate(r, x) is increasing in r, so the supremum of
    length / |t - s| is the speed at r = 1.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box, box, size=(samples, 3))
    speed = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2 + (2.0 * pts[:, 2] - pts[:, 0] * pts[:, 1]) ** 2)
    norm = cc_distance_array(np.zeros_like(pts), pts, tol)
    return float(np.max(speed / (norm + 1.0) ** 2))
