"""
Brute-force geodesic oracle.

A horizontal curve is fixed by its planar projection, so the shortest
polygonal curve from 0 to (x, y, z) is the shortest planar K-gon path from
(0, 0) to (x, y) whose lift gains exactly z. SLSQP minimizes the polygon
length under that single equality constraint.
"""
import math

import numpy as np
from scipy.optimize import minimize


def _initial_path(x: float, y: float, z: float, K: int) -> np.ndarray:
    """Circular arc whose turning angle comes from a coarse grid search."""
    u = np.linspace(0.0, 1.0, K + 1)
    chord = math.hypot(x, y)
    area = z - 0.5 * x * y
    sign = 1.0 if area >= 0 else -1.0
    if chord < 1e-12:
        radius = math.sqrt(abs(z) / math.pi)
        theta = 2.0 * math.pi * u
        return np.stack([radius - radius * np.cos(theta), -sign * radius * np.sin(theta)], axis=1)
    grid = np.linspace(1e-4, 2.0 * math.pi - 1e-4, 20001)
    ratios = (grid - np.sin(grid)) / (8.0 * np.sin(grid / 2.0) ** 2)
    tau = abs(area) / (chord * chord)
    if tau < ratios[0]:
        return u[:, None] * np.array([x, y])
    turning = grid[int(np.argmin(np.abs(ratios - tau)))]
    length = chord * turning / (2.0 * math.sin(turning / 2.0))
    curvature = sign * turning / length
    heading = math.atan2(y, x) - sign * turning / 2.0
    s = u * length
    px = (np.sin(heading + curvature * s) - math.sin(heading)) / curvature
    py = (math.cos(heading) - np.cos(heading + curvature * s)) / curvature
    path = np.stack([px, py], axis=1)
    path[-1] = (x, y)
    return path


def _unpack(free: np.ndarray, x: float, y: float) -> np.ndarray:
    return np.vstack([[0.0, 0.0], free.reshape(-1, 2), [x, y]])


def oracle_distance(x: float, y: float, z: float, K: int = 128) -> float:
    """Length of the shortest K-segment polygon path realizing the endpoint (x, y, z)."""
    start = _initial_path(x, y, z, K)[1:-1].ravel()

    def length(free):
        v = _unpack(free, x, y)
        return float(np.sum(np.linalg.norm(np.diff(v, axis=0), axis=1)))

    def length_grad(free):
        v = _unpack(free, x, y)
        d = np.diff(v, axis=0)
        unit = d / np.maximum(np.linalg.norm(d, axis=1), 1e-15)[:, None]
        return (unit[:-1] - unit[1:]).ravel()

    def lift_gap(free):
        v = _unpack(free, x, y)
        return float(np.sum((v[:-1, 0] + v[1:, 0]) * (v[1:, 1] - v[:-1, 1])) / 2.0) - z

    def lift_grad(free):
        v = _unpack(free, x, y)
        gx = (v[2:, 1] - v[:-2, 1]) / 2.0
        gy = (v[:-2, 0] - v[2:, 0]) / 2.0
        return np.stack([gx, gy], axis=1).ravel()

    result = minimize(
        length,
        start,
        jac=length_grad,
        method="SLSQP",
        constraints=[{"type": "eq", "fun": lift_gap, "jac": lift_grad}],
        options={"ftol": 1e-12, "maxiter": 1000},
    )
    if abs(lift_gap(result.x)) > 1e-8:
        raise AssertionError(f"oracle left the constraint: gap {lift_gap(result.x):.3e}")
    return length(result.x)
