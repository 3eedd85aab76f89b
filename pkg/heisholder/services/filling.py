"""
Coarse Dehn filling of a closed horizontal curve.

The disc is cut into M angular sectors and m concentric rings. Vertex
(j, l) sits at (j/m) e^(2 pi i l/M) in the plane and is sent to the dilated
curve point dilate(j/m, c(l/M)); every interior edge is sent to a Carnot
geodesic and every outer edge to the matching piece of c. Edge curves are
solved on demand, so a filling with millions of triangles costs only its
M ring points until something asks for geometry.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from heisholder.config import thread_count
from heisholder.params import CarnotParams
from heisholder.services.cache import MemoCache
from heisholder.services.curves import (
    Arc,
    Chord,
    HCurve,
    curve_length_dc,
    is_horizontal,
    translate_to_origin,
)
from heisholder.services.heis_core import (
    DEFAULT_TOL,
    GeodesicArc,
    HPoint,
    cc_distance_array,
    dilate_array,
    solve_geodesic_array,
)

logger = logging.getLogger(__name__)

HUB = 0
ORIGIN_TOL = 1e-9
PERIMETER_SLACK = 1e-12
_CHUNK = 1 << 16


class FillingError(ValueError):
    """A hard guarantee of the filling failed; this is a construction bug."""


@dataclass(frozen=True)
class FillingReport:
    max_perimeter: float
    count: int
    bound: int
    ok: bool


def filling_counts(r: float, params: CarnotParams) -> Tuple[int, int]:
    """(M, m): smallest integers above r/L and L (r + 1)^k."""
    M = int(math.floor(r / params.L)) + 1
    m = int(math.floor(params.L * (r + 1.0) ** params.k)) + 1
    return M, m


def triangle_count(M: int, m: int) -> int:
    return M * (2 * m - 1)


def geodesic_segment(p: HPoint, q: HPoint, arc: GeodesicArc):
    if arc.curvature == 0.0:
        return Chord(p, q)
    return Arc(p, arc.heading, arc.curvature, 0.0, arc.length)


def geodesic_halves(p: HPoint, q: HPoint, arc: GeodesicArc) -> list:
    """The geodesic p -> q as segments ending exactly on p and q: the first
    half is anchored at p, the second at q."""
    if arc.curvature == 0.0:
        return [Chord(p, q)]
    half = arc.length / 2.0
    end_heading = arc.heading + arc.curvature * arc.length
    return [Arc(p, arc.heading, arc.curvature, 0.0, half), Arc(q, end_heading, arc.curvature, -half, 0.0)]


class Filling:
    """Implicit triangulated filling of a closed horizontal curve through 0.

    Vertex ids: the hub is 0 and (j, l) with j >= 1 is 1 + (j - 1) M + l.
    Triangle ids: hub triangles first (index l), then for each ring j >= 1
    the pair ((j,l), (j+1,l), (j+1,l+1)) and ((j,l), (j+1,l+1), (j,l+1)).
    All triangles are counterclockwise in the plane.
    """

    def __init__(self, curve: HCurve, params: CarnotParams, tol: float = DEFAULT_TOL):
        self.curve = curve
        self.params = params
        self.tol = tol
        self.r = curve_length_dc(curve)
        self.M, self.m = filling_counts(self.r, params)
        self.ring = curve.points_at_fractions(np.arange(self.M) / self.M)
        self.ring[0] = curve.start.as_array()
        self._edges = MemoCache(max_items=1 << 16, keep_items=1 << 15)
        self._overrides: Dict[Tuple[int, int], HCurve] = {}

    # combinatorics

    @property
    def vertex_count(self) -> int:
        return 1 + self.m * self.M

    @property
    def count(self) -> int:
        return triangle_count(self.M, self.m)

    @property
    def bound(self) -> int:
        return 2 * self.m * self.M

    def vertex_index(self, j: int, l: int) -> int:
        if j == 0:
            return HUB
        return 1 + (j - 1) * self.M + (l % self.M)

    def vertex_coords(self, v: int) -> Tuple[int, int]:
        if v == HUB:
            return 0, 0
        j, l = divmod(v - 1, self.M)
        return j + 1, l

    def triangle(self, t: int) -> Tuple[int, int, int]:
        M = self.M
        if not 0 <= t < self.count:
            raise IndexError(f"triangle {t} out of range [0, {self.count})")
        if t < M:
            return HUB, self.vertex_index(1, t), self.vertex_index(1, t + 1)
        ring, upper = divmod(t - M, 2)
        j, l = divmod(ring, M)
        j += 1
        if upper == 0:
            return self.vertex_index(j, l), self.vertex_index(j + 1, l), self.vertex_index(j + 1, l + 1)
        return self.vertex_index(j, l), self.vertex_index(j + 1, l + 1), self.vertex_index(j, l + 1)

    def triangle_index(self, kind: str, j: int, l: int) -> int:
        l %= self.M
        if kind == "hub":
            return l
        offset = 0 if kind == "lower" else 1
        return self.M + 2 * ((j - 1) * self.M + l) + offset

    @property
    def triangles(self) -> np.ndarray:
        M, m = self.M, self.m
        l = np.arange(M)
        hub = np.stack([np.zeros(M, dtype=np.int64), 1 + l, 1 + (l + 1) % M], axis=1)
        if m == 1:
            return hub
        j = np.arange(1, m)[:, None]
        a = 1 + (j - 1) * M + l
        b = 1 + j * M + l
        c = 1 + j * M + (l + 1) % M
        d = 1 + (j - 1) * M + (l + 1) % M
        lower = np.stack([a, b, c], axis=-1)
        upper = np.stack([a, c, d], axis=-1)
        rings = np.stack([lower, upper], axis=2).reshape(-1, 3)
        return np.vstack([hub, rings])

    def is_boundary_edge(self, a: int, b: int) -> bool:
        ja, la = self.vertex_coords(a)
        jb, lb = self.vertex_coords(b)
        return ja == jb == self.m and (lb - la) % self.M in (1, self.M - 1) and a != b

    # geometry

    def vertex_image(self, v: int) -> HPoint:
        j, l = self.vertex_coords(v)
        return HPoint.from_array(dilate_array(j / self.m, self.ring[l]))

    def vertex_images(self, j: np.ndarray, l: np.ndarray) -> np.ndarray:
        j = np.asarray(j)
        return dilate_array(j / self.m, self.ring[np.asarray(l) % self.M])

    def planar_embed(self, v: int) -> np.ndarray:
        j, l = self.vertex_coords(v)
        angle = 2.0 * math.pi * l / self.M
        return (j / self.m) * np.array([math.cos(angle), math.sin(angle)])

    def boundary_piece(self, l: int) -> HCurve:
        """Piece of the input curve carried by the outer edge (m, l) -> (m, l + 1)."""
        l %= self.M
        return self.curve.subcurve(l / self.M, (l + 1) / self.M)

    def edge_curve(self, a: int, b: int) -> HCurve:
        """Curve of the edge a -> b."""
        key = (a, b)
        if key in self._overrides:
            return self._overrides[key]
        if (b, a) in self._overrides:
            return self._overrides[(b, a)].reversed()
        cached = self._edges.get(f"{a}:{b}")
        if cached is not None:
            return cached
        cached = self._edges.get(f"{b}:{a}")
        if cached is not None:
            return cached.reversed()
        curve = self._solve_edges([(a, b)])[0]
        self._edges.set(f"{a}:{b}", curve)
        return curve

    def _solve_edges(self, edges: Sequence[Tuple[int, int]]) -> List[HCurve]:
        curves: List[Optional[HCurve]] = [None] * len(edges)
        pending = []
        for i, (a, b) in enumerate(edges):
            if self.is_boundary_edge(a, b):
                ja, la = self.vertex_coords(a)
                _, lb = self.vertex_coords(b)
                if (lb - la) % self.M == 1:
                    curves[i] = self.boundary_piece(la)
                else:
                    curves[i] = self.boundary_piece(lb).reversed()
            else:
                pending.append(i)
        if pending:
            p = np.array([self.vertex_image(edges[i][0]).as_array() for i in pending])
            q = np.array([self.vertex_image(edges[i][1]).as_array() for i in pending])
            arcs = solve_geodesic_array(p, q, self.tol)
            for i, pi, qi, arc in zip(pending, p, q, arcs):
                start, end = HPoint.from_array(pi), HPoint.from_array(qi)
                curves[i] = HCurve.from_segments(geodesic_halves(start, end, arc))
        return curves

    def _known(self, a: int, b: int) -> bool:
        if (a, b) in self._overrides or (b, a) in self._overrides:
            return True
        return f"{a}:{b}" in self._edges.memory_cache or f"{b}:{a}" in self._edges.memory_cache

    def triangle_edges(self, t: int) -> List[Tuple[int, int]]:
        a, b, c = self.triangle(t)
        return [(a, b), (b, c), (c, a)]

    def triangle_boundary(self, t: int) -> HCurve:
        edges = self.triangle_edges(t)
        missing = [e for e in edges if not self._known(*e)]
        if len(missing) > 1:
            for e, curve in zip(missing, self._solve_edges(missing)):
                self._edges.set(f"{e[0]}:{e[1]}", curve)
        return HCurve.concatenate([self.edge_curve(a, b) for a, b in edges], closed=True)

    def triangle_perimeter(self, t: int) -> float:
        return sum(curve_length_dc(self.edge_curve(a, b)) for a, b in self.triangle_edges(t))

    def with_edge_curve(self, a: int, b: int, curve: HCurve) -> "Filling":
        """Copy of this filling with the edge a -> b carrying another curve."""
        clone = Filling.__new__(Filling)
        clone.__dict__.update(self.__dict__)
        clone._overrides = dict(self._overrides)
        clone._overrides[(a, b)] = curve
        return clone

    # batch lengths

    def _distances(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Carnot distances of row pairs, chunked across a thread pool."""
        n = len(p)
        if n == 0:
            return np.zeros(0)
        starts = list(range(0, n, _CHUNK))
        out = np.empty(n)

        def work(start: int) -> None:
            stop = min(start + _CHUNK, n)
            out[start:stop] = cc_distance_array(p[start:stop], q[start:stop], self.tol)

        workers = min(thread_count(), len(starts))
        if workers <= 1:
            for start in starts:
                work(start)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(work, starts))
        return out

    def edge_lengths(self) -> Dict[str, np.ndarray]:
        """Lengths of every edge, grouped as radial[j, l] ((j,l)-(j+1,l)),
        ring[j, l] ((j,l)-(j,l+1)) and diagonal[j, l] ((j,l)-(j+1,l+1))."""
        M, m = self.M, self.m
        j = np.arange(m + 1)[:, None]
        images = self.vertex_images(np.repeat(j, M, axis=1), np.tile(np.arange(M), (m + 1, 1)))
        nxt = np.roll(images, -1, axis=1)

        radial = self._distances(images[:-1].reshape(-1, 3), images[1:].reshape(-1, 3)).reshape(m, M)
        ring = np.zeros((m + 1, M))
        diagonal = np.zeros((m, M))
        if m > 1:
            ring[1:m] = self._distances(images[1:m].reshape(-1, 3), nxt[1:m].reshape(-1, 3)).reshape(m - 1, M)
            diagonal[1:m] = self._distances(images[1:m].reshape(-1, 3), nxt[2:m + 1].reshape(-1, 3)).reshape(m - 1, M)
        cumulative = self.r * np.arange(M + 1) / M
        ring[m] = np.diff(cumulative)

        for (a, b), curve in self._overrides.items():
            ja, la = self.vertex_coords(a)
            jb, lb = self.vertex_coords(b)
            if ja > jb or (ja == jb and (la - lb) % M == 1):
                ja, la, jb, lb = jb, lb, ja, la
            length = curve_length_dc(curve)
            if ja == jb:
                ring[ja, la] = length
            elif la == lb or ja == 0:
                radial[ja, lb if ja == 0 else la] = length
            else:
                diagonal[ja, la] = length
        return {"radial": radial, "ring": ring, "diagonal": diagonal}

    def perimeters(self) -> np.ndarray:
        """Perimeter of every triangle, in triangle-id order."""
        M, m = self.M, self.m
        lengths = self.edge_lengths()
        radial, ring, diagonal = lengths["radial"], lengths["ring"], lengths["diagonal"]
        hub = radial[0] + ring[1] + np.roll(radial[0], -1)
        if m == 1:
            return hub
        lower = radial[1:m] + ring[2:m + 1] + diagonal[1:m]
        upper = diagonal[1:m] + np.roll(radial[1:m], -1, axis=1) + ring[1:m]
        rings = np.stack([lower, upper], axis=-1).reshape(-1)
        return np.concatenate([hub, rings])

    def prefetch_edges(self) -> int:
        """Solve every interior edge geodesic in one vectorized pass."""
        tris = self.triangles
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        pairs = [(int(a), int(b)) for a, b in edges]
        self._edges.max_items = max(self._edges.max_items, 2 * len(pairs))
        self._edges.keep_items = max(self._edges.keep_items, len(pairs))
        for start in range(0, len(pairs), _CHUNK):
            batch = pairs[start:start + _CHUNK]
            for (a, b), curve in zip(batch, self._solve_edges(batch)):
                self._edges.set(f"{a}:{b}", curve)
        logger.info(f"Prefetched {len(pairs)} edge curves")
        return len(pairs)

    # planar location

    def planar_triangle(self, t: int) -> np.ndarray:
        return np.array([self.planar_embed(v) for v in self.triangle(t)])

    def has_arc_side(self, t: int) -> bool:
        a, b, c = self.triangle(t)
        return self.is_boundary_edge(b, c)

    def locate(self, w: np.ndarray) -> int:
        """Triangle containing the planar point w of the closed unit disc.

        Points between an outer chord and the unit circle belong to the
        triangle carrying that outer edge.
        """
        M, m = self.M, self.m
        angle = math.atan2(w[1], w[0]) % (2.0 * math.pi)
        l = min(int(angle * M / (2.0 * math.pi)), M - 1)
        mid = 2.0 * math.pi * (l + 0.5) / M
        reach = (w[0] * math.cos(mid) + w[1] * math.sin(mid)) / math.cos(math.pi / M)
        j = int(math.floor(m * reach))
        if j <= 0:
            return self.triangle_index("hub", 0, l)
        if j >= m:
            return self.triangle_index("hub", 0, l) if m == 1 else self.triangle_index("lower", m - 1, l)
        A = self.planar_embed(self.vertex_index(j, l))
        D = self.planar_embed(self.vertex_index(j + 1, l + 1))
        side = (D[0] - A[0]) * (w[1] - A[1]) - (D[1] - A[1]) * (w[0] - A[0])
        return self.triangle_index("lower" if side <= 0.0 else "upper", j, l)

    def incircle(self, t: int) -> Tuple[np.ndarray, float]:
        A, B, C = self.planar_triangle(t)
        a = np.linalg.norm(B - C)
        b = np.linalg.norm(C - A)
        c = np.linalg.norm(A - B)
        perimeter = a + b + c
        area = 0.5 * abs((B[0] - A[0]) * (C[1] - A[1]) - (B[1] - A[1]) * (C[0] - A[0]))
        return (a * A + b * B + c * C) / perimeter, 2.0 * area / perimeter

    def radial_hit(self, t: int, center: np.ndarray, direction: np.ndarray) -> Tuple[int, float]:
        """Side slot (0, 1, 2 for a->b, b->c, c->a) and fraction along it where
        the ray from an interior center meets the triangle boundary."""
        corners = self.planar_triangle(t)
        arc_side = self.has_arc_side(t)
        best = (0, 0.0)
        best_t = math.inf
        for slot in range(3):
            P, Q = corners[slot], corners[(slot + 1) % 3]
            if slot == 1 and arc_side:
                hit = _ray_circle(center, direction)
                point = center + hit * direction
                _, l = self.vertex_coords(self.triangle(t)[1])
                start = 2.0 * math.pi * l / self.M
                u = ((math.atan2(point[1], point[0]) - start) % (2.0 * math.pi)) * self.M / (2.0 * math.pi)
                if u > 1.5:
                    u = 0.0
                u = min(max(u, 0.0), 1.0)
            else:
                hit, u = _ray_segment(center, direction, P, Q)
                if hit is None:
                    continue
            if hit < best_t:
                best_t, best = hit, (slot, u)
        return best


def _ray_segment(origin: np.ndarray, direction: np.ndarray, P: np.ndarray, Q: np.ndarray):
    edge = Q - P
    det = direction[0] * (-edge[1]) + direction[1] * edge[0]
    if abs(det) < 1e-300:
        return None, 0.0
    rhs = P - origin
    t = (rhs[0] * (-edge[1]) + rhs[1] * edge[0]) / det
    u = (direction[0] * rhs[1] - direction[1] * rhs[0]) / det
    if t <= 0.0 or u < -1e-12 or u > 1.0 + 1e-12:
        return None, 0.0
    return t, min(max(u, 0.0), 1.0)


def _ray_circle(origin: np.ndarray, direction: np.ndarray) -> float:
    b = float(origin @ direction)
    c = float(origin @ origin) - 1.0
    return -b + math.sqrt(max(b * b - c, 0.0))


def _check_curve(c: HCurve, params: CarnotParams, tol: float) -> float:
    if not c.closed:
        raise ValueError("filling needs a closed curve")
    if not is_horizontal(c, tol):
        raise ValueError("filling needs a horizontal curve")
    start = c.at(0.0)
    if max(abs(start.x), abs(start.y), abs(start.z)) > ORIGIN_TOL:
        raise ValueError(f"curve must pass through 0 at param 0, starts at {start.as_list()}; use translate_to_origin")
    length = curve_length_dc(c)
    if length < 6.0 * params.L * (1.0 - 1e-12):
        factor = 6.0 * params.L / length if length > 0 else math.inf
        raise ValueError(
            f"curve length {length:.6g} is below 6L = {6.0 * params.L:.6g}; dilate by at least {factor:.6g} first"
        )
    return length


def coarse_filling(c: HCurve, params: CarnotParams, verify: bool = True, tol: float = DEFAULT_TOL) -> Filling:
    """Fill c with triangles whose boundaries have Carnot length at most 6L."""
    _check_curve(c, params, tol)
    filling = Filling(c, params, tol)
    logger.info(f"Filling built: r={filling.r:.6g}, M={filling.M}, m={filling.m}, triangles={filling.count}")
    if verify:
        report = verify_filling(filling, params.L)
        if not report.ok:
            raise FillingError(
                f"filling violates its guarantees: max perimeter {report.max_perimeter:.6g} vs 6L={6 * params.L:.6g}, "
                f"count {report.count} vs bound {report.bound}"
            )
    return filling


def verify_filling(f: Filling, L: float) -> FillingReport:
    perimeters = f.perimeters()
    max_perimeter = float(perimeters.max()) if perimeters.size else 0.0
    ok = max_perimeter <= 6.0 * L * (1.0 + PERIMETER_SLACK) and f.count < f.bound
    logger.info(f"Verified filling: max perimeter {max_perimeter:.6g} (6L={6 * L:.6g}), count {f.count} < {f.bound}: {ok}")
    return FillingReport(max_perimeter=max_perimeter, count=f.count, bound=f.bound, ok=ok)


def triangle_boundary_curves(f: Filling) -> List[HCurve]:
    """Closed counterclockwise boundary curve of every triangle, in triangle order."""
    f.prefetch_edges()
    return list(iter_triangle_boundaries(f))


def iter_triangle_boundaries(f: Filling) -> Iterator[HCurve]:
    for t in range(f.count):
        yield f.triangle_boundary(t)


def epsilon_area(c: HCurve, eps: float, params: CarnotParams, tol: float = DEFAULT_TOL) -> int:
    """Upper bound for the eps-area of c: the triangle count of the filling of
    dilate(6L/eps, c) after moving its basepoint to 0."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not c.closed or not is_horizontal(c, tol):
        raise ValueError("eps-area needs a closed horizontal curve")
    moved, _ = translate_to_origin(c)
    scaled = moved.dilate(6.0 * params.L / eps)
    _check_curve(scaled, params, tol)
    M, m = filling_counts(curve_length_dc(scaled), params)
    return triangle_count(M, m)


def filling_growth(c: HCurve, params: CarnotParams, radii: Sequence[float]) -> pd.DataFrame:
    """Triangle counts of c normalized to each length in radii.

    The log-log slope is stored in the frame attrs under "slope".
    """
    moved, _ = translate_to_origin(c)
    length = curve_length_dc(moved)
    rows = []
    for r in radii:
        scaled = moved.dilate(r / length)
        M, m = filling_counts(curve_length_dc(scaled), params)
        rows.append({"r": float(r), "M": M, "m": m, "count": triangle_count(M, m), "bound": 2 * M * m})
    table = pd.DataFrame(rows)
    slope = float(np.polyfit(np.log(table["r"]), np.log(table["count"]), 1)[0]) if len(table) > 1 else float("nan")
    table.attrs["slope"] = slope
    logger.info(f"Filling growth over {len(table)} radii: slope {slope:.4f}")
    return table


def empirical_count_constant(n_eff: int, params: CarnotParams) -> float:
    """Triangle count at r = 6L n_eff divided by n_eff^(k+1)."""
    M, m = filling_counts(6.0 * params.L * n_eff, params)
    return triangle_count(M, m) / float(n_eff) ** (params.k + 1)
