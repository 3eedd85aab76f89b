"""
Scaling calculus, separated grids, the dyadic horizontal skeleton and
self-similar conjugation.

The skeleton is handled in integer units: (i, j, k) stands for the point
(i h, j h, k h^2) with h = 2^-n0, so dilation by 2^n is (2^n i, 2^n j, 4^n k)
and every check is exact integer arithmetic.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from heisholder.services.cache import cache_result
from heisholder.services.curves import Chord
from heisholder.services.heis_core import (
    DEFAULT_TOL,
    IDENTITY,
    HPoint,
    cc_distance_array,
    dilate,
    dilate_array,
    inv,
    inv_array,
    mul,
    mul_array,
)

logger = logging.getLogger(__name__)

MAX_CONJUGATION_STEPS = 200
FIXED_POINT_TOL = 1e-10


class SkeletonError(RuntimeError):
    """The skeleton failed its dilation or lattice invariance check."""


class OutOfDomainError(ValueError):
    """No iterate of the similarity brings the point into the unit ball."""


# scaling calculus

def _check_nc(n: int, c: float) -> None:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not c > 1.0:
        raise ValueError(f"c must exceed 1, got {c}")


def eta(n: int, c: float) -> float:
    _check_nc(n, c)
    return n / (1.5 * n + math.log2(c))


def rho(n: int, c: float) -> float:
    _check_nc(n, c)
    return 2.0 ** (-1.5 * n) / c


def eta_rho_residual(n: int, c: float, depth: int = 8) -> float:
    """Largest relative gap between 2^(-i n) and rho^(i eta) for i = 1..depth."""
    e, r = eta(n, c), rho(n, c)
    gaps = [abs(r ** (i * e) / 2.0 ** (-i * n) - 1.0) for i in range(1, depth + 1)]
    return max(gaps)


@dataclass(frozen=True)
class DisplacementBounds:
    step: float
    total: float
    tail: float


def displacement_bounds(b: float, n: int, i: int) -> DisplacementBounds:
    """Per-step displacement b 2^(-in) and the accumulated bound 2b 2^(-in)."""
    if not b > 0 or n < 1 or i < 0:
        raise ValueError(f"need b > 0, n >= 1, i >= 0; got b={b}, n={n}, i={i}")
    step = b * 2.0 ** (-i * n)
    total = 2.0 * step
    tail = step / (1.0 - 2.0 ** (-n))
    if tail > total * (1.0 + 1e-15):
        raise ArithmeticError(f"geometric tail {tail} exceeds the closed form {total}")
    return DisplacementBounds(step, total, tail)


def _check_dim(d: int) -> None:
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")


def avol_bound(d: int, n: int, c: float) -> float:
    _check_dim(d)
    return c * 2.0 ** ((d + 1) * n)


def avol_bound_compound(d: int, n: int, c: float, depth: int) -> float:
    """Bound after depth nested refinements: c^i 2^(i (d+1) n)."""
    _check_dim(d)
    return c ** depth * 2.0 ** (depth * (d + 1) * n)


def ball_radius(n: int, c: float, i: int) -> float:
    return rho(n, c) ** i


def cell_image_diameter_bound(b: float, mu: float, n: int, i: int) -> float:
    return (4.0 * b + mu) * 2.0 ** (-i * n)


def properness_bound(mu: float, n: int, i: int) -> float:
    return 2.0 * mu * 2.0 ** (-(i + 2) * n)


def neighborhood_bound(mu: float, n: int) -> float:
    return 4.0 * mu * 2.0 ** (-n)


def neighborhood_telescope(mu: float, n: int) -> float:
    """Sum over i >= 0 of 2 mu 2^(-(i+1) n)."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return 2.0 * mu * 2.0 ** (-n) / (1.0 - 2.0 ** (-n))


def select_n(epsilon: float, c: float, r: float, K: float, mu: float, n0: int) -> int:
    """Smallest n >= n0 with eta(n, c) > 2/3 - epsilon and max(mu, K) 2^-n <= r/8."""
    if not 0.0 < epsilon < 2.0 / 3.0:
        raise ValueError(f"epsilon must lie in (0, 2/3), got {epsilon}")
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    target = 2.0 / 3.0 - epsilon
    scale = max(mu, K)

    def ok(n: int) -> bool:
        return eta(n, c) > target and scale * 2.0 ** (-n) <= r / 8.0

    from_eta = int(math.floor(target * math.log2(c) / (1.0 - 1.5 * target)))
    from_size = int(math.ceil(math.log2(8.0 * scale / r)))
    n = max(n0, 1, from_eta, from_size)
    while n > max(n0, 1) and ok(n - 1):
        n -= 1
    while not ok(n):
        n += 1
    return n


def approx_radius(epsilon: float, m_disp: float) -> float:
    if not epsilon > 0 or not m_disp > 0:
        raise ValueError(f"epsilon and m_disp must be positive, got {epsilon}, {m_disp}")
    return epsilon / (2.0 * m_disp)


def dilation_distortion(r: float, dim: int) -> float:
    """Area bound r^3 for dim 2, exact volume factor r^4 for dim 3."""
    if r < 1.0:
        raise ValueError(f"r must be at least 1, got {r}")
    _check_dim(dim)
    return r ** 3 if dim == 2 else r ** 4


def _frame_image(r: float, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Frame coordinates at dilate(r, p) of dilate(r, p q)."""
    base = dilate_array(r, p)
    moved = dilate_array(r, mul_array(p, q))
    return mul_array(inv_array(base), moved)


def jacobian_determinant(r: float, p: HPoint) -> float:
    """Determinant of the differential of dilate(r, .) at p in the left-invariant frame."""
    point = p.as_array()
    step = 1e-3 * (1.0 + float(np.max(np.abs(point))))
    columns = []
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = step
        columns.append((_frame_image(r, point, e) - _frame_image(r, point, -e)) / (2.0 * step))
    return float(np.linalg.det(np.stack(columns, axis=1)))


def area_stretch(r: float, p: HPoint, u: Sequence[float], v: Sequence[float], size: float = 1e-4) -> float:
    """Area ratio of the small horizontal parallelogram at p spanned by size*u
    and size*v under dilate(r, .), measured in the left-invariant frame."""
    point = p.as_array()
    eu = np.array([u[0], u[1], 0.0]) * size
    ev = np.array([v[0], v[1], 0.0]) * size
    before = np.linalg.norm(np.cross(eu, ev))
    if before == 0.0:
        raise ValueError("u and v must span a parallelogram")
    after = np.linalg.norm(np.cross(_frame_image(r, point, eu), _frame_image(r, point, ev)))
    return float(after / before)


# separated grids

@dataclass(frozen=True)
class Ball:
    center: Tuple[float, ...]
    radius: float


def _ceil_root(count: int, d: int) -> int:
    m = max(1, int(round(count ** (1.0 / d))))
    while m ** d < count:
        m += 1
    while m > 1 and (m - 1) ** d >= count:
        m -= 1
    return m


def grid_radius_lower_bound(d: int, count: int) -> float:
    return 1.0 / (16.0 * math.sqrt(d) * count ** (1.0 / d))


def separated_grid(d: int, count: int) -> List[Ball]:
    """count balls on the cell-centre grid of [-1/(2 sqrt d), 1/(2 sqrt d)]^d,
    radius (8 m sqrt d)^-1 with m the ceiling d-th root of count."""
    _check_dim(d)
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    m = _ceil_root(count, d)
    half = 1.0 / (2.0 * math.sqrt(d))
    spacing = 2.0 * half / m
    radius = 1.0 / (8.0 * m * math.sqrt(d))
    if radius < grid_radius_lower_bound(d, count):
        raise ArithmeticError(f"grid radius {radius} below the guaranteed {grid_radius_lower_bound(d, count)}")
    coords = [-half + (i + 0.5) * spacing for i in range(m)]
    balls = [Ball(tuple(c), radius) for c in itertools.islice(itertools.product(coords, repeat=d), count)]
    logger.debug(f"Separated grid: d={d}, count={count}, side={m}, radius={radius:.6g}")
    return balls


def is_two_separated(balls: Sequence[Ball], chunk: int = 1024) -> bool:
    """Doubled balls pairwise disjoint and inside the unit ball."""
    centers = np.array([b.center for b in balls], dtype=float)
    radii = np.array([b.radius for b in balls], dtype=float)
    if np.any(np.linalg.norm(centers, axis=1) + 2.0 * radii > 1.0):
        return False
    for start in range(0, len(balls), chunk):
        block = slice(start, start + chunk)
        gaps = cdist(centers[block], centers) - 2.0 * (radii[block, None] + radii[None, :])
        rows = np.arange(start, min(start + chunk, len(balls)))
        gaps[rows - start, rows] = np.inf
        if np.any(gaps <= 0.0):
            return False
    return True


# dyadic skeleton

@dataclass(frozen=True)
class SkeletonWindow:
    """Horizontal grid skeleton in [0, box]^3 with steps h = 2^-n0.

    x-edges go (i, j, k) -> (i + 1, j, k); y-edges go (i, j, k) -> (i, j + 1, k + i).
    """

    n0: int
    box: int
    checked_n: int
    checked_edges: int

    @property
    def steps(self) -> int:
        return self.box * 2 ** self.n0

    @property
    def levels(self) -> int:
        return self.box * 4 ** self.n0

    @property
    def h(self) -> float:
        return 2.0 ** -self.n0

    @property
    def edge_count(self) -> int:
        W, Kz = self.steps, self.levels
        x_edges = W * (W + 1) * (Kz + 1)
        y_edges = sum((W) * max(0, Kz + 1 - i) for i in range(W + 1))
        return x_edges + y_edges

    def vertex_point(self, i: int, j: int, k: int) -> HPoint:
        h = self.h
        return HPoint.of(i * h, j * h, k * h * h)

    def edge_segment(self, start: Tuple[int, int, int], end: Tuple[int, int, int]) -> Chord:
        return Chord(self.vertex_point(*start), self.vertex_point(*end))

    def edges(self) -> Iterator[Tuple[Tuple[int, int, int], Tuple[int, int, int]]]:
        W, Kz = self.steps, self.levels
        for i in range(W + 1):
            for j in range(W + 1):
                for k in range(Kz + 1):
                    if i < W:
                        yield (i, j, k), (i + 1, j, k)
                    if j < W and k + i <= Kz:
                        yield (i, j, k), (i, j + 1, k + i)


def _in_box(i, j, k, W: int, Kz: int) -> np.ndarray:
    return (i >= 0) & (i <= W) & (j >= 0) & (j <= W) & (k >= 0) & (k <= Kz)


def _check_dilation(kind: str, i, j, k, n: int, W: int, Kz: int) -> int:
    """Image of each source edge under dilation by 2^n is a chain of 2^n window
    edges of the same kind. Returns the number of source edges checked."""
    scale = 2 ** n
    si, sj, sk = scale * i, scale * j, scale * scale * k
    if kind == "x":
        ei, ej, ek = scale * (i + 1), sj, sk
    else:
        ei, ej, ek = si, scale * (j + 1), scale * scale * (k + i)
    ci, cj, ck = si.copy(), sj.copy(), sk.copy()
    for _ in range(scale):
        if kind == "x":
            ni, nj, nk = ci + 1, cj, ck
        else:
            ni, nj, nk = ci, cj + 1, ck + ci
        if not (np.all(_in_box(ci, cj, ck, W, Kz)) and np.all(_in_box(ni, nj, nk, W, Kz))):
            raise SkeletonError(f"dilated {kind}-edge leaves the window")
        ci, cj, ck = ni, nj, nk
    if not (np.array_equal(ci, ei) and np.array_equal(cj, ej) and np.array_equal(ck, ek)):
        raise SkeletonError(f"dilated {kind}-edge chain does not end at the dilated endpoint")
    return int(i.size)


def _check_lattice(kind: str, i, j, k, n0: int, W: int, Kz: int) -> None:
    """Left translations by the unit lattice generators keep edges of the same kind."""
    N = 2 ** n0
    if kind == "x":
        end = (i + 1, j, k)
    else:
        end = (i, j + 1, k + i)
    generators = {
        "X": lambda a, b, c: (a + N, b, c + N * b),
        "Y": lambda a, b, c: (a, b + N, c),
        "Z": lambda a, b, c: (a, b, c + N * N),
    }
    for name, move in generators.items():
        s = move(i, j, k)
        e = move(*end)
        inside = _in_box(*s, W, Kz) & _in_box(*e, W, Kz)
        if kind == "x":
            good = (e[0] == s[0] + 1) & (e[1] == s[1]) & (e[2] == s[2])
        else:
            good = (e[0] == s[0]) & (e[1] == s[1] + 1) & (e[2] == s[2] + s[0])
        if np.any(inside & ~good):
            raise SkeletonError(f"translation by {name} breaks {kind}-edges")


@cache_result("skeleton")
def skeleton_window(n0: int, n: int, box: int) -> SkeletonWindow:
    """Build and verify the horizontal skeleton of [0, box]^3 at step 2^-n0."""
    if not n >= n0 >= 1 or box < 1:
        raise ValueError(f"need n >= n0 >= 1 and box >= 1, got n0={n0}, n={n}, box={box}")
    W = box * 2 ** n0
    Kz = box * 4 ** n0
    scale = 2 ** n
    checked = 0
    # Sources whose dilated image still fits in the window.
    imax, kmax = W // scale, Kz // (scale * scale)
    i, j, k = np.meshgrid(np.arange(imax + 1, dtype=np.int64), np.arange(imax + 1, dtype=np.int64),
                          np.arange(kmax + 1, dtype=np.int64), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    xs = (scale * (i + 1) <= W)
    checked += _check_dilation("x", i[xs], j[xs], k[xs], n, W, Kz)
    ys = (scale * (j + 1) <= W) & (scale * scale * (k + i) <= Kz)
    checked += _check_dilation("y", i[ys], j[ys], k[ys], n, W, Kz)

    # Lattice invariance, slab by slab in i to bound memory.
    for slab in range(W + 1):
        jj, kk = np.meshgrid(np.arange(W + 1, dtype=np.int64), np.arange(Kz + 1, dtype=np.int64), indexing="ij")
        jj, kk = jj.ravel(), kk.ravel()
        ii = np.full_like(jj, slab)
        if slab < W:
            _check_lattice("x", ii, jj, kk, n0, W, Kz)
        inside = (jj < W) & (kk + slab <= Kz)
        _check_lattice("y", ii[inside], jj[inside], kk[inside], n0, W, Kz)
    logger.info(f"Skeleton window n0={n0}, box={box}: dilation by 2^{n} verified on {checked} edges")
    return SkeletonWindow(n0=n0, box=box, checked_n=n, checked_edges=checked)


def measure_cell_diameter(window: SkeletonWindow, tol: float = DEFAULT_TOL) -> float:
    """Largest Carnot diameter of the corner set of a grid cell.

    Translating along y or z is a left translation, so only the x-column matters.
    """
    h = window.h
    corners = np.array(list(itertools.product((0, 1), repeat=3)), dtype=float)
    pairs = list(itertools.combinations(range(8), 2))
    best = 0.0
    for i in range(window.steps):
        pts = np.column_stack([(i + corners[:, 0]) * h, corners[:, 1] * h, corners[:, 2] * h * h])
        p = pts[[a for a, _ in pairs]]
        q = pts[[b for _, b in pairs]]
        best = max(best, float(cc_distance_array(p, q, tol).max()))
    return best


def embed_planar(x: Sequence[float]) -> HPoint:
    return HPoint.of(x[0], x[1], 0.0)


def _disc_samples(samples: int, seed: int, radius: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, samples))
    theta = rng.uniform(0.0, 2.0 * math.pi, samples)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def measure_displacement(f: Callable[[np.ndarray], HPoint], samples: int, seed: int,
                         tol: float = DEFAULT_TOL) -> float:
    """Largest sampled d_c between a disc point (at height 0) and its image."""
    pts = _disc_samples(samples, seed)
    images = np.array([f(x).as_array() for x in pts])
    base = np.column_stack([pts, np.zeros(len(pts))])
    return float(cc_distance_array(base, images, tol).max())


def approximation_map(f: Callable[[np.ndarray], HPoint], epsilon: float,
                      m_disp: float) -> Tuple[Callable[[np.ndarray], HPoint], float]:
    """psi(x) = dilate(r, f(x / r)) with r = epsilon / (2 m_disp), on the disc of radius r."""
    r = approx_radius(epsilon, m_disp)

    def psi(x: np.ndarray) -> HPoint:
        return dilate(r, f(np.asarray(x, dtype=float) / r))

    return psi, r


@dataclass(frozen=True)
class ApproximationCheck:
    radius: float
    m_disp: float
    sup_distance: float
    bound: float
    ok: bool


def approximation_check(f: Callable[[np.ndarray], HPoint], epsilon: float, samples: int, seed: int,
                        tol: float = DEFAULT_TOL) -> ApproximationCheck:
    """Measure m_disp on a disc sample, then check psi moves the scaled sample by at most epsilon/2."""
    pts = _disc_samples(samples, seed)
    images = np.array([f(x).as_array() for x in pts])
    base = np.column_stack([pts, np.zeros(len(pts))])
    m_disp = float(cc_distance_array(base, images, tol).max())
    psi, r = approximation_map(f, epsilon, m_disp)
    scaled = np.array([psi(r * x).as_array() for x in pts])
    moved = np.column_stack([r * pts, np.zeros(len(pts))])
    sup = float(cc_distance_array(moved, scaled, tol).max())
    bound = epsilon / 2.0
    return ApproximationCheck(r, m_disp, sup, bound, sup <= bound + 1e-9)


# similarity pairs

@dataclass(frozen=True, eq=False)
class SimilarityPair:
    """h(x) = scale * A x + t on R^d and m(y) = g^-1 dilate(2^n, y) on H."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    g: HPoint = IDENTITY
    n: int = 1

    def __post_init__(self):
        if not self.scale > 1.0:
            raise ValueError(f"h must expand: scale {self.scale} is not above 1")
        if self.n < 1:
            raise ValueError(f"m must expand: n must be at least 1, got {self.n}")
        A = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or t.shape != (A.shape[0],):
            raise ValueError("rotation must be square and match the translation")
        if not np.allclose(A.T @ A, np.eye(A.shape[0]), atol=1e-9):
            raise ValueError("rotation must be orthogonal")
        object.__setattr__(self, "rotation", A)
        object.__setattr__(self, "translation", t)

    @classmethod
    def planar(cls, scale: float, angle: float = 0.0, translation: Sequence[float] = (0.0, 0.0),
               g: HPoint = IDENTITY, n: int = 1) -> "SimilarityPair":
        A = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        return cls(scale, A, np.asarray(translation, dtype=float), g, n)

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    def h(self, x: np.ndarray) -> np.ndarray:
        return self.scale * (self.rotation @ x) + self.translation

    def h_inv(self, x: np.ndarray) -> np.ndarray:
        return self.rotation.T @ ((x - self.translation) / self.scale)

    def h_power(self, x: np.ndarray, i: int) -> np.ndarray:
        step = self.h if i >= 0 else self.h_inv
        for _ in range(abs(i)):
            x = step(x)
        return x

    def m(self, y: HPoint) -> HPoint:
        return mul(inv(self.g), dilate(2.0 ** self.n, y))

    def m_inv(self, y: HPoint) -> HPoint:
        return dilate(2.0 ** -self.n, mul(self.g, y))

    def m_power(self, y: HPoint, i: int) -> HPoint:
        step = self.m if i >= 0 else self.m_inv
        for _ in range(abs(i)):
            y = step(y)
        return y


@dataclass(frozen=True, eq=False)
class FixedPoints:
    x0: np.ndarray
    y0: HPoint
    x_gap: float
    y_gap: float


def _iterate_to_limit(step, start, same, limit: int):
    current = start
    for _ in range(limit):
        nxt = step(current)
        if same(nxt, current):
            return nxt
        current = nxt
    return current


def fixed_points(sp: SimilarityPair, seed: int = 0) -> FixedPoints:
    """Fixed points of h (linear solve) and of m (closed form), both checked
    against the limit of the inverse iteration from a random start."""
    A = sp.scale * sp.rotation
    x0 = np.linalg.solve(np.eye(sp.dim) - A, sp.translation)
    lam = 2.0 ** sp.n
    g = sp.g
    x = g.x / (lam - 1.0)
    y = g.y / (lam - 1.0)
    z = (g.z + g.x * y) / (lam * lam - 1.0)
    y0 = HPoint.of(x, y, z)

    rng = np.random.default_rng(seed)
    # h^-1 contracts by 1/scale per step, so slow maps need more steps.
    limit = int(math.ceil(60.0 / math.log2(sp.scale))) + 10
    u = _iterate_to_limit(sp.h_inv, rng.uniform(-1.0, 1.0, sp.dim), np.array_equal, limit)
    w = _iterate_to_limit(sp.m_inv, HPoint.from_array(rng.uniform(-1.0, 1.0, 3)), lambda a, b: a == b, 200)

    x_gap = float(np.max(np.abs(u - x0)))
    y_gap = float(np.max(np.abs(w.as_array() - y0.as_array())))
    if x_gap > FIXED_POINT_TOL * (1.0 + float(np.max(np.abs(x0)))):
        raise ArithmeticError(f"fixed point of h disagrees with iteration by {x_gap:.3e}")
    if y_gap > FIXED_POINT_TOL * (1.0 + float(np.max(np.abs(y0.as_array())))):
        raise ArithmeticError(f"fixed point of m disagrees with iteration by {y_gap:.3e}")
    return FixedPoints(x0, y0, x_gap, y_gap)


def _in_unit_ball(x: np.ndarray) -> bool:
    return float(np.dot(x, x)) <= 1.0


def conjugation_index(sp: SimilarityPair, x: np.ndarray) -> int:
    """0 inside the unit ball, otherwise the largest negative i with h^i(x) in it."""
    x = np.asarray(x, dtype=float)
    if _in_unit_ball(x):
        return 0
    for i in range(1, MAX_CONJUGATION_STEPS + 1):
        x = sp.h_inv(x)
        if _in_unit_ball(x):
            return -i
    raise OutOfDomainError(f"no iterate within {MAX_CONJUGATION_STEPS} steps reaches the unit ball")


def conjugated_at(sp: SimilarityPair, seed_map: Callable[[np.ndarray], HPoint], x: np.ndarray, i: int) -> HPoint:
    """m^-i(seed(h^i(x))) for an index i with h^i(x) in the unit ball."""
    moved = sp.h_power(np.asarray(x, dtype=float), i)
    if not _in_unit_ball(moved):
        raise OutOfDomainError(f"h^{i}(x) lies outside the unit ball")
    return sp.m_power(seed_map(moved), -i)


def conjugated_eval(sp: SimilarityPair, seed_map: Callable[[np.ndarray], HPoint], x: np.ndarray,
                    check: bool = False, tol: float = 1e-9) -> HPoint:
    """Self-similar extension F with m(F(h^-1 x)) = F(x).

    With check, points admitting the neighbouring index too are evaluated
    both ways and must agree to tol.
    """
    i = conjugation_index(sp, x)
    value = conjugated_at(sp, seed_map, x, i)
    if check:
        below = sp.h_power(np.asarray(x, dtype=float), i - 1)
        if _in_unit_ball(below):
            other = conjugated_at(sp, seed_map, x, i - 1)
            gap = float(np.max(np.abs(value.as_array() - other.as_array())))
            if gap > tol * (1.0 + float(np.max(np.abs(value.as_array())))):
                raise ArithmeticError(f"conjugated values for indices {i} and {i - 1} differ by {gap:.3e}")
    return value


class SelfSimilarSeed:
    """Seed map on the unit ball satisfying seed = m o seed o h^-1 where both sides exist.

    Points whose h-image stays in the ball are pushed forward until it
    leaves and pulled back with m^-1; the base map is used only on the
    rest of the ball.
    """

    def __init__(self, sp: SimilarityPair, base: Callable[[np.ndarray], HPoint]):
        self.sp = sp
        self.base = base
        self.fixed = fixed_points(sp)

    def __call__(self, x: np.ndarray) -> HPoint:
        x = np.asarray(x, dtype=float)
        steps = 0
        while steps < MAX_CONJUGATION_STEPS:
            nxt = self.sp.h(x)
            if not _in_unit_ball(nxt):
                break
            x = nxt
            steps += 1
        else:
            return self.fixed.y0
        return self.sp.m_power(self.base(x), -steps)


def conjugation_residual(sp: SimilarityPair, F: Callable[[np.ndarray], HPoint], x: np.ndarray) -> float:
    """Max-coordinate gap between m(F(h^-1 x)) and F(x)."""
    left = sp.m(F(sp.h_inv(np.asarray(x, dtype=float))))
    right = F(np.asarray(x, dtype=float))
    return float(np.max(np.abs(left.as_array() - right.as_array())))
