"""
Recursive Hölder extension of a closed horizontal curve over the unit disc.

Every node owns a closed curve, its filling (after moving the basepoint to 0
and dilating to length 6L n_eff) and, per filling triangle, a sub-disc of
half the inscribed radius. Inside a sub-disc the map recurses into the
child built on that triangle's boundary curve; between the sub-disc and
the triangle boundary it collapses radially onto the boundary. Nodes are
materialized on first use.
"""
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from heisholder.config import thread_count
from heisholder.params import CarnotParams
from heisholder.services.curves import (
    HCurve,
    curve_length_dc,
    is_horizontal,
    normalize_closed,
    reclose,
)
from heisholder.services.filling import (
    PERIMETER_SLACK,
    Filling,
    FillingError,
    FillingReport,
    coarse_filling,
    verify_filling,
)
from heisholder.services.heis_core import DEFAULT_TOL, HPoint, cc_distance_array, dilate, mul

logger = logging.getLogger(__name__)

MAX_EAGER_DEPTH = 12
SLIVER_RADIUS = 1e-4
STOP_FRACTION = 1e-6
SUBDISC_SHRINK = 0.5
DECAY_SLACK = 1e-6
MIN_PAIRS = 100


class ToleranceUnreachable(ValueError):
    """The requested accuracy needs a deeper tree than the one built."""

    def __init__(self, achievable: float, tol: float):
        super().__init__(f"tolerance {tol:.3g} unreachable at the built depth; achievable bound {achievable:.6g}")
        self.achievable = achievable
        self.tol = tol


@dataclass(frozen=True)
class DiscAddress:
    """Nested sub-disc path and the residual point in the last disc reached."""

    path: Tuple[int, ...]
    residual: Tuple[float, float]


@dataclass(frozen=True)
class Evaluation:
    point: HPoint
    path: Tuple[int, ...]
    sliver: bool
    error_bound: float


@dataclass
class ChildSlot:
    """Geometry of one filling triangle as seen from its parent node.

    curve is the triangle boundary in world coordinates; frame is the same
    loop moved to 0 and dilated to the reference length (None when the child
    is too short to fill), with world = g * dilate(1/scale, frame). offsets
    and spans are the arc fractions of the three sides.
    """

    center: np.ndarray
    radius: float
    curve: HCurve
    frame: Optional[HCurve]
    g: HPoint
    scale: float
    offsets: np.ndarray
    spans: np.ndarray
    sliver: bool


@dataclass(frozen=True)
class HolderEstimate:
    lambda_hat: float
    alpha_fit: float
    pairs: int
    slivers_excluded: int
    envelope: pd.DataFrame = field(repr=False, compare=False)


class Node:
    """One closed curve of the tree.

    curve is in world coordinates; the filling lives on frame, the curve
    moved to 0 and dilated to the reference length, and world points are
    g * dilate(1/scale, frame point). Children are cut from the filling in
    this frame, so round-off does not grow with depth.

    With tree.verify the triangle count is checked on construction and each
    triangle's perimeter when its slot is cut; verify() checks the whole filling.
    """

    def __init__(self, tree: "SubdivisionTree", path: Tuple[int, ...], curve: HCurve,
                 frame: Optional[HCurve], g: HPoint, scale: float,
                 boundary_map: Callable[[float], float], sliver: bool = False):
        self.tree = tree
        self.path = path
        self.depth = len(path)
        self.curve = curve
        self.frame = frame
        self.g = g
        self.scale = scale
        self.boundary_map = boundary_map
        self.sliver = sliver
        self.length = curve_length_dc(curve)
        self.terminal = frame is None or self.length <= STOP_FRACTION * tree.length
        self.children: Dict[int, "Node"] = {}
        self._slots: Dict[int, ChildSlot] = {}
        self._lock = threading.Lock()
        self.filling: Optional[Filling] = None
        if not self.terminal:
            self.filling = coarse_filling(frame, tree.params, verify=False, tol=tree.tol)
            if tree.verify and not self.filling.count < self.filling.bound:
                raise FillingError(f"filling of node {path} has {self.filling.count} triangles, bound {self.filling.bound}")

    def verify(self) -> FillingReport:
        """Check the node filling: every triangle boundary at most 6L long and
        fewer than 2mM triangles."""
        if self.filling is None:
            raise ValueError(f"node {self.path} is terminal and has no filling")
        report = verify_filling(self.filling, self.tree.params.L)
        if not report.ok:
            raise FillingError(
                f"filling of node {self.path} violates its guarantees: max perimeter {report.max_perimeter:.6g}, "
                f"count {report.count} vs bound {report.bound}"
            )
        return report

    @property
    def child_count(self) -> int:
        return 0 if self.filling is None else self.filling.count

    @property
    def is_leaf(self) -> bool:
        return self.terminal or self.depth >= self.tree.depth

    def boundary_value(self, angle: float) -> HPoint:
        return self.curve.point_at_fraction(self.boundary_map(angle))

    def warp(self, z: np.ndarray) -> np.ndarray:
        """Move the disc angle to the filling angle given by the boundary map."""
        radius = math.hypot(z[0], z[1])
        if radius == 0.0:
            return np.zeros(2)
        angle = 2.0 * math.pi * self.boundary_map(math.atan2(z[1], z[0]))
        return radius * np.array([math.cos(angle), math.sin(angle)])

    def slot(self, t: int) -> ChildSlot:
        cached = self._slots.get(t)
        if cached is not None:
            return cached
        f = self.filling
        center, inradius = f.incircle(t)
        edges = [f.edge_curve(a, b) for a, b in f.triangle_edges(t)]
        loop = HCurve.concatenate(edges)
        local_length = curve_length_dc(loop)
        perimeter_limit = 6.0 * self.tree.params.L * (1.0 + PERIMETER_SLACK)
        if self.tree.verify and local_length > perimeter_limit:
            raise FillingError(f"triangle {t} of node {self.path} has perimeter {local_length:.6g} above 6L")
        world_length = local_length / self.scale
        limit = self.length / self.tree.n_eff * (1.0 + DECAY_SLACK)
        if world_length > limit:
            raise FillingError(f"child {self.path + (t,)} has length {world_length:.6g} above {limit:.6g}")

        if local_length > 0.0 and world_length > STOP_FRACTION * self.tree.length:
            ratio = self.tree.reference_length / local_length
            frame, g_local = normalize_closed(reclose(loop), ratio)
            g = mul(self.g, dilate(1.0 / self.scale, g_local))
            scale = self.scale * ratio
            curve = frame.dilate(1.0 / scale).left_translate(g)
        else:
            frame, scale = None, math.inf
            curve = reclose(loop).dilate(1.0 / self.scale).left_translate(self.g)
            g = curve.start

        counts = np.cumsum([0] + [len(e.segments) for e in edges])
        cumulative = loop.cumulative / loop.total_length if loop.total_length > 0.0 else np.zeros(len(loop.cumulative))
        offsets = cumulative[counts[:-1]]
        spans = cumulative[counts[1:]] - offsets
        radius = SUBDISC_SHRINK * inradius
        sliver = radius < SLIVER_RADIUS
        if sliver:
            logger.warning(f"Sliver sub-disc at {self.path + (t,)}: radius {radius:.3g}")
        with self._lock:
            return self._slots.setdefault(t, ChildSlot(center, radius, curve, frame, g, scale, offsets, spans, sliver))

    def radial_fraction(self, t: int, angle: float) -> float:
        """Arc fraction of the child curve hit by the ray from the sub-disc
        center at the given angle."""
        slot = self.slot(t)
        direction = np.array([math.cos(angle), math.sin(angle)])
        side, u = self.filling.radial_hit(t, slot.center, direction)
        return min(max(slot.offsets[side] + u * slot.spans[side], 0.0), 1.0)

    def child(self, t: int) -> "Node":
        existing = self.children.get(t)
        if existing is not None:
            return existing
        slot = self.slot(t)
        node = Node(self.tree, self.path + (t,), slot.curve, slot.frame, slot.g, slot.scale,
                    lambda angle, t=t: self.radial_fraction(t, angle), sliver=slot.sliver)
        # Concurrent builders produce identical nodes; the first one wins.
        with self._lock:
            return self.children.setdefault(t, node)

    def outer_value(self, t: int, offset: np.ndarray) -> HPoint:
        slot = self.slot(t)
        return slot.curve.point_at_fraction(self.radial_fraction(t, math.atan2(offset[1], offset[0])))


class SubdivisionTree:
    """Finite-depth extension of gamma over the closed unit disc."""

    def __init__(self, gamma: HCurve, depth: int, n_eff: int, params: CarnotParams,
                 lazy: bool = True, tol: float = DEFAULT_TOL, verify: bool = True):
        if depth < 0:
            raise ValueError(f"depth must be nonnegative, got {depth}")
        if n_eff < 2:
            raise ValueError(f"n_eff must be at least 2, got {n_eff}")
        if depth > MAX_EAGER_DEPTH and not lazy:
            raise ValueError(f"depth {depth} above {MAX_EAGER_DEPTH} needs lazy mode")
        if not gamma.closed:
            raise ValueError("gamma must be closed")
        if not is_horizontal(gamma, tol):
            raise ValueError("gamma must be horizontal")
        self.gamma = gamma
        self.length = curve_length_dc(gamma)
        if self.length <= 0.0:
            raise ValueError("gamma must have positive length")
        self.depth = depth
        self.n_eff = n_eff
        self.params = params
        self.lazy = lazy
        self.tol = tol
        self.verify = verify
        self.reference_length = 6.0 * params.L * n_eff
        ratio = self.reference_length / self.length
        frame, g = normalize_closed(gamma, ratio)
        self.root = Node(self, (), gamma, frame, g, ratio,
                         lambda angle: float(gamma.fraction_of((angle / (2.0 * math.pi)) % 1.0)))

    def node(self, path: Sequence[int]) -> Node:
        current = self.root
        for t in path:
            if current.is_leaf:
                raise ValueError(f"path {tuple(path)} goes below the built depth {self.depth}")
            current = current.child(int(t))
        return current

    def materialized(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children[t] for t in sorted(node.children, reverse=True))

    def materialize(self, depth: Optional[int] = None, max_nodes: int = 20000) -> int:
        """Build every node down to depth, refusing when more than max_nodes would exist."""
        depth = self.depth if depth is None else min(depth, self.depth)
        level = [self.root]
        total = 1
        for _ in range(depth):
            parents = [node for node in level if not node.is_leaf]
            needed = sum(node.child_count for node in parents)
            if total + needed > max_nodes:
                raise ValueError(
                    f"eager build needs {total + needed} nodes, above max_nodes={max_nodes}; use lazy mode"
                )
            for node in parents:
                node.filling.prefetch_edges()
            jobs = [(node, t) for node in parents for t in range(node.child_count)]
            with ThreadPoolExecutor(max_workers=thread_count()) as pool:
                level = list(pool.map(lambda job: job[0].child(job[1]), jobs))
            total += len(level)
        logger.info(f"Materialized {total} nodes down to depth {depth}")
        return total

    def evaluate(self, x: Sequence[float], tol: float = math.inf) -> Evaluation:
        z = np.asarray(x, dtype=float)
        radius = math.hypot(z[0], z[1])
        if radius > 1.0 + 1e-12:
            raise ValueError(f"point {tuple(z)} lies outside the closed unit disc")
        node = self.root
        sliver = False
        while True:
            radius = math.hypot(z[0], z[1])
            if radius >= 1.0:
                return Evaluation(node.boundary_value(math.atan2(z[1], z[0])), node.path, sliver, 0.0)
            if node.terminal:
                return _fallback(node.curve, node.path, sliver, tol)
            w = node.warp(z)
            t = node.filling.locate(w)
            slot = node.slot(t)
            offset = w - slot.center
            if math.hypot(offset[0], offset[1]) < slot.radius:
                sliver = sliver or slot.sliver
                if node.is_leaf:
                    return _fallback(slot.curve, node.path + (t,), sliver, tol)
                z = offset / slot.radius
                node = node.child(t)
                continue
            return Evaluation(node.outer_value(t, offset), node.path, sliver, 0.0)

    def evaluate_many(self, points: np.ndarray, tol: float = math.inf) -> List[Evaluation]:
        points = np.asarray(points, dtype=float)
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            return list(pool.map(lambda p: self.evaluate(p, tol), points))


def _fallback(curve: HCurve, path: Tuple[int, ...], sliver: bool, tol: float) -> Evaluation:
    achievable = curve_length_dc(curve)
    if achievable > tol:
        raise ToleranceUnreachable(achievable, tol)
    return Evaluation(curve.start, path, sliver, achievable)


def build_tree(gamma: HCurve, depth: int, n_eff: int, params: CarnotParams, lazy: bool = True,
               max_nodes: int = 20000, tol: float = DEFAULT_TOL, verify: bool = True) -> SubdivisionTree:
    tree = SubdivisionTree(gamma, depth, n_eff, params, lazy=lazy, tol=tol, verify=verify)
    if not lazy:
        tree.materialize(depth, max_nodes)
    logger.info(f"Subdivision tree ready: depth={depth}, n_eff={n_eff}, lazy={lazy}, root children={tree.root.child_count}")
    return tree


def evaluate(tree: SubdivisionTree, x: Sequence[float], tol: float = DEFAULT_TOL) -> HPoint:
    return tree.evaluate(x, tol).point


def address(tree: SubdivisionTree, x: Sequence[float]) -> DiscAddress:
    """Sub-disc path of x down to the built depth and its residual point."""
    z = np.asarray(x, dtype=float)
    if math.hypot(z[0], z[1]) > 1.0 + 1e-12:
        raise ValueError(f"point {tuple(z)} lies outside the closed unit disc")
    node = tree.root
    path: List[int] = []
    while not node.is_leaf and math.hypot(z[0], z[1]) < 1.0:
        w = node.warp(z)
        t = node.filling.locate(w)
        slot = node.slot(t)
        offset = w - slot.center
        if math.hypot(offset[0], offset[1]) >= slot.radius:
            break
        path.append(t)
        z = offset / slot.radius
        node = node.child(t)
    return DiscAddress(tuple(path), (float(z[0]), float(z[1])))


def _sample_pairs(rng: np.random.Generator, count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, ys, ds = [], [], []
    remaining = count
    while remaining > 0:
        size = 2 * remaining + 16
        radius = np.sqrt(rng.uniform(0.0, 1.0, size))
        theta = rng.uniform(0.0, 2.0 * math.pi, size)
        x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        dist = 2.0 ** rng.uniform(-16.0, 1.0, size)
        phi = rng.uniform(0.0, 2.0 * math.pi, size)
        y = x + dist[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        keep = np.hypot(y[:, 0], y[:, 1]) <= 1.0
        xs.append(x[keep][:remaining])
        ys.append(y[keep][:remaining])
        ds.append(dist[keep][:remaining])
        remaining -= len(xs[-1])
    return np.vstack(xs), np.vstack(ys), np.concatenate(ds)


def holder_estimate(tree: SubdivisionTree, alpha: float, pairs: int, seed: int) -> HolderEstimate:
    """Measured Hölder constant for alpha and the slope of the upper envelope
    of log d_c against log |x - y|, binned by octave of |x - y|."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if pairs < MIN_PAIRS:
        raise ValueError(f"need at least {MIN_PAIRS} pairs, got {pairs}")
    rng = np.random.default_rng(seed)
    x, y, dist = _sample_pairs(rng, pairs)
    fx = tree.evaluate_many(x)
    fy = tree.evaluate_many(y)
    slivers = np.array([a.sliver or b.sliver for a, b in zip(fx, fy)])
    px = np.array([e.point.as_array() for e in fx])
    py = np.array([e.point.as_array() for e in fy])
    dc = cc_distance_array(px, py, tree.tol)

    usable = ~slivers
    ratios = dc[usable] / dist[usable] ** alpha
    lambda_hat = float(ratios.max()) if ratios.size else math.nan

    frame = pd.DataFrame({"log_d": np.log2(dist), "dc": dc, "sliver": slivers})
    frame = frame[(~frame["sliver"]) & (frame["dc"] > 0.0)].copy()
    frame["log_f"] = np.log2(frame["dc"])
    frame["octave"] = np.floor(frame["log_d"]).astype(int)
    top = frame.loc[frame.groupby("octave")["log_f"].idxmax(), ["octave", "log_d", "log_f"]]
    envelope = top.sort_values("octave").reset_index(drop=True)
    if len(envelope) >= 2:
        alpha_fit = float(np.polyfit(envelope["log_d"], envelope["log_f"], 1)[0])
    else:
        alpha_fit = math.nan
    logger.info(f"Hölder estimate on {pairs} pairs: lambda={lambda_hat:.6g}, alpha_fit={alpha_fit:.4f}, "
                f"slivers excluded={int(slivers.sum())}")
    return HolderEstimate(lambda_hat, alpha_fit, pairs, int(slivers.sum()), envelope)


def boundary_lipschitz_ratio(tree: SubdivisionTree, pairs: int, seed: int) -> float:
    """Largest d_c(f(x), f(y)) / |x - y| over random pairs on the unit circle."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 2.0 * math.pi, pairs)
    b = rng.uniform(0.0, 2.0 * math.pi, pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    fa = np.array([tree.root.boundary_value(v).as_array() for v in a])
    fb = np.array([tree.root.boundary_value(v).as_array() for v in b])
    chord = 2.0 * np.abs(np.sin((a - b) / 2.0))
    return float(np.max(cc_distance_array(fa, fb, tree.tol) / chord))


def predicted_exponent_2d(n: int, K: float, beta: float) -> float:
    if n < 2 or K < 1.0 or beta < 2.0:
        raise ValueError(f"need n >= 2, K >= 1, beta >= 2; got n={n}, K={K}, beta={beta}")
    return math.log(n) / (math.log(2.0) + 0.5 * math.log(K) + 0.5 * beta * math.log(n))


def min_n_for_exponent(alpha: float, K: float, beta: float) -> int:
    """Smallest n >= 2 whose predicted exponent exceeds alpha."""
    if not 0.0 < alpha < 2.0 / beta:
        raise ValueError(f"alpha must lie in (0, 2/beta) = (0, {2.0 / beta:.6g}), got {alpha}")
    hi = 2
    while predicted_exponent_2d(hi, K, beta) <= alpha:
        hi *= 2
    lo = max(2, hi // 2)
    if predicted_exponent_2d(lo, K, beta) > alpha:
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if predicted_exponent_2d(mid, K, beta) > alpha:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class Mesh:
    vertices: np.ndarray
    lines: List[np.ndarray]


def _curves_to_depth(tree: SubdivisionTree, depth: int, max_nodes: int) -> Iterator[HCurve]:
    yield tree.gamma
    level = [tree.root]
    emitted = 1
    for i in range(1, depth + 1):
        parents = [node for node in level if not node.terminal]
        emitted += sum(node.child_count for node in parents)
        if emitted > max_nodes:
            raise ValueError(f"mesh to depth {depth} needs more than max_nodes={max_nodes} curves")
        next_level = []
        for node in parents:
            node.filling.prefetch_edges()
            for t in range(node.child_count):
                yield node.slot(t).curve
                if i < depth:
                    next_level.append(node.child(t))
        level = next_level


def export_mesh(tree: SubdivisionTree, depth: int, samples: int = 16, max_nodes: int = 20000) -> Mesh:
    """Polylines of every node curve down to depth."""
    if depth < 0 or depth > tree.depth:
        raise ValueError(f"mesh depth must lie in [0, {tree.depth}], got {depth}")
    vertices = []
    lines = []
    offset = 0
    for curve in _curves_to_depth(tree, depth, max_nodes):
        pts = curve.sample(samples)
        vertices.append(pts)
        lines.append(np.arange(offset, offset + len(pts)))
        offset += len(pts)
    logger.info(f"Mesh to depth {depth}: {len(lines)} polylines, {offset} vertices")
    return Mesh(np.vstack(vertices), lines)
