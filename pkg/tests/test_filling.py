import math

import numpy as np
import pytest

from heisholder.params import CarnotParams
from heisholder.services.curves import close_with_geodesic, curve_length_dc, horizontal_lift, is_horizontal
from heisholder.services.curves import Chord, HCurve
from heisholder.services.filling import (
    HUB,
    coarse_filling,
    empirical_count_constant,
    epsilon_area,
    filling_counts,
    filling_growth,
    geodesic_halves,
    triangle_boundary_curves,
    triangle_count,
    verify_filling,
)
from heisholder.services.heis_core import HPoint, cc_geodesic, mul, solve_geodesic


@pytest.fixture(scope="module")
def filling(square_loop, params):
    return coarse_filling(square_loop, params)


def _random_loop(rng, length: float):
    """Closed horizontal curve through 0 from a random star polygon, scaled to length."""
    angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, 7))
    radii = rng.uniform(0.5, 1.5, 7)
    pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    pts = np.vstack([pts, pts[:1]]) - pts[0]
    loop = close_with_geodesic(horizontal_lift(pts.tolist()))
    return loop.dilate(length / curve_length_dc(loop))


def test_counts_for_radius_twelve(params):
    assert filling_counts(12.0, params) == (13, 170)
    assert triangle_count(13, 170) == 4407
    assert triangle_count(13, 170) < 2 * 13 * 170


def test_square_loop_counts(filling):
    assert (filling.M, filling.m) == (8, 74)
    assert filling.count == 1176
    assert filling.bound == 2 * 8 * 74
    assert filling.r == pytest.approx(4.0 + 2.0 * math.sqrt(math.pi))


def test_square_loop_perimeters(filling, params):
    report = verify_filling(filling, params.L)
    assert report.ok
    assert report.max_perimeter <= 6.0 * params.L
    assert len(filling.perimeters()) == filling.count


def test_triangles_are_counterclockwise(filling):
    tris = filling.triangles
    assert tris.shape == (filling.count, 3)
    for t in range(filling.count):
        assert tuple(tris[t]) == filling.triangle(t)
        a, b, c = (filling.planar_embed(int(v)) for v in tris[t])
        assert (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) > 0.0


def test_triangulation_is_a_disc(filling):
    tris = filling.triangles
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    unique = np.unique(np.sort(edges, axis=1), axis=0)
    V = filling.vertex_count
    assert V - len(unique) + filling.count == 1
    # every interior edge is shared by two triangles, outer edges by one
    _, multiplicity = np.unique(np.sort(edges, axis=1), axis=0, return_counts=True)
    assert np.count_nonzero(multiplicity == 1) == filling.M
    assert set(multiplicity.tolist()) == {1, 2}


def test_boundary_edges_follow_the_curve(filling, square_loop):
    for l in range(filling.M):
        a = filling.vertex_index(filling.m, l)
        b = filling.vertex_index(filling.m, l + 1)
        assert filling.is_boundary_edge(a, b)
        piece = filling.edge_curve(a, b)
        assert np.allclose(piece.start.as_array(), square_loop.point_at_fraction(l / filling.M).as_array(), atol=1e-12)
    total = sum(curve_length_dc(filling.boundary_piece(l)) for l in range(filling.M))
    assert total == pytest.approx(filling.r)


def test_vertex_images(filling):
    assert filling.vertex_image(HUB) == HPoint()
    v = filling.vertex_index(filling.m, 0)
    assert np.allclose(filling.vertex_image(v).as_array(), 0.0, atol=1e-12)
    v = filling.vertex_index(filling.m // 2, 3)
    ring = filling.ring[3]
    r = (filling.m // 2) / filling.m
    assert np.allclose(filling.vertex_image(v).as_array(), [r * ring[0], r * ring[1], r * r * ring[2]])


def test_triangle_boundaries_are_short_closed_horizontal_loops(filling, params):
    picks = [0, 5, filling.M, filling.M + 1, filling.count // 2, filling.count - 2, filling.count - 1]
    for t in picks:
        loop = filling.triangle_boundary(t)
        assert loop.closed
        assert is_horizontal(loop)
        assert curve_length_dc(loop) <= 6.0 * params.L * (1.0 + 1e-12)
        assert curve_length_dc(loop) == pytest.approx(filling.triangle_perimeter(t))
        assert curve_length_dc(loop) == pytest.approx(filling.perimeters()[t], rel=1e-9)


def test_triangle_boundary_curves_cover_every_edge_both_ways(filling, params):
    loops = triangle_boundary_curves(filling)
    assert len(loops) == filling.count
    directed = {}
    for t, loop in enumerate(loops):
        assert loop.closed
        assert curve_length_dc(loop) <= 6.0 * params.L * (1.0 + 1e-12)
        corners = filling.triangle(t)
        # the loop visits the corners in the counterclockwise order of the embedding
        assert np.allclose(loop.start.as_array(), filling.vertex_image(corners[0]).as_array(), atol=1e-12)
        for a, b in filling.triangle_edges(t):
            directed[(a, b)] = directed.get((a, b), 0) + 1
    for (a, b), seen in directed.items():
        assert seen == 1
        assert ((b, a) in directed) != filling.is_boundary_edge(a, b)
    assert sum(filling.is_boundary_edge(a, b) for a, b in directed) == filling.M


def test_detour_edge_fails_verification(filling, params):
    t = filling.triangle_index("lower", 10, 3)
    a, b = filling.triangle_edges(t)[0]
    assert not filling.is_boundary_edge(a, b)
    p, q = filling.vertex_image(a), filling.vertex_image(b)
    far = mul(p, HPoint.of(5.1, 0.0, 0.0))
    detour = HCurve.concatenate([HCurve.from_segments([Chord(p, far)]), cc_geodesic(far, q)])
    assert curve_length_dc(detour) > 10.0

    tampered = filling.with_edge_curve(a, b, detour)
    report = verify_filling(tampered, params.L)
    assert not report.ok
    assert report.max_perimeter >= curve_length_dc(detour)
    assert tampered.triangle_perimeter(t) >= curve_length_dc(detour)
    assert curve_length_dc(tampered.edge_curve(b, a)) == pytest.approx(curve_length_dc(detour))
    assert np.count_nonzero(tampered.perimeters() > 6.0 * params.L) == 2
    # the original is left alone
    assert verify_filling(filling, params.L).ok


def test_geodesic_halves_end_exactly_on_their_endpoints(rng):
    for _ in range(20):
        p = HPoint.of(*(float(v) for v in rng.uniform(-2.0, 2.0, 3)))
        q = HPoint.of(*(float(v) for v in rng.uniform(-2.0, 2.0, 3)))
        arc = solve_geodesic(p, q)
        halves = geodesic_halves(p, q, arc)
        curve = HCurve.from_segments(halves)
        assert curve.start == p
        assert curve.end == q
        assert curve_length_dc(curve) == pytest.approx(arc.length, rel=1e-12)
        assert np.allclose(halves[0].end.as_array(), halves[1].start.as_array(), atol=1e-7)
    # z = xy/2 is reached by the straight lift
    straight = geodesic_halves(HPoint(), HPoint.of(1, 2, 1), solve_geodesic(HPoint(), HPoint.of(1, 2, 1)))
    assert len(straight) == 1


def test_prefetch_solves_every_edge(square_loop, params):
    fresh = coarse_filling(square_loop, params, verify=False)
    assert fresh.prefetch_edges() == 8 + 8 * 74 + 2 * 8 * 73


def test_locate_finds_the_triangle_of_its_incenter(filling):
    for t in range(0, filling.count, 37):
        center, radius = filling.incircle(t)
        assert radius > 0.0
        assert filling.locate(center) == t


def test_rejects_unsuitable_curves(square_loop, params):
    with pytest.raises(ValueError, match="6L"):
        coarse_filling(square_loop.dilate(0.5), params)
    with pytest.raises(ValueError, match="closed"):
        coarse_filling(horizontal_lift([(0, 0), (7, 0)]), params)
    with pytest.raises(ValueError, match="pass through 0"):
        coarse_filling(square_loop.left_translate(HPoint.of(1, 0, 0)), params)


def test_random_loops_meet_the_guarantees(rng, params):
    for _ in range(5):
        loop = _random_loop(rng, rng.uniform(6.0, 20.0))
        f = coarse_filling(loop, params)
        report = verify_filling(f, params.L)
        assert report.ok
        assert f.count < f.bound


@pytest.mark.slow
def test_fifty_random_loops_meet_the_guarantees(rng, params):
    for _ in range(50):
        loop = _random_loop(rng, rng.uniform(6.0, 100.0))
        report = verify_filling(coarse_filling(loop, params, verify=False), params.L)
        assert report.ok


def test_epsilon_area(square_loop, params):
    # eps = 6L/2 doubles the curve before filling
    count = epsilon_area(square_loop, 3.0, params)
    M, m = filling_counts(2.0 * curve_length_dc(square_loop), params)
    assert count == triangle_count(M, m)
    assert epsilon_area(square_loop, 1.0, params) > count
    with pytest.raises(ValueError):
        epsilon_area(square_loop, 0.0, params)


def test_growth_slope_is_at_most_cubic(square_loop, params):
    radii = [6.0 * params.L * s for s in (1, 2, 4, 8, 16)]
    table = filling_growth(square_loop, params, radii)
    assert list(table.columns) == ["r", "M", "m", "count", "bound"]
    assert table["r"].tolist() == radii
    assert table["count"].tolist() == [triangle_count(*filling_counts(r, params)) for r in radii]
    assert (table["count"] < table["bound"]).all()
    assert table.attrs["slope"] <= 3.1


def test_empirical_count_constant(params):
    assert empirical_count_constant(2, params) == pytest.approx(550.875)
    assert empirical_count_constant(2, CarnotParams(L=2.0)) == pytest.approx(
        triangle_count(*filling_counts(24.0, CarnotParams(L=2.0))) / 8.0
    )
