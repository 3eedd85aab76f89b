import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisholder.services.curves import (
    Chord,
    HCurve,
    SegmentMode,
    constant_speed,
    curve_length_dc,
    horizontal_lift,
    is_horizontal,
    normalize_closed,
    planar_shoelace,
    reclose,
    segment_from_dict,
    signed_area,
    translate_to_origin,
)
from heisholder.services.heis_core import HPoint
from tests.conftest import UNIT_SQUARE

coordinates = st.integers(-500, 500).map(lambda v: v / 100.0)
planar_points = st.lists(
    st.tuples(coordinates, coordinates),
    min_size=2,
    max_size=12,
)


def test_square_lift_heights():
    lift = horizontal_lift(UNIT_SQUARE)
    assert [p.z for p in lift.vertices] == [0.0, 0.0, 1.0, 1.0, 1.0]
    assert not lift.closed
    assert signed_area(lift) == pytest.approx(1.0)
    assert planar_shoelace(UNIT_SQUARE) == pytest.approx(1.0)
    assert curve_length_dc(lift) == pytest.approx(4.0)
    assert is_horizontal(lift)


def test_square_loop_closes_with_vertical_geodesic(square_loop):
    assert square_loop.closed
    assert is_horizontal(square_loop)
    assert curve_length_dc(square_loop) == pytest.approx(4.0 + 2.0 * math.sqrt(math.pi), abs=1e-9)
    assert signed_area(square_loop) == pytest.approx(0.0, abs=1e-9)
    assert square_loop.modes[-1] is SegmentMode.GEODESIC
    assert np.allclose(square_loop.end.as_array(), [0.0, 0.0, 0.0], atol=1e-9)


def test_zero_area_loop_lifts_closed():
    lift = horizontal_lift([(0, 0), (1, 0), (0, 0)])
    assert lift.closed
    assert lift.end == HPoint.of(0, 0, 0)


def test_repeated_points_are_dropped():
    lift = horizontal_lift([(0, 0), (0, 0), (1, 0), (1, 0), (1, 2)])
    assert len(lift.segments) == 2
    with pytest.raises(ValueError):
        horizontal_lift([(0, 0)])


@given(planar_points, st.floats(-3, 3, allow_nan=False))
@settings(max_examples=200)
def test_lift_gains_the_planar_area_integral(points, z0):
    lift = horizontal_lift(points, z0)
    assert is_horizontal(lift)
    assert lift.end.z - z0 == pytest.approx(planar_shoelace(points), abs=1e-9)
    assert lift.end.z - z0 == pytest.approx(signed_area(lift), abs=1e-9)


def test_subcurve_keeps_whole_segments():
    lift = horizontal_lift(UNIT_SQUARE)
    piece = lift.subcurve(0.25, 0.75)
    assert len(piece.segments) == 2
    assert piece.start == HPoint.of(1, 0, 0)
    assert piece.end == HPoint.of(0, 1, 1)
    assert curve_length_dc(piece) == pytest.approx(2.0)


def test_subcurve_inside_one_segment():
    lift = horizontal_lift(UNIT_SQUARE)
    piece = lift.subcurve(0.3, 0.4)
    assert curve_length_dc(piece) == pytest.approx(0.4)
    assert np.allclose(piece.start.as_array(), [1.0, 0.2, 0.2])
    assert is_horizontal(piece)
    with pytest.raises(ValueError):
        lift.subcurve(0.5, 0.5)


def test_dilate_and_translate(square_loop):
    bigger = square_loop.dilate(3.0)
    assert curve_length_dc(bigger) == pytest.approx(3.0 * curve_length_dc(square_loop))
    assert bigger.closed and is_horizontal(bigger)

    g = HPoint.of(0.5, -1.0, 2.0)
    moved = square_loop.left_translate(g)
    assert curve_length_dc(moved) == pytest.approx(curve_length_dc(square_loop))
    assert moved.start == g
    back, start = translate_to_origin(moved)
    assert start == g
    assert np.allclose(back.start.as_array(), 0.0, atol=1e-12)

    with pytest.raises(ValueError):
        square_loop.dilate(-1.0)


def test_reversed_runs_backwards():
    lift = horizontal_lift(UNIT_SQUARE)
    back = lift.reversed()
    assert back.start == lift.end
    assert back.end == lift.start
    for t in (0.1, 0.3, 0.55, 0.9):
        assert np.allclose(back.at(t).as_array(), lift.at(1.0 - t).as_array(), atol=1e-12)


def test_vertical_segment_has_no_carnot_length():
    p = HPoint.of(0, 0, 0)
    curve = HCurve.from_segments([Chord(p, HPoint.of(0, 0, 1), SegmentMode.VERTICAL)])
    assert not is_horizontal(curve)
    with pytest.raises(ValueError):
        curve_length_dc(curve)


def test_param_validation():
    seg = Chord(HPoint.of(0, 0, 0), HPoint.of(1, 0, 0))
    with pytest.raises(ValueError):
        HCurve((seg,), False, (0.0, 0.6, 0.5, 1.0), (0.0, 0.2, 0.4, 1.0))
    with pytest.raises(ValueError):
        HCurve((seg,), True)
    with pytest.raises(ValueError):
        HCurve(())


def test_open_curve_param_range():
    lift = horizontal_lift(UNIT_SQUARE)
    with pytest.raises(ValueError):
        lift.at(1.5)


def test_constant_speed_param(square_loop):
    even = constant_speed(square_loop, samples=4)
    assert even.is_constant_speed()
    assert np.allclose(even.at(0.5).as_array(), square_loop.point_at_fraction(0.5).as_array())


def test_constant_speed_over_unequal_segments():
    # lengths 1 and 3: the lift spends half its parameter on each
    lift = horizontal_lift([(0, 0), (1, 0), (1, 3)])
    assert np.allclose(lift.at(0.5).as_array(), [1.0, 0.0, 0.0])
    even = constant_speed(lift, samples=2)
    assert even.is_constant_speed()
    assert np.allclose(even.at(0.25).as_array(), [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(even.at(0.5).as_array(), [1.0, 1.0, 1.0], atol=1e-12)
    assert np.allclose(even.at(1.0).as_array(), [1.0, 3.0, 3.0], atol=1e-12)
    with pytest.raises(ValueError):
        constant_speed(lift, samples=0)


def test_reclose_snaps_a_small_gap():
    there_and_back = horizontal_lift([(0, 0), (2, 0), (1e-9, 0)])
    assert not there_and_back.closed
    loop = reclose(there_and_back)
    assert loop.closed
    assert loop.end == loop.start
    assert is_horizontal(loop)
    assert curve_length_dc(loop) == pytest.approx(4.0)


def test_reclose_reanchors_a_closing_arc(square_loop):
    opened = HCurve(square_loop.segments, False, square_loop.knots_t, square_loop.knots_s)
    loop = reclose(opened)
    assert loop.end == loop.start
    assert curve_length_dc(loop) == pytest.approx(curve_length_dc(square_loop), rel=1e-12)
    for t in (0.2, 0.7, 0.95):
        assert np.allclose(loop.at(t).as_array(), square_loop.at(t).as_array(), atol=1e-8)


def test_reclose_rejects_a_wide_gap():
    # the lifted square climbs by its area
    with pytest.raises(ValueError, match="closing gap"):
        reclose(horizontal_lift(UNIT_SQUARE))


def test_normalize_closed_round_trip(square_loop):
    g = HPoint.of(0.5, -1.0, 2.0)
    moved = square_loop.left_translate(g)
    normal, start = normalize_closed(moved, 3.0)
    assert start == g
    assert np.allclose(normal.start.as_array(), 0.0, atol=1e-12)
    assert normal.end == normal.start
    assert curve_length_dc(normal) == pytest.approx(3.0 * curve_length_dc(square_loop))
    back = normal.dilate(1.0 / 3.0).left_translate(start)
    for t in (0.0, 0.3, 0.6, 0.9):
        assert np.allclose(back.at(t).as_array(), moved.at(t).as_array(), atol=1e-8)
    with pytest.raises(ValueError):
        normalize_closed(horizontal_lift(UNIT_SQUARE), 2.0)


def test_segments_serialize(square_loop):
    for seg in square_loop.segments:
        again = segment_from_dict(seg.to_dict())
        assert np.allclose(again.start.as_array(), seg.start.as_array())
        assert np.allclose(again.end.as_array(), seg.end.as_array())
        assert again.length == pytest.approx(seg.length)
