import math

import numpy as np
import pytest

from heisholder.services.curves import Chord, HCurve, curve_length_dc, horizontal_lift
from heisholder.services.filling import FillingError, empirical_count_constant
from heisholder.services.heis_core import HPoint, cc_geodesic, dilate, mul
from heisholder.services.holder2d import (
    SubdivisionTree,
    ToleranceUnreachable,
    address,
    boundary_lipschitz_ratio,
    build_tree,
    evaluate,
    export_mesh,
    holder_estimate,
    min_n_for_exponent,
    predicted_exponent_2d,
)


def _disc_points(rng, count: int) -> np.ndarray:
    radius = np.sqrt(rng.uniform(0.0, 1.0, count))
    theta = rng.uniform(0.0, 2.0 * math.pi, count)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)


def test_boundary_restriction(small_tree, rng):
    gamma = small_tree.gamma
    for a in rng.uniform(0.0, 2.0 * math.pi, 200):
        got = small_tree.evaluate([math.cos(a), math.sin(a)]).point.as_array()
        want = gamma.at(a / (2.0 * math.pi)).as_array()
        assert np.max(np.abs(got - want)) <= 1e-9


def test_evaluation_is_deterministic(small_tree, rng):
    for x in _disc_points(rng, 20):
        first = small_tree.evaluate(x)
        second = small_tree.evaluate(x)
        assert first == second


def test_points_outside_the_disc_are_rejected(small_tree):
    with pytest.raises(ValueError):
        small_tree.evaluate([1.0, 0.5])
    with pytest.raises(ValueError):
        address(small_tree, [0.0, -1.1])


def test_interface_between_parent_and_child(small_tree):
    root = small_tree.root
    t = root.filling.triangle_index("lower", 30, 2)
    child = root.child(t)
    for a in np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False):
        inner = child.boundary_value(a).as_array()
        outer = root.outer_value(t, np.array([math.cos(a), math.sin(a)])).as_array()
        assert np.max(np.abs(inner - outer)) <= 1e-9


def test_map_is_continuous_across_a_subdisc_circle(small_tree):
    root = small_tree.root
    t = root.filling.triangle_index("upper", 12, 5)
    slot = root.slot(t)
    for a in (0.3, 1.9, 4.4):
        direction = np.array([math.cos(a), math.sin(a)])
        inside = small_tree.evaluate(slot.center + slot.radius * (1.0 - 1e-12) * direction).point.as_array()
        outside = small_tree.evaluate(slot.center + slot.radius * (1.0 + 1e-12) * direction).point.as_array()
        assert np.max(np.abs(inside - outside)) <= 1e-6


def test_children_decay_by_n_eff(small_tree):
    root = small_tree.root
    for t in (0, 3, root.filling.triangle_index("lower", 40, 6), root.child_count - 1):
        child = root.child(t)
        assert child.length <= root.length / small_tree.n_eff * (1.0 + 1e-6)
        assert child.depth == 1
        assert child.path == (t,)


def test_address_of_a_subdisc_center(small_tree):
    t = small_tree.root.filling.triangle_index("upper", 100, 4)
    slot = small_tree.root.slot(t)
    found = address(small_tree, slot.center)
    assert found.path == (t,)
    assert np.allclose(found.residual, 0.0, atol=1e-9)
    assert address(small_tree, [1.0, 0.0]).path == ()


def test_leaf_fallback_and_unreachable_tolerance(flat_tree):
    t = flat_tree.root.filling.triangle_index("lower", 20, 1)
    slot = flat_tree.root.slot(t)
    loose = flat_tree.evaluate(slot.center)
    assert loose.path == (t,)
    assert loose.error_bound == pytest.approx(curve_length_dc(slot.curve))
    assert loose.point == slot.curve.start

    with pytest.raises(ToleranceUnreachable) as caught:
        evaluate(flat_tree, slot.center, tol=1e-6)
    assert caught.value.achievable == pytest.approx(loose.error_bound)
    assert isinstance(caught.value, ValueError)


def test_constructor_validation(square_loop, params):
    with pytest.raises(ValueError):
        SubdivisionTree(square_loop, -1, 2, params)
    with pytest.raises(ValueError):
        SubdivisionTree(square_loop, 1, 1, params)
    with pytest.raises(ValueError):
        SubdivisionTree(square_loop, 13, 2, params, lazy=False)
    with pytest.raises(ValueError):
        SubdivisionTree(horizontal_lift([(0, 0), (1, 0), (1, 1)]), 1, 2, params)


def test_node_paths_below_depth_are_rejected(small_tree):
    t = 0
    child = small_tree.node([t])
    assert child.is_leaf
    with pytest.raises(ValueError):
        small_tree.node([t, 0])


def test_eager_build_respects_max_nodes(square_loop, params):
    with pytest.raises(ValueError, match="max_nodes"):
        build_tree(square_loop, 1, 2, params, lazy=False, max_nodes=100)


def test_holder_estimate(small_tree):
    estimate = holder_estimate(small_tree, 0.5, 200, seed=11)
    assert estimate.pairs == 200
    assert math.isfinite(estimate.lambda_hat) and estimate.lambda_hat > 0.0
    assert math.isfinite(estimate.alpha_fit)
    assert list(estimate.envelope.columns) == ["octave", "log_d", "log_f"]
    assert estimate.envelope["octave"].is_monotonic_increasing


def test_holder_estimate_arguments(small_tree):
    with pytest.raises(ValueError):
        holder_estimate(small_tree, 0.0, 200, seed=1)
    with pytest.raises(ValueError):
        holder_estimate(small_tree, 1.5, 200, seed=1)
    with pytest.raises(ValueError):
        holder_estimate(small_tree, 0.5, 99, seed=1)


def test_boundary_is_lipschitz(small_tree):
    # arc-length boundary map: at most length / 4 up to solver tolerance
    ratio = boundary_lipschitz_ratio(small_tree, 500, seed=2)
    assert 0.0 < ratio <= small_tree.length / 2.0 * (1.0 + 1e-6)


def test_predicted_exponent():
    assert predicted_exponent_2d(8, 1.0, 3.0) == pytest.approx(3.0 / 5.5)
    assert predicted_exponent_2d(64, 1.0, 3.0) > predicted_exponent_2d(8, 1.0, 3.0)
    assert predicted_exponent_2d(10 ** 9, 1.0, 3.0) < 2.0 / 3.0
    with pytest.raises(ValueError):
        predicted_exponent_2d(1, 1.0, 3.0)


def test_min_n_for_exponent():
    assert min_n_for_exponent(0.52, 1.0, 3.0) == 6
    n = min_n_for_exponent(0.6, 4.0, 3.0)
    assert predicted_exponent_2d(n, 4.0, 3.0) > 0.6
    assert predicted_exponent_2d(n - 1, 4.0, 3.0) <= 0.6
    with pytest.raises(ValueError):
        min_n_for_exponent(0.7, 1.0, 3.0)


def test_mesh_export(small_tree):
    root_only = export_mesh(small_tree, 0, samples=4)
    assert len(root_only.lines) == 1
    assert root_only.vertices.shape == (4 * len(small_tree.gamma.segments) + 1, 3)
    with pytest.raises(ValueError):
        export_mesh(small_tree, 2)
    with pytest.raises(ValueError, match="max_nodes"):
        export_mesh(small_tree, 1, max_nodes=10)




@pytest.fixture(scope="module")
def deep_tree(square_loop, params):
    return build_tree(square_loop, 2, 2, params)


def _preimage(node, w: np.ndarray) -> np.ndarray:
    """Disc point that the node's boundary map warps onto the planar point w."""
    target = (math.atan2(w[1], w[0]) / (2.0 * math.pi)) % 1.0

    def gap(a: float) -> float:
        return (node.boundary_map(a) - target + 0.5) % 1.0 - 0.5

    angles = np.linspace(-math.pi, math.pi, 1025)
    gaps = [gap(a) for a in angles]
    for lo, hi, g_lo, g_hi in zip(angles, angles[1:], gaps, gaps[1:]):
        if g_lo <= 0.0 <= g_hi and g_hi - g_lo < 0.5:
            break
    else:
        raise AssertionError("boundary map never reaches the target angle")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    radius = math.hypot(w[0], w[1])
    return radius * np.array([math.cos(lo), math.sin(lo)])


def _detour(filling, a: int, b: int) -> HCurve:
    p, q = filling.vertex_image(a), filling.vertex_image(b)
    far = mul(p, HPoint.of(5.1, 0.0, 0.0))
    return HCurve.concatenate([HCurve.from_segments([Chord(p, far)]), cc_geodesic(far, q)])


def test_grandchildren_are_built_in_exact_frames(deep_tree):
    root = deep_tree.root
    ring = np.linspace(0.0, 2.0 * math.pi, 32, endpoint=False)
    for t in (root.filling.triangle_index("upper", 30, 5), root.filling.triangle_index("lower", 60, 1)):
        child = root.child(t)
        assert child.frame is not None
        assert child.frame.end == child.frame.start
        assert np.allclose(child.frame.start.as_array(), 0.0, atol=1e-12)
        assert curve_length_dc(child.frame) == pytest.approx(deep_tree.reference_length, rel=1e-9)
        for t2 in (0, child.filling.triangle_index("lower", 40, 2), child.child_count - 1):
            grand = child.child(t2)
            assert grand.path == (t, t2)
            assert grand.curve.closed and grand.frame.closed
            assert np.allclose(grand.frame.start.as_array(), 0.0, atol=1e-12)
            assert grand.length <= child.length / deep_tree.n_eff * (1.0 + 1e-6)
            assert grand.length <= deep_tree.length / deep_tree.n_eff ** 2 * (1.0 + 1e-6) ** 2
            for s in (0.0, 0.3, 0.8):
                local = dilate(1.0 / grand.scale, grand.frame.point_at_fraction(s))
                assert np.allclose(mul(grand.g, local).as_array(), grand.curve.point_at_fraction(s).as_array(),
                                   atol=1e-12)
            for a in ring:
                inner = grand.boundary_value(a).as_array()
                outer = child.outer_value(t2, np.array([math.cos(a), math.sin(a)])).as_array()
                assert np.max(np.abs(inner - outer)) <= 1e-9


def test_descent_to_depth_two_from_the_disc(deep_tree):
    root = deep_tree.root
    t = root.filling.triangle_index("upper", 30, 5)
    child = root.child(t)
    t2 = child.filling.triangle_index("lower", 40, 2)
    inner = _preimage(child, child.slot(t2).center)
    outer = root.slot(t)
    x = _preimage(root, outer.center + outer.radius * inner)

    found = address(deep_tree, x)
    assert found.path == (t, t2)
    assert np.allclose(found.residual, 0.0, atol=1e-6)
    evaluation = deep_tree.evaluate(x)
    assert evaluation.path[:2] == (t, t2)
    assert np.all(np.isfinite(evaluation.point.as_array()))


def test_holder_estimate_on_a_depth_two_tree(deep_tree):
    estimate = holder_estimate(deep_tree, 0.1, 300, seed=7)
    assert math.isfinite(estimate.lambda_hat)
    assert math.isfinite(estimate.alpha_fit)


def test_node_fillings_pass_verification(deep_tree, params):
    assert deep_tree.verify
    root = deep_tree.root
    assert root.verify().ok
    child = root.child(root.filling.triangle_index("upper", 30, 5))
    report = child.verify()
    assert report.ok
    assert report.max_perimeter <= 6.0 * params.L * (1.0 + 1e-12)


def test_detoured_triangle_is_refused(square_loop, params):
    tree = SubdivisionTree(square_loop, 1, 2, params)
    root = tree.root
    t = root.filling.triangle_index("lower", 10, 3)
    a, b = root.filling.triangle_edges(t)[0]
    root.filling = root.filling.with_edge_curve(a, b, _detour(root.filling, a, b))
    with pytest.raises(FillingError, match="perimeter"):
        root.slot(t)
    with pytest.raises(FillingError, match="violates"):
        root.verify()
    untouched = root.filling.triangle_index("upper", 40, 6)
    assert root.slot(untouched).curve.closed


def test_unverified_tree_still_enforces_decay(square_loop, params):
    tree = SubdivisionTree(square_loop, 1, 2, params, verify=False)
    root = tree.root
    t = root.filling.triangle_index("lower", 10, 3)
    a, b = root.filling.triangle_edges(t)[0]
    root.filling = root.filling.with_edge_curve(a, b, _detour(root.filling, a, b))
    with pytest.raises(FillingError, match="length"):
        root.slot(t)


@pytest.mark.slow
def test_depth_two_estimate_with_n_eff_eight(square_loop, params):
    tree = build_tree(square_loop, 2, 8, params)
    estimate = holder_estimate(tree, 0.1, 2000, seed=7)
    assert math.isfinite(estimate.lambda_hat)
    assert any(node.depth == 1 for node in tree.materialized())


@pytest.fixture(scope="module")
def acceptance_tree(square_loop, params):
    return build_tree(square_loop, 4, 8, params)


@pytest.mark.slow
def test_depth_four_boundary_restriction(acceptance_tree, rng):
    gamma = acceptance_tree.gamma
    worst = 0.0
    for a in rng.uniform(0.0, 2.0 * math.pi, 1000):
        got = acceptance_tree.evaluate([math.cos(a), math.sin(a)]).point.as_array()
        want = gamma.at(a / (2.0 * math.pi)).as_array()
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst <= 1e-9


@pytest.mark.slow
def test_depth_four_interfaces_and_decay(acceptance_tree, rng):
    tree = acceptance_tree
    angles = np.linspace(0.0, 2.0 * math.pi, 100, endpoint=False)
    parent = tree.root
    sampled = 0
    for depth in range(1, tree.depth + 1):
        picks = rng.choice(parent.child_count, 13, replace=False)
        children = []
        for t in picks:
            child = parent.child(int(t))
            assert child.depth == depth
            assert child.length <= parent.length / 8 * (1.0 + 1e-6)
            assert child.length <= tree.length * 8.0 ** -depth * (1.0 + 1e-6) ** depth
            worst = 0.0
            for a in angles:
                inner = child.boundary_value(a).as_array()
                outer = parent.outer_value(int(t), np.array([math.cos(a), math.sin(a)])).as_array()
                worst = max(worst, float(np.max(np.abs(inner - outer))))
            assert worst <= 1e-9
            children.append(child)
        sampled += len(children)
        parent = next(child for child in children if not child.terminal)
    assert sampled >= 50
    assert tree.node(parent.path[:-1]).verify().ok


@pytest.mark.slow
def test_lambda_hat_is_stable_under_reseeding(acceptance_tree):
    first = holder_estimate(acceptance_tree, 0.5, 10_000, seed=1).lambda_hat
    second = holder_estimate(acceptance_tree, 0.5, 10_000, seed=2).lambda_hat
    assert math.isfinite(first) and math.isfinite(second)
    assert abs(first - second) <= 0.2 * max(first, second)


@pytest.fixture(scope="module")
def exponent_fits(square_loop, params):
    fits = {}
    for n in (4, 8, 16):
        tree = build_tree(square_loop, 2, n, params)
        fits[n] = holder_estimate(tree, 0.5, 10_000, seed=5).alpha_fit
    return fits


@pytest.mark.slow
def test_fitted_exponent_meets_prediction(exponent_fits, params):
    for n, alpha_fit in exponent_fits.items():
        K_emp = empirical_count_constant(n, params)
        assert alpha_fit >= 0.9 * predicted_exponent_2d(n, max(1.0, K_emp), 3.0)


@pytest.mark.slow
def test_fitted_exponent_grows_with_n_eff(exponent_fits):
    assert exponent_fits[8] >= exponent_fits[4] - 0.02
    assert exponent_fits[16] >= exponent_fits[8] - 0.02
