import numpy as np
import pytest

import src.knots.curve as curve_module
from src.electrostatics.oracle import reference_arc_length
from src.errors import InvalidKnot
from src.knots.curve import (
    crossing_upper_bound,
    curvature_reach,
    default_tube,
    distance_to_knot,
    eval_curve,
    knot_label,
    make_fourier_knot,
    make_sampled_knot,
    make_torus_knot,
    min_self_distance,
)


def test_unit_circle_start_point(unknot):
    position, velocity = eval_curve(unknot, 0.0)
    assert np.allclose(position, [1.0, 0.0, 0.0], atol=1e-15)
    assert np.allclose(velocity, [0.0, 1.0, 0.0], atol=1e-15)


def test_unit_circle_is_closed(unknot):
    start, _ = eval_curve(unknot, 0.0)
    end, _ = eval_curve(unknot, 2 * np.pi)
    assert np.allclose(start, end, atol=1e-15)


@pytest.mark.parametrize("t", [0.0, 0.3, 1.7, 4.2, 6.0])
def test_trefoil_velocity_matches_finite_difference(trefoil, t):
    h = 1e-6
    fd = (trefoil.positions(t + h) - trefoil.positions(t - h)) / (2 * h)
    velocity = trefoil.velocities(t)
    assert np.linalg.norm(fd - velocity) / np.linalg.norm(velocity) < 1e-8


def test_trefoil_acceleration_matches_finite_difference(trefoil):
    t, h = 1.1, 1e-5
    fd = (trefoil.velocities(t + h) - trefoil.velocities(t - h)) / (2 * h)
    acceleration = trefoil.accelerations(t)
    assert np.linalg.norm(fd - acceleration) / np.linalg.norm(acceleration) < 1e-7


@pytest.mark.parametrize("radius, expected", [(1.0, 2 * np.pi), (3.0, 6 * np.pi)])
def test_circle_arc_length(radius, expected):
    circle = make_torus_knot(1, 0, radius, 0.0)
    assert circle.arc_length == pytest.approx(expected, rel=1e-13)


def test_trefoil_arc_length_matches_dense_trapezoid(trefoil):
    assert trefoil.arc_length == pytest.approx(reference_arc_length(trefoil, 10**6), rel=1e-9)


def test_circle_self_distance_is_diameter(unknot):
    assert unknot.min_self_distance == pytest.approx(2.0, rel=1e-4)


def test_trefoil_self_distance_stable_under_grid_doubling(trefoil, monkeypatch):
    coarse = min_self_distance(trefoil)
    monkeypatch.setattr(curve_module, "SELF_DISTANCE_GRID", 2 * curve_module.SELF_DISTANCE_GRID)
    fine = min_self_distance(trefoil)
    assert coarse > 0
    assert fine == pytest.approx(coarse, rel=1e-2)


def test_self_intersecting_torus_curve_has_zero_self_distance():
    # With R = r the curve passes through the origin three times.
    curve = make_torus_knot(2, 3, 1.0, 1.0, validate=False)
    assert min_self_distance(curve) < 1e-6 * curve.arc_length


def test_circle_search_region(unknot):
    box = unknot.search_region
    padding = curve_module.BOX_PADDING * unknot.diameter
    assert np.allclose(box.lower, [-1 - padding, -1 - padding, -padding], atol=1e-12)
    assert np.allclose(box.upper, [1 + padding, 1 + padding, padding], atol=1e-12)


def test_search_region_contains_the_curve(trefoil):
    assert np.all(trefoil.search_region.contains(trefoil.dense_samples))


def test_circle_has_no_crossings(unknot):
    assert crossing_upper_bound(unknot, direction=(0.0, 0.0, 1.0)) == 0


def test_trefoil_generic_projection_has_at_least_three_crossings(trefoil):
    assert crossing_upper_bound(trefoil, direction=(0.13, -0.07, 1.0)) >= 3


@pytest.mark.parametrize("jitter", [(1e-4, 0.0, 0.0), (0.0, -1e-4, 0.0), (2e-4, 1e-4, -1e-4)])
def test_crossing_count_is_stable_under_jitter(trefoil, jitter):
    direction = np.array([0.13, -0.07, 1.0])
    expected = crossing_upper_bound(trefoil, direction=direction)
    assert crossing_upper_bound(trefoil, direction=direction + jitter) == expected


@pytest.mark.parametrize(
    "point, expected",
    [
        ([0.0, 0.0, 0.0], 1.0),
        ([2.0, 0.0, 0.0], 1.0),
        ([0.0, 0.0, 0.75], 1.25),
        ([np.cos(0.1) * 1.0001, np.sin(0.1) * 1.0001, 0.0], 1e-4),
    ],
)
def test_distance_to_circle(unknot, point, expected):
    assert distance_to_knot(unknot, point) == pytest.approx(expected, rel=1e-6)


def test_distance_to_knot_is_vectorized(unknot):
    points = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    assert np.allclose(distance_to_knot(unknot, points), [1.0, 2.0])


@pytest.mark.parametrize("radius", [1.0, 3.0])
def test_circle_reach_is_its_radius(radius):
    assert curvature_reach(make_torus_knot(1, 0, radius, 0.0)) == pytest.approx(radius, rel=1e-10)


def test_default_tube_of_circle(unknot):
    # min(0.25 * self-distance 2, 0.5 * curvature radius 1)
    assert default_tube(unknot).radius == pytest.approx(0.5, rel=1e-4)


def test_tube_radius_below_half_self_distance(trefoil):
    tube = default_tube(trefoil)
    assert 0 < tube.radius < trefoil.min_self_distance / 2
    assert tube.radius < trefoil.reach


@pytest.mark.parametrize(
    "p, q, expected",
    [(1, 0, "unknot"), (2, 3, "torus(2,3)"), (3, 4, "torus(3,4)"), (1, 5, "unknot"), (3, -2, "torus(3,-2)")],
)
def test_knot_label(p, q, expected):
    assert knot_label(make_torus_knot(p, q, 2.0, 1.0)) == expected


@pytest.mark.parametrize("p, q, R, r", [(2, 4, 2.0, 1.0), (2, 3, 1.0, 1.0), (2, 3, 2.0, 0.0), (1, 0, 0.0, 0.0)])
def test_invalid_torus_knots(p, q, R, r):
    with pytest.raises(InvalidKnot):
        make_torus_knot(p, q, R, r)


def test_fourier_circle():
    circle = make_fourier_knot([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]], label="unknot")
    assert circle.arc_length == pytest.approx(2 * np.pi, rel=1e-13)
    assert np.allclose(circle.positions(np.pi / 2), [0.0, 1.0, 0.0], atol=1e-15)
    assert knot_label(circle) == "unknot"


def test_fourier_derivatives_match_finite_difference():
    harmonics = [[0.5, 0, 0, 0.5, 0, 0], [0] * 6, [2.0, 0, 0, 2.0, 0, 0], [0, 0, 0, 0, 0, 1.0], [0.5, 0, 0, 0.5, 0, 0]]
    figure_eight = make_fourier_knot(harmonics)
    t, h = 0.7, 1e-6
    fd = (figure_eight.positions(t + h) - figure_eight.positions(t - h)) / (2 * h)
    assert np.allclose(fd, figure_eight.velocities(t), rtol=1e-8, atol=1e-8)


def test_fourier_knot_must_be_regular():
    with pytest.raises(InvalidKnot):
        make_fourier_knot([[0.0] * 6])


def test_sampled_circle():
    t = 2 * np.pi * np.arange(256) / 256
    points = np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=1)
    circle = make_sampled_knot(points)
    assert circle.arc_length == pytest.approx(2 * np.pi, rel=1e-6)
    assert np.allclose(circle.positions(t[:8]), points[:8], atol=1e-12)


def test_sampled_knot_drops_repeated_endpoint():
    t = 2 * np.pi * np.arange(65) / 64
    points = np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=1)
    assert len(make_sampled_knot(points).points) == 64
