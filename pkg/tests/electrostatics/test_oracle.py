import numpy as np
import pytest

from src.electrostatics.oracle import (
    OracleConfig,
    brute_scan,
    circle_axis_potential,
    fd_gradient,
    fd_hessian,
    reference_potential,
)


@pytest.mark.parametrize("z, expected", [(0.0, 2 * np.pi), (1.0, 2 * np.pi / np.sqrt(2)), (-1.0, 2 * np.pi / np.sqrt(2))])
def test_circle_axis_potential(z, expected):
    assert circle_axis_potential(z) == pytest.approx(expected, rel=1e-15)


def test_circle_axis_potential_vanishes_at_infinity():
    assert circle_axis_potential(1e12) < 1e-11


def test_reference_potential_at_circle_center(unknot):
    assert reference_potential(unknot, [0.0, 0.0, 0.0]) == pytest.approx(2 * np.pi, rel=1e-14)


def test_fd_gradient_at_circle_center(unknot):
    assert np.allclose(fd_gradient(unknot, [0.0, 0.0, 0.0]), 0.0, atol=1e-7)


def test_fd_hessian_is_trace_free(trefoil):
    hess = fd_hessian(trefoil, [0.4, 0.3, -0.2])
    assert abs(np.trace(hess)) < 1e-4 * np.linalg.norm(hess)


def test_reference_nodes_lower_bound():
    with pytest.raises(AssertionError):
        OracleConfig(reference_nodes=10**4)


def test_unknot_scan_has_one_basin_at_the_origin(unknot):
    basins = brute_scan(unknot, 64)
    assert len(basins) == 1
    spacing = (unknot.diameter * 1.2) / 63
    assert basins[0].near(np.zeros(3), 2 * spacing)


def test_tiny_grid_returns_no_basins(unknot):
    assert brute_scan(unknot, 2) == []


def test_scan_is_deterministic(unknot):
    first, second = brute_scan(unknot, 16), brute_scan(unknot, 16)
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert np.array_equal(a.cells, b.cells)


@pytest.mark.slow
def test_trefoil_critical_points_lie_in_scan_basins(trefoil, trefoil_critical_points):
    n = 64
    basins = brute_scan(trefoil, n)
    spacing = float(np.max(np.ptp(trefoil.dense_samples, axis=0) + 0.2 * trefoil.diameter)) / (n - 1)
    for cp in trefoil_critical_points:
        assert any(basin.near(cp.x, 3 * spacing) for basin in basins)
