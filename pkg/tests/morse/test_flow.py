from dataclasses import replace

import numpy as np
import pytest

from src.electrostatics.field import QuadratureConfig
from src.errors import InconsistentCriticalSet, WrongIndex
from src.knots.curve import default_tube, distance_to_knot
from src.morse.flow import (
    ArcKind,
    FlowConfig,
    Termination,
    build_tunneling,
    descending_flow_census,
    integrate_flow,
    trace_stable,
    trace_unstable,
)


def test_ascent_from_inside_the_circle_reaches_the_wire(unknot):
    arc = integrate_flow(unknot, np.array([0.5, 0.0, 0.0]), forward=True)
    assert arc.termination == Termination.KNOT_TUBE
    assert distance_to_knot(unknot, arc.endpoint) == pytest.approx(default_tube(unknot).radius, abs=1e-8)
    assert arc.monotonicity_violation() <= 1e-9


def test_descent_runs_to_the_far_field(unknot):
    arc = integrate_flow(unknot, np.array([0.0, 0.0, 0.3]), forward=False)
    cfg = FlowConfig().resolve(unknot)
    assert arc.termination == Termination.FAR_FIELD
    assert np.linalg.norm(arc.endpoint - unknot.search_region.center) == pytest.approx(cfg.far_field_radius, rel=1e-9)
    assert np.all(np.diff(arc.phi) < 0)


def test_step_budget(unknot):
    arc = integrate_flow(unknot, np.array([0.0, 0.0, 0.3]), forward=False, cfg=FlowConfig(max_steps=2))
    assert arc.termination == Termination.MAX_STEPS
    assert arc.steps == 2


def test_unknot_loops_follow_the_axis(unknot, unknot_critical_points):
    cp = unknot_critical_points[0]
    assert abs(cp.eigvecs[2, 0]) == pytest.approx(1.0, abs=1e-6)

    plus, minus = trace_stable(unknot, cp, critical_points=unknot_critical_points)
    threshold = FlowConfig().resolve(unknot).infinity_threshold(unknot)
    for arc in (plus, minus):
        assert arc.kind == ArcKind.THETA_LOOP
        assert arc.termination == Termination.FAR_FIELD
        assert np.array_equal(arc.points[0], cp.x)
        assert arc.monotonicity_violation() <= 1e-9
        assert np.linalg.norm(arc.endpoint[:2]) < 1e-3 * abs(arc.endpoint[2])
        assert arc.phi[-1] < threshold
    assert np.sign(plus.endpoint[2]) == -np.sign(minus.endpoint[2])
    assert {plus.name, minus.name} == {"theta_0_+", "theta_0_-"}


def test_separatrix_index_preconditions(unknot, unknot_critical_points):
    cp = unknot_critical_points[0]
    with pytest.raises(WrongIndex):
        trace_unstable(unknot, cp)
    fake_saddle = replace(cp, index=2)
    with pytest.raises(WrongIndex):
        trace_stable(unknot, fake_saddle)


def test_unknot_tunneling(unknot, unknot_critical_points):
    bundle = build_tunneling(unknot, unknot_critical_points)
    assert bundle.ok
    assert bundle.gamma_count == 0 and bundle.theta_count == 1
    assert len(bundle.thetas) == 2
    assert all(arc.termination == Termination.FAR_FIELD for arc in bundle.thetas)


def test_tunneling_needs_an_index_one_point(unknot):
    with pytest.raises(InconsistentCriticalSet):
        build_tunneling(unknot, [])


def test_small_census_is_deterministic(unknot, unknot_critical_points):
    first = descending_flow_census(unknot, 8, critical_points=unknot_critical_points, seed=5)
    second = descending_flow_census(unknot, 8, critical_points=unknot_critical_points, seed=5)
    assert first == second
    assert first.total == 8
    assert first.left_infinity_neighbourhood == 0


def test_empty_census(unknot):
    assert descending_flow_census(unknot, 0).total == 0


@pytest.mark.slow
def test_unknot_census(unknot, unknot_critical_points):
    census = descending_flow_census(unknot, 200, critical_points=unknot_critical_points, seed=0)
    assert census.far_field_fraction == 1.0


@pytest.mark.slow
def test_trefoil_tunneling(trefoil, trefoil_critical_points):
    bundle = build_tunneling(trefoil, trefoil_critical_points)
    m1 = sum(cp.index == 1 for cp in trefoil_critical_points)
    m2 = sum(cp.index == 2 for cp in trefoil_critical_points)
    assert bundle.gamma_count == m2 and bundle.theta_count == m1
    tube = default_tube(trefoil)
    for arc in bundle.gammas:
        assert arc.termination == Termination.KNOT_TUBE
        assert distance_to_knot(trefoil, arc.endpoint) == pytest.approx(tube.radius, abs=1e-8)
    threshold = FlowConfig().resolve(trefoil).infinity_threshold(trefoil)
    for arc in bundle.thetas:
        assert arc.termination == Termination.FAR_FIELD
        assert arc.phi[-1] < threshold
    assert max(arc.monotonicity_violation() for arc in bundle.arcs) <= 1e-9


@pytest.mark.slow
def test_trefoil_census(trefoil, trefoil_critical_points):
    gammas = build_tunneling(trefoil, trefoil_critical_points).gammas
    census = descending_flow_census(trefoil, 200, critical_points=trefoil_critical_points, gammas=gammas, seed=0)
    assert census.far_field_fraction >= 0.99
    assert census.left_infinity_neighbourhood == 0


def test_unconverged_quadrature_is_an_anomaly(unknot, unknot_critical_points):
    coarse = QuadratureConfig(initial_nodes=16, max_nodes=16)
    arc = integrate_flow(unknot, np.array([0.0, 0.0, 0.3]), forward=False, quad=coarse)
    assert not arc.quadrature_ok

    bundle = build_tunneling(unknot, unknot_critical_points, quad=coarse)
    assert not bundle.ok
    assert any("quadrature did not converge" in anomaly for anomaly in bundle.anomalies)


@pytest.mark.slow
def test_tunnel_arc_endpoints_do_not_depend_on_the_launch_offset(trefoil, trefoil_critical_points):
    offset = FlowConfig().resolve(trefoil).launch_offset
    saddles = [cp for cp in trefoil_critical_points if cp.index == 2]
    assert saddles
    for cp in saddles:
        arcs = trace_unstable(trefoil, cp, FlowConfig(launch_offset=offset), trefoil_critical_points)
        halved = trace_unstable(trefoil, cp, FlowConfig(launch_offset=offset / 2), trefoil_critical_points)
        for a, b in zip(arcs, halved):
            assert a.branch == b.branch
            assert np.linalg.norm(a.endpoint - b.endpoint) < 10 * offset
