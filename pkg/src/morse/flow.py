"""
Gradient-flow separatrices of the knot potential.

Forward time follows ẋ = ∇Φ (ascent towards the knot), backward time follows ẋ = -∇Φ (descent towards infinity).
The unstable manifold of an index-2 point is one-dimensional: its two branches are the tunnel arcs, which end in the
tube around the knot. The stable manifold of an index-1 point is one-dimensional as well: traced in backward time its
two branches are the loops, which run off to the point at infinity.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import RK45
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from tqdm import tqdm

from src.electrostatics.field import QuadratureConfig, evaluate
from src.errors import InconsistentCriticalSet, TerminationMismatch, WrongIndex
from src.knots.curve import KnotCurve, default_tube, distance_to_knot
from src.morse.critical import CriticalPoint, SearchConfig

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


class Termination(str, Enum):
    KNOT_TUBE = "KnotTube"
    FAR_FIELD = "FarField"
    NEAR_CRITICAL = "NearCritical"
    MAX_STEPS = "MaxSteps"


class ArcKind(str, Enum):
    TUNNEL_GAMMA = "TunnelGamma"
    THETA_LOOP = "ThetaLoop"
    TRAJECTORY = "Trajectory"


@dataclass(frozen=True)
class FlowConfig:
    launch_offset: Optional[float] = None
    rtol: float = 1e-9
    atol: float = 1e-12
    far_field_radius: Optional[float] = None
    max_steps: int = 20000
    tube_radius: Optional[float] = None
    near_radius: Optional[float] = None
    near_gradient: Optional[float] = None
    monotonicity_slack: float = 1e-9
    n_jobs: int = -1

    def __post_init__(self):
        assert self.launch_offset is None or self.launch_offset > 0, "launch_offset must be positive."
        assert self.rtol > 0 and self.atol > 0, "Integrator tolerances must be positive."
        assert self.max_steps > 0, "max_steps must be positive."

    def resolve(self, curve: KnotCurve, search: SearchConfig = SearchConfig()) -> "FlowConfig":
        search = search.resolve(curve)
        resolved = replace(
            self,
            launch_offset=self.launch_offset or 1e-4 * curve.diameter,
            far_field_radius=self.far_field_radius or 50 * curve.diameter,
            tube_radius=self.tube_radius or default_tube(curve).radius,
            near_radius=self.near_radius or search.r_dup,
            near_gradient=self.near_gradient or 10 * search.tol_res,
        )
        assert resolved.launch_offset < 1e-2 * curve.diameter, "launch_offset must be much smaller than the knot."
        assert resolved.far_field_radius > 10 * curve.diameter, "far_field_radius must exceed 10 knot diameters."
        return resolved

    def infinity_threshold(self, curve: KnotCurve) -> float:
        """Potential level below which a point counts as inside the neighbourhood of infinity (Φ ≈ L/|x| there)."""
        return 1.2 * curve.arc_length / self.far_field_radius


@dataclass(frozen=True)
class FlowArc:
    kind: ArcKind
    branch: int
    points: np.ndarray
    phi: np.ndarray
    termination: Termination
    seed: Optional[CriticalPoint] = None
    seed_id: int = 0
    forward: bool = True
    quadrature_ok: bool = True

    @property
    def name(self) -> str:
        prefix = {ArcKind.TUNNEL_GAMMA: "gamma", ArcKind.THETA_LOOP: "theta"}.get(self.kind, "trajectory")
        return f"{prefix}_{self.seed_id}_{'+' if self.branch >= 0 else '-'}"

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    @property
    def steps(self) -> int:
        return len(self.points) - 1

    def monotonicity_violation(self) -> float:
        """Largest per-step move of Φ against the flow direction, relative to Φ."""
        if len(self.phi) < 2:
            return 0.0
        step = np.diff(self.phi) * (1.0 if self.forward else -1.0)
        return float(np.max(np.maximum(-step, 0.0) / self.phi[:-1]))


@dataclass
class TunnelingBundle:
    gammas: List[FlowArc] = field(default_factory=list)
    thetas: List[FlowArc] = field(default_factory=list)
    anomalies: List[str] = field(default_factory=list)

    @property
    def gamma_count(self) -> int:
        return len({arc.seed_id for arc in self.gammas})

    @property
    def theta_count(self) -> int:
        return len({arc.seed_id for arc in self.thetas})

    @property
    def ok(self) -> bool:
        return not self.anomalies

    @property
    def arcs(self) -> List[FlowArc]:
        return self.gammas + self.thetas


@dataclass(frozen=True)
class CensusStatistics:
    total: int = 0
    counts: Dict[str, int] = field(default_factory=dict)
    far_field_fraction: Optional[float] = None
    left_infinity_neighbourhood: int = 0

    def to_dict(self) -> Dict:
        return {
            "total": self.total,
            "counts": dict(sorted(self.counts.items())),
            "far_field_fraction": self.far_field_fraction,
            "left_infinity_neighbourhood": self.left_infinity_neighbourhood,
        }


def _near_critical(x: np.ndarray, gradient_norm: float, critical_points: Sequence[CriticalPoint], cfg: FlowConfig):
    if gradient_norm >= cfg.near_gradient:
        return False
    return any(np.linalg.norm(x - cp.x) < cfg.near_radius for cp in critical_points)


def _boundary_crossing(solver: RK45, signed_distance: Callable[[np.ndarray], float]) -> np.ndarray:
    """Where the last step crossed a stopping surface, from the dense output of that step."""
    path = solver.dense_output()
    t_old, t = solver.t_old, solver.t
    if signed_distance(path(t_old)) * signed_distance(path(t)) > 0:
        return solver.y.copy()
    t_cross = brentq(lambda s: signed_distance(path(s)), t_old, t, xtol=1e-13)
    return path(t_cross)


def integrate_flow(
    curve: KnotCurve,
    x0: np.ndarray,
    forward: bool = True,
    cfg: FlowConfig = FlowConfig(),
    critical_points: Sequence[CriticalPoint] = (),
    quad: QuadratureConfig = QuadratureConfig(),
) -> FlowArc:
    """
    Follow ẋ = ∇Φ (forward) or ẋ = -∇Φ (backward) from x0 with the Dormand-Prince 5(4) pair.

    The vector field is normalized by |∇Φ|, so time is arc length and the flow does not stall near saddles. The step
    is capped so no stage can reach into the tube. Integration stops at the first of: distance to the knot below the
    tube radius (KnotTube), distance from the region center above the far-field radius (FarField), arrival near a known
    critical point (NearCritical), step budget exhausted (MaxSteps). A KnotTube or FarField endpoint is the point where
    the last step crosses the tube or far-field sphere, root-found on the dense output of that step.
    """
    cfg = cfg.resolve(curve)
    sign = 1.0 if forward else -1.0
    center = curve.search_region.center
    quadrature_ok = True

    def direction(_, y):
        grad = evaluate(curve, y, quad, order=1).grad
        norm = np.linalg.norm(grad)
        return sign * grad / norm if norm > 0 else np.zeros(3)

    x0 = np.asarray(x0, dtype=float)
    start = evaluate(curve, x0, quad, order=1)
    points, phis = [x0], [start.phi]

    def stop_reason(y, sample) -> Optional[Termination]:
        if distance_to_knot(curve, y) < cfg.tube_radius:
            return Termination.KNOT_TUBE
        if np.linalg.norm(y - center) > cfg.far_field_radius:
            return Termination.FAR_FIELD
        if _near_critical(y, float(np.linalg.norm(sample.grad)), critical_points, cfg):
            return Termination.NEAR_CRITICAL
        return None

    # Signed distances to the stopping surfaces, negative past the surface.
    boundaries = {
        Termination.KNOT_TUBE: lambda y: distance_to_knot(curve, y) - cfg.tube_radius,
        Termination.FAR_FIELD: lambda y: cfg.far_field_radius - np.linalg.norm(y - center),
    }

    termination = stop_reason(x0, start)
    if termination is None:
        solver = RK45(direction, 0.0, x0, np.inf, rtol=cfg.rtol, atol=cfg.atol)
        termination = Termination.MAX_STEPS
        for _ in range(cfg.max_steps):
            distance = distance_to_knot(curve, solver.y)
            solver.max_step = min(distance - 0.5 * cfg.tube_radius, cfg.far_field_radius / 20)
            solver.step()
            if solver.status == "failed":
                logger.warning(f"Flow integration from {x0.tolist()} failed at {solver.y.tolist()}")
                break

            y = solver.y.copy()
            sample = evaluate(curve, y, quad, order=1)
            reason = stop_reason(y, sample)
            if reason in boundaries:
                y = _boundary_crossing(solver, boundaries[reason])
                sample = evaluate(curve, y, quad, order=1)

            quadrature_ok &= sample.converged
            points.append(y)
            phis.append(sample.phi)
            if reason is not None:
                termination = reason
                break

    return FlowArc(
        kind=ArcKind.TRAJECTORY,
        branch=0,
        points=np.array(points),
        phi=np.array(phis),
        termination=termination,
        forward=forward,
        quadrature_ok=quadrature_ok,
    )


def _trace_branches(
    curve: KnotCurve,
    cp: CriticalPoint,
    kind: ArcKind,
    cfg: FlowConfig,
    critical_points: Sequence[CriticalPoint],
    quad: QuadratureConfig,
    seed_id: int,
) -> Tuple[FlowArc, FlowArc]:
    forward = kind == ArcKind.TUNNEL_GAMMA
    # Eigenvalues are ascending: index 2 has its single positive eigenvalue last, index 1 its single negative first.
    eigenvector = cp.eigvecs[:, 2] if forward else cp.eigvecs[:, 0]

    arcs = []
    for branch in (1, -1):
        fragment = integrate_flow(curve, cp.x + branch * cfg.launch_offset * eigenvector, forward, cfg, critical_points, quad)
        arcs.append(
            replace(
                fragment,
                kind=kind,
                branch=branch,
                seed=cp,
                seed_id=seed_id,
                points=np.vstack([cp.x, fragment.points]),
                phi=np.concatenate([[cp.phi], fragment.phi]),
            )
        )
    return arcs[0], arcs[1]


def trace_unstable(
    curve: KnotCurve,
    cp: CriticalPoint,
    cfg: FlowConfig = FlowConfig(),
    critical_points: Sequence[CriticalPoint] = (),
    quad: QuadratureConfig = QuadratureConfig(),
    seed_id: int = 0,
    strict: bool = True,
) -> Tuple[FlowArc, FlowArc]:
    """Both branches of the unstable manifold of an index-2 point; each must end in the knot tube."""
    if cp.index != 2:
        raise WrongIndex(f"Unstable separatrices are traced from index-2 points, got index {cp.index}.")
    cfg = cfg.resolve(curve)
    arcs = _trace_branches(curve, cp, ArcKind.TUNNEL_GAMMA, cfg, critical_points, quad, seed_id)

    if strict and any(arc.termination != Termination.KNOT_TUBE for arc in arcs):
        raise TerminationMismatch(
            f"Tunnel arc from {cp.x.tolist()} ended {[arc.termination.value for arc in arcs]}, expected KnotTube.", arcs
        )
    return arcs


def trace_stable(
    curve: KnotCurve,
    cp: CriticalPoint,
    cfg: FlowConfig = FlowConfig(),
    critical_points: Sequence[CriticalPoint] = (),
    quad: QuadratureConfig = QuadratureConfig(),
    seed_id: int = 0,
    strict: bool = True,
) -> Tuple[FlowArc, FlowArc]:
    """Both branches of the stable manifold of an index-1 point, traced in backward time; each must reach infinity."""
    if cp.index != 1:
        raise WrongIndex(f"Stable separatrices are traced from index-1 points, got index {cp.index}.")
    cfg = cfg.resolve(curve)
    arcs = _trace_branches(curve, cp, ArcKind.THETA_LOOP, cfg, critical_points, quad, seed_id)

    if strict and any(arc.termination != Termination.FAR_FIELD for arc in arcs):
        raise TerminationMismatch(
            f"Loop from {cp.x.tolist()} ended {[arc.termination.value for arc in arcs]}, expected FarField.", arcs
        )
    return arcs


def build_tunneling(
    curve: KnotCurve,
    critical_points: Sequence[CriticalPoint],
    cfg: FlowConfig = FlowConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    search: SearchConfig = SearchConfig(),
) -> TunnelingBundle:
    """
    Tunnel arcs for every index-2 point and loops for every index-1 point.

    The m1 loops share their ends at infinity and form a wedge of circles there; the m2 tunnel arcs added to the knot
    give a tunneling. Branches that end in the wrong place are kept and listed as anomalies.
    """
    index_1 = [cp for cp in critical_points if cp.index == 1]
    index_2 = [cp for cp in critical_points if cp.index == 2]
    if not index_1:
        raise InconsistentCriticalSet("No index-1 critical point: the potential always has one, the search failed.")

    cfg = cfg.resolve(curve, search)
    jobs = [(cp, ArcKind.TUNNEL_GAMMA, i) for i, cp in enumerate(index_2)]
    jobs += [(cp, ArcKind.THETA_LOOP, j) for j, cp in enumerate(index_1)]
    logger.info(f"Tracing {2 * len(index_2)} tunnel branches and {2 * len(index_1)} loop branches")

    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_trace_branches)(curve, cp, kind, cfg, critical_points, quad, seed_id)
        for cp, kind, seed_id in tqdm(jobs, desc="Tracing separatrices: ")
    )

    bundle = TunnelingBundle()
    degenerate = [cp for cp in critical_points if cp.index is None]
    for cp in degenerate:
        bundle.anomalies.append(f"degenerate critical point at {cp.x.tolist()} has no separatrices traced")

    for arcs in results:
        for arc in arcs:
            if arc.kind == ArcKind.TUNNEL_GAMMA:
                bundle.gammas.append(arc)
                if arc.termination == Termination.NEAR_CRITICAL:
                    bundle.anomalies.append(f"{arc.name} ends at another critical point (non-transverse connection)")
                elif arc.termination != Termination.KNOT_TUBE:
                    bundle.anomalies.append(f"{arc.name} ended {arc.termination.value}, expected KnotTube")
            else:
                bundle.thetas.append(arc)
                if arc.termination != Termination.FAR_FIELD:
                    bundle.anomalies.append(f"{arc.name} ended {arc.termination.value}, expected FarField")
            if not arc.quadrature_ok:
                bundle.anomalies.append(f"{arc.name}: quadrature did not converge at every step")

    for anomaly in bundle.anomalies:
        logger.warning(anomaly)
    return bundle


def _census_points(
    curve: KnotCurve, n: int, cfg: FlowConfig, gammas: Sequence[FlowArc], rng: np.random.Generator
) -> np.ndarray:
    box = curve.search_region
    gamma_tree = cKDTree(np.vstack([arc.points for arc in gammas])) if gammas else None

    accepted: List[np.ndarray] = []
    while sum(len(a) for a in accepted) < n:
        candidates = box.lower + rng.random((4 * n, 3)) * box.extent
        keep = distance_to_knot(curve, candidates) > cfg.tube_radius
        if gamma_tree is not None:
            keep &= gamma_tree.query(candidates)[0] > cfg.tube_radius
        accepted.append(candidates[keep])
    return np.vstack(accepted)[:n]


def descending_flow_census(
    curve: KnotCurve,
    n: int,
    cfg: FlowConfig = FlowConfig(),
    critical_points: Sequence[CriticalPoint] = (),
    gammas: Sequence[FlowArc] = (),
    quad: QuadratureConfig = QuadratureConfig(),
    seed: int = 0,
) -> CensusStatistics:
    """
    Follow the negative gradient from n random points of the search region (off the knot tube and the tunnel arcs).

    Every such point should eventually reach the neighbourhood of infinity; only the measure-zero stable sets of the
    index-1 points are exceptions. Also counts trajectories that climb back out of {Φ < ε_∞} after entering it.
    """
    if n == 0:
        return CensusStatistics()

    cfg = cfg.resolve(curve)
    starts = _census_points(curve, n, cfg, gammas, np.random.default_rng(seed))
    arcs = Parallel(n_jobs=cfg.n_jobs)(
        delayed(integrate_flow)(curve, x0, False, cfg, critical_points, quad)
        for x0 in tqdm(starts, desc="Descending-flow census: ")
    )

    threshold = cfg.infinity_threshold(curve)
    left = 0
    for arc in arcs:
        inside = arc.phi < threshold
        if np.any(inside) and not np.all(inside[np.argmax(inside) :]):
            left += 1

    counts = Counter(arc.termination.value for arc in arcs)
    statistics = CensusStatistics(
        total=n,
        counts=dict(counts),
        far_field_fraction=counts[Termination.FAR_FIELD.value] / n,
        left_infinity_neighbourhood=left,
    )
    logger.info(f"Census of {n} descending flows: {statistics.to_dict()}")
    return statistics
