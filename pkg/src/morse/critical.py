import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from src.electrostatics.field import QuadratureConfig, evaluate
from src.errors import DegenerateCritical, IndexOutOfRange, NotConverged
from src.knots.curve import Box, KnotCurve, TubeSpec, check_tube, default_tube, distance_to_knot
from src.morse.linalg import symmetric_eigh

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


@dataclass(frozen=True)
class SearchConfig:
    n_grid: int = 24
    max_iterations: int = 50
    # Backtracking halves the Newton step at most this many times.
    max_halvings: int = 30
    # None means: derive from the curve scale in `resolve`.
    tol_res: Optional[float] = None
    tol_deg: float = 1e-6
    r_dup: Optional[float] = None
    refinement_passes: int = 0
    # Newton iterates may leave the search region by this fraction of the diameter; converged points may not.
    trust_margin: float = 0.1
    n_jobs: int = -1
    batch_size: int = 128

    def __post_init__(self):
        assert self.n_grid >= 8, f"n_grid must be at least 8, got {self.n_grid}."
        assert self.max_iterations > 0 and self.max_halvings > 0, "Iteration limits must be positive."
        assert self.tol_res is None or self.tol_res > 0, "tol_res must be positive."
        assert self.tol_deg > 0, "tol_deg must be positive."
        assert self.r_dup is None or self.r_dup > 0, "r_dup must be positive."
        assert self.trust_margin >= 0, "trust_margin must be non-negative."

    def resolve(self, curve: KnotCurve) -> "SearchConfig":
        return replace(
            self,
            tol_res=self.tol_res if self.tol_res is not None else 1e-8 * curve.arc_length / curve.diameter**2,
            r_dup=self.r_dup if self.r_dup is not None else 1e-5 * curve.diameter,
        )


@dataclass(frozen=True)
class CriticalPoint:
    x: np.ndarray
    phi: float
    residual: float
    eigvals: np.ndarray
    eigvecs: np.ndarray
    nondeg_margin: float
    index: Optional[int] = None
    iterations: int = 0
    quadrature_converged: bool = True

    @property
    def degenerate(self) -> bool:
        return self.index is None

    def to_dict(self) -> Dict:
        return {
            "x": self.x.tolist(),
            "phi": self.phi,
            "residual": self.residual,
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.T.tolist(),
            "index": self.index,
            "nondeg_margin": self.nondeg_margin,
        }

    def store(self) -> Dict:
        """to_dict plus the refinement bookkeeping a cached scan has to keep."""
        return {**self.to_dict(), "iterations": self.iterations, "quadrature_converged": self.quadrature_converged}

    @staticmethod
    def from_dict(data: Dict) -> "CriticalPoint":
        assert {"x", "phi", "residual", "eigvals", "eigvecs", "index", "nondeg_margin"} <= data.keys()
        return CriticalPoint(
            x=np.asarray(data["x"], dtype=float),
            phi=float(data["phi"]),
            residual=float(data["residual"]),
            eigvals=np.asarray(data["eigvals"], dtype=float),
            eigvecs=np.asarray(data["eigvecs"], dtype=float).T,
            nondeg_margin=float(data["nondeg_margin"]),
            index=data["index"],
            iterations=int(data.get("iterations", 0)),
            quadrature_converged=bool(data.get("quadrature_converged", True)),
        )


def nondegeneracy_margin(eigvals: np.ndarray) -> float:
    norm = float(np.linalg.norm(eigvals))
    return 0.0 if norm == 0 else float(np.min(np.abs(eigvals)) / norm)


def _tube(curve: KnotCurve, tube: Optional[TubeSpec]) -> TubeSpec:
    return default_tube(curve) if tube is None else check_tube(curve, tube)


def seed_grid(curve: KnotCurve, cfg: SearchConfig = SearchConfig(), tube: Optional[TubeSpec] = None) -> np.ndarray:
    """Cell centers of a uniform n_grid^3 grid over the search region, without the cells inside the tube."""
    tube = _tube(curve, tube)
    box = curve.search_region
    n = cfg.n_grid
    axes = [box.lower[k] + (np.arange(n) + 0.5) * box.extent[k] / n for k in range(3)]
    seeds = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return seeds[distance_to_knot(curve, seeds) > tube.radius]


def _admissible(curve: KnotCurve, box: Box, tube: TubeSpec, x: np.ndarray) -> bool:
    return bool(box.contains(x)) and distance_to_knot(curve, x) > tube.radius


def newton_refine(
    curve: KnotCurve,
    x0: np.ndarray,
    cfg: SearchConfig = SearchConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    tube: Optional[TubeSpec] = None,
) -> CriticalPoint:
    """
    Damped Newton iteration on ∇Φ = 0 with the analytic Hessian.

    Each step is halved until |∇Φ|^2 decreases and the trial point stays outside the tube and within the search region
    widened by cfg.trust_margin diameters. Raises NotConverged when the iteration budget runs out, the line search
    stalls, the Hessian is singular or the root lies outside the search region itself.
    """
    cfg = cfg.resolve(curve)
    tube = _tube(curve, tube)
    region = curve.search_region
    box = region.expanded(cfg.trust_margin * curve.diameter)
    x = np.asarray(x0, dtype=float)
    if not _admissible(curve, box, tube, x):
        raise NotConverged("seed outside the search region or inside the tube")

    sample = evaluate(curve, x, quad, order=2)
    for iteration in range(cfg.max_iterations + 1):
        residual = float(np.linalg.norm(sample.grad))
        if residual < cfg.tol_res:
            if not region.contains(x):
                raise NotConverged("converged outside the search region", iteration)
            eigvals, eigvecs = symmetric_eigh(sample.hess)
            return CriticalPoint(
                x=x,
                phi=sample.phi,
                residual=residual,
                eigvals=eigvals,
                eigvecs=eigvecs,
                nondeg_margin=nondegeneracy_margin(eigvals),
                iterations=iteration,
                quadrature_converged=sample.converged,
            )
        if iteration == cfg.max_iterations:
            break

        if np.linalg.cond(sample.hess) > 1e14:
            raise NotConverged("singular Hessian step", iteration)
        step = np.linalg.solve(sample.hess, -sample.grad)

        merit = residual**2
        scale = 1.0
        for _ in range(cfg.max_halvings):
            trial = x + scale * step
            if _admissible(curve, box, tube, trial):
                trial_sample = evaluate(curve, trial, quad, order=2)
                if float(trial_sample.grad @ trial_sample.grad) < merit:
                    x, sample = trial, trial_sample
                    break
            scale *= 0.5
        else:
            raise NotConverged("line search stalled (step left the region, entered the tube or did not decrease)", iteration)

    raise NotConverged("maximum iterations reached", cfg.max_iterations)


def classify(cp: CriticalPoint, tol_deg: float = SearchConfig.tol_deg) -> int:
    """Morse index: the number of negative Hessian eigenvalues. Finite points of a harmonic potential have index 1 or 2."""
    margin = nondegeneracy_margin(np.asarray(cp.eigvals))
    if margin <= tol_deg:
        raise DegenerateCritical(
            f"Critical point at {np.asarray(cp.x).tolist()} is degenerate (margin {margin:.2e} <= {tol_deg:.0e}); "
            + "a small density perturbation makes the potential Morse."
        )
    index = int(np.sum(np.asarray(cp.eigvals) < 0))
    if index not in (1, 2):
        raise IndexOutOfRange(f"Finite critical point at {np.asarray(cp.x).tolist()} has index {index}.")
    return index


def verify_critical_point(
    curve: KnotCurve, cp: CriticalPoint, quad: QuadratureConfig = QuadratureConfig()
) -> float:
    """|∇Φ| re-evaluated with the quadrature started at twice the finest level used during refinement."""
    sample = evaluate(curve, cp.x, quad, order=1)
    return float(np.linalg.norm(evaluate(curve, cp.x, quad.doubled(sample.nodes_used), order=1).grad))


def _sort_key(cp: CriticalPoint) -> Tuple:
    return (cp.phi, *np.asarray(cp.x).tolist())


def deduplicate(points: Sequence[CriticalPoint], r_dup: float) -> List[CriticalPoint]:
    """Merge points closer than r_dup, keeping the lowest residual. Repeats until nothing merges."""
    result = sorted(points, key=_sort_key)
    while True:
        kept: List[CriticalPoint] = []
        for cp in result:
            for k, other in enumerate(kept):
                if np.linalg.norm(cp.x - other.x) < r_dup:
                    if cp.residual < other.residual:
                        kept[k] = cp
                    break
            else:
                kept.append(cp)
        kept.sort(key=_sort_key)
        if len(kept) == len(result):
            return kept
        result = kept


def index_counts(points: Sequence[CriticalPoint]) -> Counter:
    return Counter(cp.index for cp in points if cp.index is not None)


def rearrangement_ordering_holds(points: Sequence[CriticalPoint]) -> bool:
    """Whether sorting by Φ gives non-decreasing indices, the ordering a rearranged Morse function would have."""
    indices = [cp.index for cp in sorted(points, key=_sort_key) if cp.index is not None]
    return all(a <= b for a, b in zip(indices, indices[1:]))


def _refine_batch(
    curve: KnotCurve, seeds: np.ndarray, cfg: SearchConfig, quad: QuadratureConfig, tube: TubeSpec
) -> Tuple[List[CriticalPoint], Counter]:
    found, failures = [], Counter()
    for seed in seeds:
        try:
            found.append(newton_refine(curve, seed, cfg, quad, tube))
        except NotConverged as e:
            failures[e.reason] += 1
    return found, failures


def _search(
    curve: KnotCurve, cfg: SearchConfig, quad: QuadratureConfig, tube: TubeSpec
) -> Tuple[List[CriticalPoint], Counter]:
    seeds = seed_grid(curve, cfg, tube)
    batches = [seeds[i : i + cfg.batch_size] for i in range(0, len(seeds), cfg.batch_size)]
    logger.info(f"Refining {len(seeds)} seeds ({cfg.n_grid}^3 grid) in {len(batches)} batches")

    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_refine_batch)(curve, batch, cfg, quad, tube)
        for batch in tqdm(batches, desc="Newton refinement: ")
    )

    found, failures = [], Counter()
    for batch_found, batch_failures in results:
        found.extend(batch_found)
        failures.update(batch_failures)
    return found, failures


def find_critical_points(
    curve: KnotCurve,
    cfg: SearchConfig = SearchConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    tube: Optional[TubeSpec] = None,
) -> List[CriticalPoint]:
    """
    All finite critical points found by damped Newton from every grid seed, deduplicated and classified.

    Completeness is heuristic. The identity m1 - m2 = 1 is the completeness witness: when it fails and refinement
    passes are configured, the grid is doubled and the search repeated. Degenerate points are kept with index None.
    """
    cfg = cfg.resolve(curve)
    tube = _tube(curve, tube)

    found: List[CriticalPoint] = []
    for attempt in range(cfg.refinement_passes + 1):
        pass_cfg = replace(cfg, n_grid=cfg.n_grid * 2**attempt)
        pass_found, failures = _search(curve, pass_cfg, quad, tube)
        found = deduplicate(found + pass_found, cfg.r_dup)
        if failures:
            logger.info(f"Newton failures by reason: {dict(sorted(failures.items()))}")

        classified = []
        for cp in found:
            try:
                classified.append(replace(cp, index=classify(cp, cfg.tol_deg)))
            except DegenerateCritical as e:
                logger.warning(str(e))
                classified.append(replace(cp, index=None))

        counts = index_counts(classified)
        logger.info(f"Found {len(classified)} finite critical points: m1={counts[1]}, m2={counts[2]}")
        if counts[1] - counts[2] == 1:
            break
        logger.warning(f"m1 - m2 = {counts[1] - counts[2]} != 1: the search is incomplete.")

    if not rearrangement_ordering_holds(classified):
        logger.info("Critical values are not ordered by index (diagnostic only).")

    for cp in classified:
        if not cp.quadrature_converged:
            logger.warning(f"Critical point at {cp.x.tolist()} was refined with unconverged quadrature.")

    return sorted(classified, key=_sort_key)
