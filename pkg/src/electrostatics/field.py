"""
Potential, gradient and Hessian of a uniformly charged knot.

    Φ(x)    = ∫ |r'(t)| / |x - r(t)| dt
    ∇Φ(x)   = -∫ |r'(t)| (x - r(t)) / |x - r(t)|^3 dt
    H_ij(x) = ∫ |r'(t)| [3 (x - r)_i (x - r)_j / |x - r|^5 - δ_ij / |x - r|^3] dt

All three come from one set of periodic trapezoid nodes, doubled until successive levels agree. The charge density is
1 per unit length; no physical constants are carried. The field is E = -∇Φ and Φ(∞) = 0.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from src.electrostatics.quadrature import TWO_PI
from src.errors import TooCloseToKnot
from src.knots.curve import KnotCurve, distance_to_knot

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Evaluation is refused closer than this fraction of the self-distance.
EVAL_FLOOR = 1e-3


@dataclass(frozen=True)
class QuadratureConfig:
    initial_nodes: int = 64
    max_nodes: int = 2**20
    tol: float = 1e-10
    # Optional density perturbation 1 + δ ((r - c)·w) / diameter, off by default.
    density_delta: float = 0.0
    density_direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        assert self.initial_nodes >= 16, f"initial_nodes must be at least 16, got {self.initial_nodes}."
        assert self.max_nodes >= self.initial_nodes, "max_nodes must not be smaller than initial_nodes."
        assert self.tol > 0, f"Quadrature tolerance must be positive, got {self.tol}."
        assert abs(self.density_delta) < 0.5, "density_delta must stay below 0.5 to keep the density positive."

    def doubled(self, nodes_used: int = 0) -> "QuadratureConfig":
        """The same rule started one level above the finer of initial_nodes and nodes_used."""
        start = 2 * max(self.initial_nodes, nodes_used)
        return replace(self, initial_nodes=start, max_nodes=max(self.max_nodes, 2 * start))


@dataclass(frozen=True)
class FieldSample:
    x: np.ndarray
    phi: float
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None
    nodes_used: int = 0
    est_error: float = 0.0
    converged: bool = True
    # Integrals of the absolute integrands; natural magnitudes for relative errors of grad and hess.
    grad_scale: float = field(default=0.0, repr=False)
    hess_scale: float = field(default=0.0, repr=False)

    @property
    def electric_field(self) -> Optional[np.ndarray]:
        return None if self.grad is None else -self.grad

    def harmonicity_defect(self) -> float:
        """|trace(H)| / ||H||_F, zero for a harmonic potential."""
        return float(abs(np.trace(self.hess)) / np.linalg.norm(self.hess))

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "phi": self.phi,
            "grad": None if self.grad is None else self.grad.tolist(),
            "hess": None if self.hess is None else self.hess.tolist(),
            "nodes_used": self.nodes_used,
            "est_error": self.est_error,
        }


def _weights(curve: KnotCurve, positions: np.ndarray, speeds: np.ndarray, cfg: QuadratureConfig) -> np.ndarray:
    if cfg.density_delta == 0.0:
        return speeds
    direction = np.asarray(cfg.density_direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    centroid = curve.search_region.center
    return speeds * (1.0 + cfg.density_delta * ((positions - centroid) @ direction) / curve.diameter)


def _level_sums(x: np.ndarray, positions: np.ndarray, weights: np.ndarray, order: int) -> np.ndarray:
    """Raw node sums packed as [phi, grad(3), hess(9), grad_scale, hess_scale]."""
    d = x - positions
    r2 = np.einsum("ij,ij->i", d, d)
    inv_r = 1.0 / np.sqrt(r2)
    w_r1 = weights * inv_r

    sums = np.zeros(15)
    sums[0] = np.sum(w_r1)
    if order >= 1:
        w_r3 = w_r1 * inv_r * inv_r
        sums[1:4] = -(w_r3 @ d)
        sums[13] = np.sum(w_r1 * inv_r)
        if order >= 2:
            w_r5 = w_r3 * inv_r * inv_r
            hess = 3.0 * (d.T * w_r5) @ d
            hess[np.diag_indices(3)] -= np.sum(w_r3)
            sums[4:13] = hess.ravel()
            sums[14] = np.sum(w_r3)
    return sums


def _error_estimate(new: np.ndarray, old: np.ndarray, order: int) -> float:
    errors = [abs(new[0] - old[0]) / new[0]]
    if order >= 1:
        errors.append(np.linalg.norm(new[1:4] - old[1:4]) / new[13])
    if order >= 2:
        errors.append(np.linalg.norm(new[4:13] - old[4:13]) / new[14])
    return float(max(errors))


def _check_distance(curve: KnotCurve, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"Evaluation point must be finite, got {x}.")
    floor = EVAL_FLOOR * curve.min_self_distance
    distance = distance_to_knot(curve, x)
    if distance <= floor:
        raise TooCloseToKnot(distance, floor)


def evaluate(curve: KnotCurve, x, cfg: QuadratureConfig = QuadratureConfig(), order: int = 2) -> FieldSample:
    """
    Fused evaluation of Φ and, up to `order`, ∇Φ and the Hessian from one node set.

    Node counts double from cfg.initial_nodes until every requested quantity changes by less than cfg.tol relative to
    its natural magnitude, or cfg.max_nodes is reached; in the latter case the best estimate is returned with
    converged=False.
    """
    x = np.asarray(x, dtype=float)
    _check_distance(curve, x)

    n = cfg.initial_nodes
    positions, speeds = curve.quadrature_samples(n)
    raw = _level_sums(x, positions, _weights(curve, positions, speeds, cfg), order)
    value = TWO_PI * raw / n
    est_error = np.inf
    converged = False

    while 2 * n <= cfg.max_nodes:
        positions, speeds = curve.quadrature_samples(n, shifted=True)
        raw = raw + _level_sums(x, positions, _weights(curve, positions, speeds, cfg), order)
        n *= 2
        new_value = TWO_PI * raw / n
        est_error = _error_estimate(new_value, value, order)
        value = new_value
        if est_error <= cfg.tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Quadrature did not converge at x={x} with {n} nodes: estimated error {est_error:.3e}")

    hess = None
    if order >= 2:
        hess = value[4:13].reshape(3, 3)
        hess = 0.5 * (hess + hess.T)

    return FieldSample(
        x=x,
        phi=float(value[0]),
        grad=value[1:4].copy() if order >= 1 else None,
        hess=hess,
        nodes_used=n,
        est_error=est_error,
        converged=converged,
        grad_scale=float(value[13]),
        hess_scale=float(value[14]),
    )


def potential(curve: KnotCurve, x, cfg: QuadratureConfig = QuadratureConfig()) -> FieldSample:
    return evaluate(curve, x, cfg, order=0)


def gradient(curve: KnotCurve, x, cfg: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    return evaluate(curve, x, cfg, order=1).grad


def hessian(curve: KnotCurve, x, cfg: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    return evaluate(curve, x, cfg, order=2).hess


def field_sample(curve: KnotCurve, x, cfg: QuadratureConfig = QuadratureConfig()) -> FieldSample:
    return evaluate(curve, x, cfg, order=2)
