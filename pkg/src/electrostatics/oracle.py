"""
Reference implementations the main pipeline is checked against.

Nothing here calls the field or critical modules: the potential is a fixed dense trapezoid sum, derivatives are
central differences of it, and the basin scan is a plain grid search. Slow and simple on purpose.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from src.knots.curve import KnotCurve, default_tube, distance_to_knot

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


@dataclass(frozen=True)
class OracleConfig:
    reference_nodes: int = 100_000
    # Coarser node count for the |∇Φ| grid scan; the scan only has to rank neighbouring cells.
    scan_nodes: int = 1024
    # Finite-difference steps relative to the knot diameter.
    gradient_step: float = 1e-5
    hessian_step: float = 1e-4
    # Scan grid padding relative to the knot diameter.
    scan_padding: float = 0.1
    chunk_size: int = 2048

    def __post_init__(self):
        assert self.reference_nodes >= 100_000, f"Reference quadrature needs at least 1e5 nodes, got {self.reference_nodes}."
        assert self.scan_nodes >= 64, f"scan_nodes must be at least 64, got {self.scan_nodes}."
        assert self.gradient_step > 0 and self.hessian_step > 0, "Finite-difference steps must be positive."


@dataclass(frozen=True)
class Basin:
    cells: np.ndarray
    value: float

    @property
    def center(self) -> np.ndarray:
        return self.cells.mean(axis=0)

    def near(self, x: np.ndarray, radius: float) -> bool:
        return bool(np.min(np.linalg.norm(self.cells - np.asarray(x, dtype=float), axis=1)) <= radius)


def circle_axis_potential(z: float) -> float:
    """Φ on the axis of the unit circle: every point of the circle is at distance sqrt(1 + z^2)."""
    return 2 * np.pi / np.sqrt(1.0 + z * z)


def _nodes(curve: KnotCurve, n: int):
    t = 2 * np.pi * np.arange(n) / n
    return curve.positions(t), np.linalg.norm(curve.velocities(t), axis=1)


def reference_arc_length(curve: KnotCurve, nodes: int = 10**6) -> float:
    _, speeds = _nodes(curve, nodes)
    return float(2 * np.pi * speeds.mean())


def reference_potential(curve: KnotCurve, x: np.ndarray, cfg: OracleConfig = OracleConfig()) -> float:
    positions, speeds = _nodes(curve, cfg.reference_nodes)
    distances = np.linalg.norm(np.asarray(x, dtype=float) - positions, axis=1)
    return float(2 * np.pi * np.mean(speeds / distances))


def fd_gradient(curve: KnotCurve, x: np.ndarray, h: float = None, cfg: OracleConfig = OracleConfig()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = h or cfg.gradient_step * curve.diameter
    grad = np.zeros(3)
    for i, e in enumerate(np.eye(3)):
        grad[i] = (reference_potential(curve, x + h * e, cfg) - reference_potential(curve, x - h * e, cfg)) / (2 * h)
    return grad


def fd_hessian(curve: KnotCurve, x: np.ndarray, h: float = None, cfg: OracleConfig = OracleConfig()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = h or cfg.hessian_step * curve.diameter
    f = lambda y: reference_potential(curve, y, cfg)  # noqa: E731
    center = f(x)
    basis = np.eye(3)

    hess = np.zeros((3, 3))
    for i in range(3):
        hess[i, i] = (f(x + h * basis[i]) - 2 * center + f(x - h * basis[i])) / h**2
        for j in range(i + 1, 3):
            ei, ej = h * basis[i], h * basis[j]
            hess[i, j] = hess[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h**2)
    return hess


def _gradient_norms(curve: KnotCurve, points: np.ndarray, cfg: OracleConfig) -> np.ndarray:
    positions, speeds = _nodes(curve, cfg.scan_nodes)
    norms = np.empty(len(points))
    for start in range(0, len(points), cfg.chunk_size):
        chunk = points[start : start + cfg.chunk_size]
        d = chunk[:, None, :] - positions[None, :, :]
        r = np.linalg.norm(d, axis=2)
        grad = -np.einsum("pn,pnk->pk", speeds / r**3, d)
        norms[start : start + len(chunk)] = np.linalg.norm(grad, axis=1)
    return norms


def brute_scan(curve: KnotCurve, n: int, cfg: OracleConfig = OracleConfig()) -> List[Basin]:
    """
    Local minima of |∇Φ| on an n^3 grid over the padded bounding box of the knot, tube cells excluded.

    A cell is a minimum when no of its 26 neighbours is lower; adjacent minimum cells of a symmetric plateau form one
    basin. The outermost grid layer never counts since |∇Φ| keeps decreasing outwards there.
    """
    samples = curve.dense_samples
    padding = cfg.scan_padding * curve.diameter
    lower, upper = samples.min(axis=0) - padding, samples.max(axis=0) + padding
    axes = [np.linspace(lower[k], upper[k], n) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    values = np.full(len(grid), np.inf)
    outside = distance_to_knot(curve, grid) > default_tube(curve).radius
    values[outside] = _gradient_norms(curve, grid[outside], cfg)
    values = values.reshape(n, n, n)

    minima = np.isfinite(values) & (values == ndimage.minimum_filter(values, size=3, mode="nearest"))
    minima[[0, -1], :, :] = minima[:, [0, -1], :] = minima[:, :, [0, -1]] = False

    labels, count = ndimage.label(minima, structure=np.ones((3, 3, 3)))
    points = grid.reshape(n, n, n, 3)
    basins = []
    for k in range(1, count + 1):
        mask = labels == k
        basins.append(Basin(cells=points[mask], value=float(values[mask].min())))

    basins.sort(key=lambda b: (b.value, *b.center.tolist()))
    logger.info(f"Brute-force scan on a {n}^3 grid found {len(basins)} basins")
    return basins
