"""
Composite trapezoid rule on uniform periodic nodes over [0, 2π) with node doubling.

For an analytic 2π-periodic integrand the rule converges geometrically, and the
difference between two successive levels is a cheap (pessimistic) error estimate.
Doubling reuses the previous level: the new nodes are the midpoints 2π(k + 1/2)/n.
"""

import logging
from typing import Callable, Tuple

import numpy as np

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

TWO_PI = 2.0 * np.pi


def periodic_nodes(n: int, shifted: bool = False) -> np.ndarray:
    offset = 0.5 if shifted else 0.0
    return TWO_PI * (np.arange(n) + offset) / n


def periodic_trapezoid(
    func: Callable[[np.ndarray], np.ndarray],
    initial_nodes: int = 64,
    max_nodes: int = 2**20,
    tol: float = 1e-13,
) -> Tuple[np.ndarray, int, float, bool]:
    """
    Integrate func over one period.

    Args:
        func: Vectorized integrand. Takes an array of angles of shape (n,) and returns values of shape (n,) or (n, m).
        initial_nodes: Number of nodes of the first level.
        max_nodes: The doubling stops once this many nodes were used.
        tol: Relative tolerance on the difference between two successive levels.

    Returns:
        Tuple of (integral, nodes used, relative error estimate, converged flag).
    """
    n = initial_nodes
    raw_sum = np.sum(func(periodic_nodes(n)), axis=0)
    value = TWO_PI * raw_sum / n
    est_error = np.inf

    while 2 * n <= max_nodes:
        raw_sum = raw_sum + np.sum(func(periodic_nodes(n, shifted=True)), axis=0)
        n *= 2
        new_value = TWO_PI * raw_sum / n
        scale = max(float(np.max(np.abs(new_value))), np.finfo(float).tiny)
        est_error = float(np.max(np.abs(new_value - value))) / scale
        value = new_value
        if est_error <= tol:
            return value, n, est_error, True

    logger.warning(f"Periodic trapezoid stopped at {n} nodes with estimated error {est_error:.3e} > {tol:.1e}")
    return value, n, est_error, False
