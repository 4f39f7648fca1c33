from math import acos, cos, pi, sqrt
from typing import Tuple

import numpy as np


def _null_vector(a: np.ndarray, eigenvalue: float) -> Tuple[np.ndarray, float]:
    """Unit vector spanning the kernel of a - eigenvalue*I, from the largest cross product of its rows."""
    m = a - eigenvalue * np.eye(3)
    candidates = np.array([np.cross(m[0], m[1]), np.cross(m[0], m[2]), np.cross(m[1], m[2])])
    norms = np.linalg.norm(candidates, axis=1)
    best = int(np.argmax(norms))
    if norms[best] == 0.0:
        return np.zeros(3), 0.0
    return candidates[best] / norms[best], float(norms[best])


def _any_orthogonal(v: np.ndarray) -> np.ndarray:
    helper = np.eye(3)[np.argmin(np.abs(v))]
    w = np.cross(v, helper)
    return w / np.linalg.norm(w)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def symmetric_eigh(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form eigen-decomposition of a real symmetric 3x3 matrix.

    Eigenvalues come from the trigonometric solution of the characteristic cubic, eigenvectors from cross products of
    the rows of a - λI. The eigenvector of the best separated eigenvalue is computed first; the other two are taken in
    its orthogonal complement, which keeps the basis orthonormal when two eigenvalues coincide.

    Returns:
        (eigenvalues ascending, eigenvectors as columns), with each column's largest component positive.
    """
    a = 0.5 * (np.asarray(a, dtype=float) + np.asarray(a, dtype=float).T)
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2

    if p1 == 0.0:
        eigenvalues = np.diag(a).copy()
        order = np.argsort(eigenvalues, kind="stable")
        return eigenvalues[order], np.eye(3)[:, order]

    q = np.trace(a) / 3
    p2 = float(np.sum((np.diag(a) - q) ** 2) + 2 * p1)
    p = sqrt(p2 / 6)
    b = (a - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2
    # In exact arithmetic -1 <= r <= 1; rounding can leave it slightly outside.
    phi = pi / 3 if r <= -1 else 0.0 if r >= 1 else acos(r) / 3

    largest = q + 2 * p * cos(phi)
    smallest = q + 2 * p * cos(phi + 2 * pi / 3)
    middle = 3 * q - largest - smallest
    eigenvalues = np.array([smallest, middle, largest])

    if largest - middle >= middle - smallest:
        first, second, third = 2, 0, 1
    else:
        first, second, third = 0, 2, 1

    vectors = np.zeros((3, 3))
    vectors[:, first], _ = _null_vector(a, eigenvalues[first])

    candidate, strength = _null_vector(a, eigenvalues[second])
    candidate = candidate - (candidate @ vectors[:, first]) * vectors[:, first]
    if strength <= 1e-12 * p2 or np.linalg.norm(candidate) < 1e-8:
        candidate = _any_orthogonal(vectors[:, first])
    vectors[:, second] = candidate / np.linalg.norm(candidate)
    vectors[:, third] = np.cross(vectors[:, first], vectors[:, second])

    for k in range(3):
        vectors[:, k] = _canonical_sign(vectors[:, k])
    return eigenvalues, vectors
