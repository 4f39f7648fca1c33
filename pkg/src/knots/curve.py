import logging
from dataclasses import dataclass
from functools import cached_property
from math import gcd
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize, minimize_scalar
from scipy.spatial import cKDTree

from src.electrostatics.quadrature import TWO_PI, periodic_nodes, periodic_trapezoid
from src.errors import DegenerateProjection, InvalidKnot

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Pairs closer than this along the curve (in parameter angle) never count as a self-approach.
THETA_CUT = 0.5
DENSE_SAMPLES = 16384
SELF_DISTANCE_GRID = 512
CROSSING_SEGMENTS = 2048
BOX_PADDING = 1e-6
# Quadrature samples are cached per curve up to this many nodes.
MAX_CACHED_NODES = 2**15


class KnotCurve:
    """
    A smooth closed curve r(t), t in [0, 2π], carrying a uniform unit charge.

    Subclasses implement `_derivatives(t, order)`. Everything else (arc length, self-distance, bounding box,
    distance queries) is derived lazily and cached. Instances are treated as immutable.
    """

    kind: str = ""

    def __init__(self, label: Optional[str] = None):
        self._label = label
        self._node_cache: Dict[Tuple[int, bool], Tuple[np.ndarray, np.ndarray]] = {}

    def _derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def positions(self, t: np.ndarray) -> np.ndarray:
        return self._derivatives(np.asarray(t, dtype=float), 0)

    def velocities(self, t: np.ndarray) -> np.ndarray:
        return self._derivatives(np.asarray(t, dtype=float), 1)

    def accelerations(self, t: np.ndarray) -> np.ndarray:
        return self._derivatives(np.asarray(t, dtype=float), 2)

    def quadrature_samples(self, n: int, shifted: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """Positions and speeds |r'(t)| at the periodic trapezoid nodes of level n."""
        key = (n, shifted)
        cached = self._node_cache.get(key)
        if cached is not None:
            return cached

        t = periodic_nodes(n, shifted)
        samples = (self.positions(t), np.linalg.norm(self.velocities(t), axis=1))
        if n <= MAX_CACHED_NODES:
            self._node_cache[key] = samples
        return samples

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_node_cache"] = {}
        return state

    @cached_property
    def dense_samples(self) -> np.ndarray:
        return self.positions(periodic_nodes(DENSE_SAMPLES))

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.dense_samples)

    @cached_property
    def arc_length(self) -> float:
        return arc_length(self)

    @cached_property
    def min_self_distance(self) -> float:
        return min_self_distance(self)

    @cached_property
    def diameter(self) -> float:
        points = self.positions(periodic_nodes(SELF_DISTANCE_GRID))
        diff = points[:, None, :] - points[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff**2, axis=-1))))

    @cached_property
    def search_region(self) -> "Box":
        return search_region(self)

    @cached_property
    def reach(self) -> float:
        return curvature_reach(self)

    @property
    def label(self) -> str:
        return knot_label(self)

    def describe(self) -> Dict:
        raise NotImplementedError


class TorusKnot(KnotCurve):
    kind = "torus"

    def __init__(self, p: int, q: int, R: float, r: float, label: Optional[str] = None):
        super().__init__(label)
        self.p, self.q, self.R, self.r = int(p), int(q), float(R), float(r)

    def _derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        p, q, R, r = self.p, self.q, self.R, self.r
        cp, sp = np.cos(p * t), np.sin(p * t)
        cq, sq = np.cos(q * t), np.sin(q * t)
        rho = R + r * cq

        if order == 0:
            return np.stack([rho * cp, rho * sp, r * sq], axis=-1)
        if order == 1:
            return np.stack(
                [
                    -r * q * sq * cp - p * rho * sp,
                    -r * q * sq * sp + p * rho * cp,
                    r * q * cq,
                ],
                axis=-1,
            )
        if order == 2:
            return np.stack(
                [
                    -r * q**2 * cq * cp + 2 * r * q * p * sq * sp - p**2 * rho * cp,
                    -r * q**2 * cq * sp - 2 * r * q * p * sq * cp - p**2 * rho * sp,
                    -r * q**2 * sq,
                ],
                axis=-1,
            )
        raise ValueError(f"Derivative order {order} is not supported.")

    def describe(self) -> Dict:
        return {"kind": "torus", "p": self.p, "q": self.q, "R": self.R, "r": self.r}


class FourierKnot(KnotCurve):
    kind = "fourier"

    def __init__(self, harmonics: np.ndarray, label: Optional[str] = None):
        super().__init__(label)
        harmonics = np.asarray(harmonics, dtype=float)
        assert harmonics.ndim == 2 and harmonics.shape[1] == 6, "Each harmonic is [ax, bx, ay, by, az, bz]."
        self.harmonics = harmonics
        self._cos = harmonics[:, 0::2]
        self._sin = harmonics[:, 1::2]

    def _derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        k = np.arange(1, len(self.harmonics) + 1)
        angle = np.multiply.outer(t, k) + order * np.pi / 2
        factor = k.astype(float) ** order
        return (np.cos(angle) * factor) @ self._cos + (np.sin(angle) * factor) @ self._sin

    def describe(self) -> Dict:
        return {"kind": "fourier", "harmonics": self.harmonics.tolist()}


class SampledKnot(KnotCurve):
    kind = "samples"

    def __init__(self, points: np.ndarray, label: Optional[str] = None):
        super().__init__(label)
        points = np.asarray(points, dtype=float)
        assert points.ndim == 2 and points.shape[1] == 3, "Points must have shape (n, 3)."
        if len(points) > 1 and np.allclose(points[0], points[-1]):
            points = points[:-1]
        assert len(points) >= 4, "At least 4 distinct control points are required for a periodic spline."
        self.points = points
        knots = TWO_PI * np.arange(len(points) + 1) / len(points)
        self._spline = CubicSpline(knots, np.vstack([points, points[:1]]), bc_type="periodic")

    def _derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        return self._spline(np.mod(t, TWO_PI), nu=order)

    def describe(self) -> Dict:
        return {"kind": "samples", "points": self.points.tolist()}


@dataclass(frozen=True)
class TubeSpec:
    radius: float

    def __post_init__(self):
        assert self.radius > 0, f"Tube radius must be positive, got {self.radius}."


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def expanded(self, margin: float) -> "Box":
        return Box(lower=self.lower - margin, upper=self.upper + margin)


def validate_curve(curve: KnotCurve) -> KnotCurve:
    t = periodic_nodes(DENSE_SAMPLES)
    speed = np.linalg.norm(curve.velocities(t), axis=1)
    length = curve.arc_length

    closure_gap = float(np.linalg.norm(curve.positions(0.0) - curve.positions(TWO_PI)))
    if closure_gap >= 1e-12 * length:
        raise InvalidKnot(f"Curve is not closed: |r(0) - r(2π)| = {closure_gap:.3e}.")
    if np.min(speed) <= 1e-9 * length / TWO_PI:
        raise InvalidKnot(f"Curve is not regular: min |r'(t)| = {np.min(speed):.3e}.")
    if curve.min_self_distance <= 1e-9 * length:
        raise InvalidKnot(f"Curve is not embedded: minimal self-distance {curve.min_self_distance:.3e}.")

    return curve


def make_torus_knot(p: int, q: int, R: float, r: float, validate: bool = True, label: Optional[str] = None):
    if (p, q) == (1, 0):
        # Round unknot: radius R in the xy-plane, the tube radius plays no role.
        if R <= 0:
            raise InvalidKnot(f"Circle radius must be positive, got R={R}.")
        r = 0.0
    elif validate:
        if gcd(p, q) != 1:
            raise InvalidKnot(f"torus({p},{q}) has gcd {gcd(p, q)}: this is a link, not a knot.")
        if not R > r > 0:
            raise InvalidKnot(f"Torus knot requires R > r > 0, got R={R}, r={r}.")

    curve = TorusKnot(p, q, R, r, label=label)
    return validate_curve(curve) if validate else curve


def make_fourier_knot(harmonics: Sequence[Sequence[float]], validate: bool = True, label: Optional[str] = None):
    curve = FourierKnot(np.asarray(harmonics, dtype=float), label=label)
    return validate_curve(curve) if validate else curve


def make_sampled_knot(points: Sequence[Sequence[float]], validate: bool = True, label: Optional[str] = None):
    curve = SampledKnot(np.asarray(points, dtype=float), label=label)
    return validate_curve(curve) if validate else curve


def eval_curve(curve: KnotCurve, t: float) -> Tuple[np.ndarray, np.ndarray]:
    t = float(np.mod(t, TWO_PI))
    return curve.positions(t), curve.velocities(t)


def arc_length(curve: KnotCurve) -> float:
    value, _, _, _ = periodic_trapezoid(
        lambda t: np.linalg.norm(curve.velocities(t), axis=1), initial_nodes=64, max_nodes=2**20, tol=1e-13
    )
    return float(value)


def _angular_separation(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    gap = np.abs(s - t) % TWO_PI
    return np.minimum(gap, TWO_PI - gap)


def min_self_distance(curve: KnotCurve) -> float:
    """
    Doubly-critical self-distance of the curve.

    The smallest chord |r(s) - r(t)| over well separated parameters (angular separation above THETA_CUT) which is a
    local minimum of the chord length. Curves without such a chord (a round circle) fall back to the shortest chord
    perpendicular to both tangents, e.g. the diameter for a circle.
    """
    t = periodic_nodes(SELF_DISTANCE_GRID)
    points = curve.positions(t)
    tangents = curve.velocities(t)

    diff = points[:, None, :] - points[None, :, :]
    chord2 = np.sum(diff**2, axis=-1)
    allowed = _angular_separation(t[:, None], t[None, :]) > THETA_CUT

    masked = np.where(allowed, chord2, -np.inf)
    local_minima = allowed & (masked <= ndimage.minimum_filter(masked, size=3, mode="wrap"))

    if np.any(local_minima):
        candidates = np.where(local_minima, chord2, np.inf)
        i, j = np.unravel_index(np.argmin(candidates), candidates.shape)
        distance = _refine_chord(curve, t[i], t[j], float(chord2[i, j]))
    else:
        chord = np.sqrt(np.maximum(chord2, np.finfo(float).tiny))
        speed = np.linalg.norm(tangents, axis=1)
        cos_s = np.einsum("ijk,ik->ij", diff, tangents) / (chord * speed[:, None])
        cos_t = np.einsum("ijk,jk->ij", diff, tangents) / (chord * speed[None, :])
        perpendicularity = np.where(allowed, cos_s**2 + cos_t**2, np.inf)
        near_perpendicular = perpendicularity <= max(1e-4, float(np.min(perpendicularity)))
        distance = float(np.sqrt(np.min(np.where(near_perpendicular, chord2, np.inf))))

    if distance <= 1e-9 * curve.arc_length:
        logger.warning(f"Curve self-intersects or nearly so: minimal self-distance is {distance:.3e}.")

    return distance


def _refine_chord(curve: KnotCurve, s0: float, t0: float, grid_chord2: float) -> float:
    def chord2(st):
        diff = curve.positions(st[0]) - curve.positions(st[1])
        return float(diff @ diff)

    result = minimize(chord2, x0=[s0, t0], method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-20})
    if _angular_separation(result.x[0], result.x[1]) > THETA_CUT and result.fun < grid_chord2:
        return float(np.sqrt(max(result.fun, 0.0)))
    return float(np.sqrt(grid_chord2))


def curvature_reach(curve: KnotCurve) -> float:
    """Local reach estimate: the smallest radius of curvature on a dense grid."""
    t = periodic_nodes(DENSE_SAMPLES)
    velocity = curve.velocities(t)
    acceleration = curve.accelerations(t)
    speed = np.linalg.norm(velocity, axis=1)
    curvature = np.linalg.norm(np.cross(velocity, acceleration), axis=1) / speed**3
    max_curvature = float(np.max(curvature))
    return np.inf if max_curvature == 0 else 1.0 / max_curvature


def default_tube(curve: KnotCurve) -> TubeSpec:
    return TubeSpec(radius=min(0.25 * curve.min_self_distance, 0.5 * curve.reach))


def check_tube(curve: KnotCurve, tube: TubeSpec) -> TubeSpec:
    if not tube.radius < curve.min_self_distance / 2:
        raise InvalidKnot(f"Tube radius {tube.radius} must stay below half the self-distance {curve.min_self_distance}.")
    if not tube.radius < curve.reach:
        raise InvalidKnot(f"Tube radius {tube.radius} must stay below the curvature reach {curve.reach}.")
    return tube


def distance_to_knot(curve: KnotCurve, x: np.ndarray) -> np.ndarray:
    """Distance from one point (3,) or many points (n, 3) to the curve."""
    x = np.asarray(x, dtype=float)
    distance, index = curve._tree.query(x)
    distance = np.atleast_1d(np.asarray(distance, dtype=float))
    index = np.atleast_1d(index)
    points = np.atleast_2d(x)

    step = TWO_PI / DENSE_SAMPLES
    spacing = curve.arc_length / DENSE_SAMPLES
    # Far from the curve the nearest sample is already accurate to spacing^2 / (8 d).
    for k in np.flatnonzero(distance < 4 * spacing):
        t0 = index[k] * step
        result = minimize_scalar(
            lambda t: float(np.sum((curve.positions(t) - points[k]) ** 2)),
            bounds=(t0 - step, t0 + step),
            method="bounded",
            options={"xatol": 1e-14},
        )
        distance[k] = min(distance[k], float(np.sqrt(max(result.fun, 0.0))))

    return distance if x.ndim > 1 else float(distance[0])


def search_region(curve: KnotCurve) -> Box:
    """
    Bounding box of dense curve samples.

    Outside the convex hull of a positive charge the field has a strictly positive outward component, so every finite
    critical point lies in this box. The padding only guards against points numerically on the hull boundary.
    """
    samples = curve.dense_samples
    padding = BOX_PADDING * curve.diameter
    return Box(lower=samples.min(axis=0) - padding, upper=samples.max(axis=0) + padding)


def knot_label(curve: KnotCurve) -> str:
    if isinstance(curve, TorusKnot):
        if (curve.p, curve.q) == (1, 0) or abs(curve.p) == 1 or abs(curve.q) == 1:
            return "unknot"
        return f"torus({curve.p},{curve.q})"
    return curve._label or curve.kind


def _projection_basis(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[np.argmin(np.abs(direction))]
    u = np.cross(direction, helper)
    u /= np.linalg.norm(u)
    v = np.cross(direction, u)
    return u, v


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _count_crossings(curve: KnotCurve, direction: np.ndarray, segments: int) -> Tuple[int, bool]:
    u, v = _projection_basis(direction)
    points = curve.positions(periodic_nodes(segments))
    start = np.stack([points @ u, points @ v], axis=-1)
    end = np.roll(start, -1, axis=0)
    edge = end - start
    edge_length = np.linalg.norm(edge, axis=1)
    scale = curve.diameter

    index = np.arange(segments)
    crossings: List[np.ndarray] = []
    degenerate = False
    block = max(16, 2**19 // segments)
    for first in range(0, segments, block):
        rows = index[first : first + block]
        # Each unordered pair once, skipping neighbouring segments (they share an endpoint).
        valid = index[None, :] > rows[:, None] + 1
        valid &= ~((rows[:, None] == 0) & (index[None, :] == segments - 1))

        r = edge[rows][:, None, :]
        s = edge[None, :, :]
        offset = start[None, :, :] - start[rows][:, None, :]
        denom = _cross2(r, s)
        length_product = edge_length[rows][:, None] * edge_length[None, :]

        parallel = np.abs(denom) <= 1e-12 * length_product
        with np.errstate(divide="ignore", invalid="ignore"):
            along_r = _cross2(offset, s) / denom
            along_s = _cross2(offset, r) / denom

        collinear = parallel & (np.abs(_cross2(offset, r)) <= 1e-12 * scale * edge_length[rows][:, None])
        if np.any(valid & collinear):
            overlap_start = np.einsum("ijk,ijk->ij", offset, r) / edge_length[rows][:, None] ** 2
            overlap_end = overlap_start + np.einsum("ijk,ijk->ij", s, r) / edge_length[rows][:, None] ** 2
            lo, hi = np.minimum(overlap_start, overlap_end), np.maximum(overlap_start, overlap_end)
            if np.any(valid & collinear & (hi >= 0) & (lo <= 1)):
                degenerate = True

        eps = 1e-9
        inside = ~parallel & (along_r > -eps) & (along_r < 1 + eps) & (along_s > -eps) & (along_s < 1 + eps)
        near_endpoint = inside & (
            (np.abs(along_r) < eps)
            | (np.abs(along_r - 1) < eps)
            | (np.abs(along_s) < eps)
            | (np.abs(along_s - 1) < eps)
        )
        grazing = inside & (np.abs(denom) <= 1e-6 * length_product)
        if np.any(valid & (near_endpoint | grazing)):
            degenerate = True

        hits = valid & inside & ~near_endpoint
        hit_rows, hit_cols = np.nonzero(hits)
        if len(hit_rows):
            crossings.append(start[rows[hit_rows]] + along_r[hit_rows, hit_cols][:, None] * edge[rows[hit_rows]])

    if crossings:
        locations = np.vstack(crossings)
        if len(locations) > 1 and len(cKDTree(locations).query_pairs(1e-6 * scale)) > 0:
            # Two crossings at one projected point: a triple point of the diagram.
            degenerate = True
        return len(locations), degenerate
    return 0, degenerate


def crossing_upper_bound(
    curve: KnotCurve, direction: Sequence[float] = (0.0, 0.0, 1.0), max_retries: int = 5, seed: int = 0
) -> int:
    """
    Number of crossings of the projection of a fine polygonalization of the curve along `direction`.

    Every diagram bounds the crossing number from above, and the crossing number bounds the tunnel number. Degenerate
    projections (tangencies, triple points, collinear overlaps) are retried with a jittered direction and twice as many
    segments.
    """
    direction = np.array(direction, dtype=float)
    direction /= np.linalg.norm(direction)
    rng = np.random.default_rng(seed)
    segments = CROSSING_SEGMENTS

    for attempt in range(max_retries + 1):
        count, degenerate = _count_crossings(curve, direction, segments)
        if not degenerate:
            return count

        logger.info(f"Projection along {np.round(direction, 6)} is degenerate, retrying (attempt {attempt + 1}).")
        direction = direction + 1e-3 * rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        segments *= 2

    raise DegenerateProjection(f"Projection stayed degenerate after {max_retries} jittered retries.")
