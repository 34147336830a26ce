"""Affine endomorphisms of a body: membership, fixed points and semi-separation.

An affine map ``phi`` is an endomorphism of P when ``phi(P) ⊆ P``.  Deciding
that is hard for bodies known only through oracles, so the learner relies on
*semi-separation*: given ``phi`` either return a fixed point of ``phi`` in P or
a halfspace in map space that contains every endomorphism but not ``phi``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .affine import AffineMap, flat_dim, outer_flat
from .errors import DimensionMismatch, InconsistentOracle
from .geometry import (
    Ball,
    BoundedBody,
    Box,
    Halfspace,
    HPolytope,
    Simplex,
    VPolytope,
    least_residual,
    linopt,
    membership,
    quadmin_run,
    sample_points,
    separate,
)

log = logging.getLogger(__name__)

DEFAULT_FP_TOL = 1e-8

__all__ = [
    "AffineMap", "EndoBounds", "TransformHalfspace", "SemiSeparation", "HRepViolation",
    "VRepViolation", "Found", "NotFound", "FixedPoint", "apply", "endo_membership_vrep",
    "endo_membership_hrep", "endo_membership", "find_fixed_point", "semi_separate",
    "sample_endomorphisms",
]


def apply(phi: AffineMap, x) -> np.ndarray:
    return phi.apply(x)


@dataclass(frozen=True)
class EndoBounds:
    """Balls in flat map space sandwiching the endomorphism set of a body.

    The ball of radius ``r/(2R)`` around the constant map to the inner center
    holds only endomorphisms; every endomorphism has flat norm at most
    ``(3R/r) sqrt(R² + d)``.
    """

    center_map: AffineMap
    inner_radius: float
    outer_radius: float

    @classmethod
    def of(cls, body: BoundedBody) -> "EndoBounds":
        r, R, d = body.inner_radius, body.outer_radius, body.dim
        return cls(AffineMap.constant(body.inner_center), r / (2.0 * R),
                   3.0 * R / r * math.sqrt(R * R + d))


@dataclass(frozen=True)
class SemiSeparation:
    u: np.ndarray
    p_u: np.ndarray
    margin: float


@dataclass(frozen=True)
class HRepViolation:
    row: int
    witness: np.ndarray


@dataclass(frozen=True)
class VRepViolation:
    vertex: int
    halfspace: Halfspace


@dataclass(frozen=True, eq=False)
class TransformHalfspace:
    """A halfspace ``{phi : <normal, flat(phi)> <= offset}`` holding every endomorphism."""

    halfspace: Halfspace
    provenance: Union[SemiSeparation, HRepViolation, VRepViolation]

    @classmethod
    def build(cls, normal, offset: float, provenance) -> "TransformHalfspace":
        return cls(Halfspace(normal, offset), provenance)

    @property
    def normal(self) -> np.ndarray:
        return self.halfspace.normal

    @property
    def offset(self) -> float:
        return self.halfspace.offset

    def violation(self, phi) -> float:
        v = phi.flat() if isinstance(phi, AffineMap) else np.asarray(phi, dtype=float)
        return self.halfspace.violation(v)


@dataclass(frozen=True)
class Found:
    point: np.ndarray
    residual: float


@dataclass(frozen=True)
class NotFound:
    """No fixed point within tolerance; ``min_residual`` is ``||phi(p*) - p*||``."""

    min_residual: float
    witness: np.ndarray
    certified: bool = False


FixedPointResult = Union[Found, NotFound]


@dataclass(frozen=True)
class FixedPoint:
    point: np.ndarray
    residual: float


def _residual(phi: AffineMap, p: np.ndarray) -> float:
    return float(np.linalg.norm(phi(p) - p))


def endo_membership_vrep(vertices: Sequence, target: BoundedBody, phi: AffineMap,
                         tol: float = 1e-9) -> Optional[TransformHalfspace]:
    """``None`` when every vertex image lies in ``target``; else a cut at the first bad vertex."""
    V = np.array(vertices, dtype=float, ndmin=2)
    if len(V) == 0:
        raise ValueError("need at least one vertex")
    if V.shape[1] != phi.dim:
        raise DimensionMismatch("vertices and map differ in dimension")
    for i, v in enumerate(V):
        h = separate(target, phi(v), tol)
        if h is not None:
            return TransformHalfspace.build(outer_flat(h.normal, v), h.offset, VRepViolation(i, h))
    return None


def endo_membership_hrep(rows, source: BoundedBody, phi: AffineMap,
                         tol: float = 1e-9) -> Optional[TransformHalfspace]:
    """Check ``max_{v in source} <a_i, phi(v)> <= b_i`` row by row with one linopt each."""
    for i, (a, beta) in enumerate(rows):
        a = np.asarray(a, dtype=float)
        c = phi.M.T @ a
        if np.linalg.norm(c) > 1e-15:
            v = linopt(source, c)[0]
        else:
            v = np.array(source.inner_center)
        if float(a @ phi(v)) > beta + tol:
            return TransformHalfspace.build(outer_flat(a, v), beta, HRepViolation(i, v))
    return None


def endo_membership(body: BoundedBody, phi: AffineMap, tol: float = 1e-9) -> Optional[TransformHalfspace]:
    """Exact endomorphism test for polytopes given by vertices or facets."""
    if isinstance(body, (Simplex, VPolytope)) or (isinstance(body, Box) and body.dim <= 8):
        return endo_membership_vrep(body.vertices, body, phi, tol)
    if isinstance(body, HPolytope):
        return endo_membership_hrep(body.rows, body, phi, tol)
    if isinstance(body, Box):
        rows = [(e, hi) for e, hi in zip(np.eye(body.dim), body.hi)]
        rows += [(-e, -lo) for e, lo in zip(np.eye(body.dim), body.lo)]
        return endo_membership_hrep(rows, body, phi, tol)
    raise NotImplementedError(f"no tractable endomorphism test for {body.kind}")


def _linear_fixed_point(body: BoundedBody, phi: AffineMap, fp_tol: float) -> Optional[Found]:
    A = phi.M - np.eye(phi.dim)
    try:
        if np.linalg.cond(A) > 1e12:
            return None
        x = np.linalg.solve(A, -phi.b)
    except np.linalg.LinAlgError:
        return None
    res = _residual(phi, x)
    if res <= fp_tol and membership(body, x, fp_tol):
        return Found(x, res)
    return None


def find_fixed_point(body: BoundedBody, phi: AffineMap, fp_tol: float = DEFAULT_FP_TOL) -> FixedPointResult:
    """Look for ``p`` in the body with ``||phi(p) - p|| <= fp_tol``.

    The linear system is tried first; otherwise ``½||(M - I)p + b||²`` is
    minimized with the ellipsoid engine, stopping early once a fixed point is
    hit or the certified lower bound rules one out.
    """
    if not fp_tol > 0:
        raise ValueError("fp_tol must be positive")
    if phi.dim != body.dim:
        raise DimensionMismatch("map and body differ in dimension")
    quick = _linear_fixed_point(body, phi, fp_tol)
    if quick is not None:
        return quick
    A = phi.M - np.eye(phi.dim)
    half = 0.5 * fp_tol * fp_tol
    tol = 0.25 * fp_tol * fp_tol
    for attempt in range(2):
        res = quadmin_run(body, A, phi.b, tol, rtol=1e-6, stop_if_below=half, stop_if_lb_above=half)
        if res.value <= half:
            return Found(res.x, math.sqrt(2.0 * res.value))
        if res.lower_bound > half:
            return NotFound(math.sqrt(2.0 * res.value), res.x, certified=True)
        tol *= 0.1
    return NotFound(math.sqrt(2.0 * res.value), res.x)


def semi_separate(body: BoundedBody, phi: AffineMap,
                  fp_tol: float = DEFAULT_FP_TOL) -> Union[FixedPoint, TransformHalfspace]:
    """Either a fixed point of ``phi`` in the body or a cut separating ``phi`` from all endomorphisms.

    With ``p*`` minimizing ``||phi(p) - p||`` and ``u = phi(p*) - p*``, every
    endomorphism ``phi'`` satisfies ``<phi'(p_u), u> <= <p_u, u>`` where ``p_u``
    maximizes ``<u, .>`` over the body, while ``phi`` violates it by at least
    ``||u||²`` when ``p*`` is exact.
    """
    if not fp_tol > 0:
        raise ValueError("fp_tol must be positive")
    if phi.dim != body.dim:
        raise DimensionMismatch("map and body differ in dimension")
    quick = _linear_fixed_point(body, phi, fp_tol)
    if quick is not None:
        return FixedPoint(quick.point, quick.residual)
    A = phi.M - np.eye(phi.dim)
    half = 0.5 * fp_tol * fp_tol
    need = 0.25 * fp_tol * fp_tol
    exact = least_residual(body, A, phi.b)
    if exact is not None:
        x, u = exact
        if float(u @ u) <= half:
            return FixedPoint(x, _residual(phi, x))
        return _semi_cut(body, phi, u, need)
    margin = -math.inf
    for rtol in (1e-7, 1e-10, 1e-13):
        res = quadmin_run(body, A, phi.b, need, rtol=rtol, stop_if_below=half)
        if res.value <= half:
            return FixedPoint(res.x, math.sqrt(2.0 * res.value))
        try:
            return _semi_cut(body, phi, A @ res.x + phi.b, need)
        except InconsistentOracle as exc:
            margin = exc.args[1]
    raise InconsistentOracle(f"map violates its semi-separation cut by only {margin:.3e}", margin)


def _semi_cut(body, phi, u, need):
    p_u = linopt(body, u)[0]
    margin = float(u @ (phi(p_u) - p_u))
    if margin < need:
        raise InconsistentOracle(f"map violates its semi-separation cut by only {margin:.3e}", margin)
    log.debug("semi-separation margin %.3e (|u|^2 = %.3e)", margin, float(u @ u))
    return TransformHalfspace.build(outer_flat(u, p_u), float(u @ p_u), SemiSeparation(u, p_u, margin))


# verified endomorphisms, used to test soundness of cuts ----------------------

def _vertex_map(images: np.ndarray) -> AffineMap:
    """The affine map of the corner simplex sending 0 to images[0] and e_j to images[j]."""
    q0 = images[0]
    return AffineMap((images[1:] - q0).T, q0)


def sample_endomorphisms(body: BoundedBody, n: int, rng: np.random.Generator) -> list:
    """Maps known to send the body into itself.

    Mixes constant maps, contractions toward body points and convex
    combinations of those with the identity; for the corner simplex also maps
    sending the vertices to arbitrary body points, and for boxes and balls
    symmetries scaled toward the center.
    """
    d = body.dim
    pts = sample_points(body, max(4 * n, 8), rng)
    out = []
    for k in range(n):
        kind = k % 4
        if kind == 0:
            phi = AffineMap.constant(pts[rng.integers(len(pts))])
        elif kind == 1:
            lam = rng.random()
            p = pts[rng.integers(len(pts))]
            phi = AffineMap(lam * np.eye(d), (1.0 - lam) * p)
        elif kind == 2 and isinstance(body, Simplex):
            phi = _vertex_map(pts[rng.integers(len(pts), size=d + 1)])
        elif kind == 2 and isinstance(body, (Ball, Box)):
            phi = _symmetry(body, rng)
        else:
            w = rng.dirichlet(np.ones(3))
            p, q = pts[rng.integers(len(pts), size=2)]
            lam = rng.random()
            M = (w[0] + w[2] * lam) * np.eye(d)
            b = w[1] * p + w[2] * (1.0 - lam) * q
            phi = AffineMap(M, b)
        out.append(phi)
    return out


def _symmetry(body, rng) -> AffineMap:
    d = body.dim
    s = rng.random()
    if isinstance(body, Ball):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        c = body.center
        return AffineMap(s * Q, c - s * Q @ c)
    c = np.asarray(body.inner_center)
    half = 0.5 * (body.hi - body.lo)
    if np.allclose(half, half[0]):
        P = np.eye(d)[rng.permutation(d)]
    else:
        P = np.eye(d)
    F = np.diag(rng.choice([-1.0, 1.0], size=d))
    L = s * F @ P
    return AffineMap(L, c - L @ c)


def flat_ball_point(center: AffineMap, radius: float, rng: np.random.Generator) -> AffineMap:
    """Uniform sample from a ball in flat map space."""
    d = center.dim
    n = flat_dim(d)
    g = rng.standard_normal(n)
    g *= radius * rng.random() ** (1.0 / n) / np.linalg.norm(g)
    return AffineMap.from_flat(center.flat() + g, d)
