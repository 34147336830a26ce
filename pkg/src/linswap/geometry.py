"""Convex bodies given by oracles, with certified inner and outer balls.

Every body knows a ball ``B(a, r)`` it contains and a radius ``R`` with
``body ⊆ B(0, R)``.  The public oracles are module-level functions
(:func:`membership`, :func:`separate`, :func:`linopt`, :func:`project`,
:func:`quadmin`, :func:`precondition`) that dispatch on the shape and fall
back to the ellipsoid engine when no closed form is available.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, linprog, lsq_linear, nnls

from .affine import AffineMap
from .ellipsoid import Ellipsoid, MinimizeResult, minimize_convex
from .errors import DegenerateProjection, DimensionMismatch, UnsupportedBody

DEFAULT_TOL = 1e-9
_VERTEX_ENUM_LIMIT = 20000


@dataclass(frozen=True, eq=False)
class Halfspace:
    """``{x : <normal, x> <= offset}`` with a unit normal.

    A zero normal is kept as is; with a negative offset it describes the empty
    set, which is how infeasibility is reported to the ellipsoid engine.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        c = np.array(self.normal, dtype=float).reshape(-1)
        off = float(self.offset)
        nrm = math.sqrt(float(c @ c))
        if nrm > 0.0 and abs(nrm - 1.0) > 1e-13:
            c = c / nrm
            off = off / nrm
        c.setflags(write=False)
        object.__setattr__(self, "normal", c)
        object.__setattr__(self, "offset", off)

    def violation(self, x) -> float:
        return float(self.normal @ np.asarray(x, dtype=float) - self.offset)

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.violation(x) <= tol


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_point(body: "BoundedBody", x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (body.dim,):
        raise DimensionMismatch(f"expected a point of dimension {body.dim}, got shape {x.shape}")
    return x


def _most_violated(A: np.ndarray, h: np.ndarray, x: np.ndarray, tol: float) -> Optional[Halfspace]:
    if A.shape[0] == 0:
        return None
    v = A @ x - h
    i = int(np.argmax(v))
    if v[i] > tol:
        return Halfspace(A[i], h[i])
    return None


def _normalize_rows(A, h):
    A = np.array(A, dtype=float, ndmin=2)
    h = np.array(h, dtype=float).reshape(-1)
    if A.shape[0] != h.shape[0]:
        raise DimensionMismatch("normals and offsets differ in count")
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero normal in halfspace description")
    return A / norms[:, None], h / norms


class BoundedBody:
    """Base class.  Subclasses fill in the cheap shape-specific hooks."""

    kind = "body"

    def __init__(self, dim: int, inner_center, inner_radius: Optional[float], outer_radius: float):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)
        self.outer_radius = float(outer_radius)
        if inner_radius is None:
            self.inner_center = None if inner_center is None else _frozen(inner_center)
            self.inner_radius = None
        else:
            a = _frozen(inner_center)
            if a.shape != (self.dim,):
                raise DimensionMismatch("inner center has the wrong dimension")
            if not inner_radius > 0:
                raise ValueError("inner radius must be positive")
            slack = 1e-12 * max(1.0, self.outer_radius)
            if self.outer_radius < inner_radius - slack:
                raise ValueError("outer radius smaller than inner radius")
            if np.linalg.norm(a) > self.outer_radius + slack:
                raise ValueError("inner center lies outside the outer ball")
            self.inner_center = a
            self.inner_radius = float(inner_radius)

    # hooks --------------------------------------------------------------

    def _contains(self, x: np.ndarray, tol: float) -> bool:
        p = self._project(x)
        if p is None:
            p = project(self, x, tol)
        return float(np.linalg.norm(x - p)) <= tol

    def _project(self, y: np.ndarray) -> Optional[np.ndarray]:
        cons = self._constraints()
        if cons is None:
            return None
        return _project_constraints(y, *cons)

    def _cut(self, x: np.ndarray, tol: float) -> Optional[Halfspace]:
        raise NotImplementedError

    def _linopt(self, c: np.ndarray) -> Optional[np.ndarray]:
        return None

    def _constraints(self):
        """``(A, h, center, radius)`` with body = {Ax <= h} ∩ B(center, radius), or None."""
        return None

    def bounding_ball(self):
        return np.zeros(self.dim), self.outer_radius

    @property
    def vertices(self) -> Optional[np.ndarray]:
        return None

    @property
    def shape(self) -> str:
        return self.kind

    def _bounds_dict(self) -> dict:
        out = {"outer_radius": self.outer_radius}
        if self.inner_radius is not None:
            out["inner"] = {"center": self.inner_center.tolist(), "radius": self.inner_radius}
        return out

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim}, r={self.inner_radius}, R={self.outer_radius})"


class Ball(BoundedBody):
    kind = "ball"

    def __init__(self, center, radius: float):
        center = _frozen(np.atleast_1d(center))
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.center = center
        self.radius = float(radius)
        super().__init__(center.shape[0], center, radius, float(np.linalg.norm(center)) + radius)

    def _contains(self, x, tol):
        return float(np.linalg.norm(x - self.center)) <= self.radius + tol

    def _project(self, y):
        d = y - self.center
        n = float(np.linalg.norm(d))
        if n <= self.radius:
            return y.copy()
        return self.center + d * (self.radius / n)

    def _cut(self, x, tol):
        d = x - self.center
        n = float(np.linalg.norm(d))
        if n <= self.radius + tol:
            return None
        u = d / n
        return Halfspace(u, float(u @ self.center) + self.radius)

    def _linopt(self, c):
        return self.center + c * (self.radius / float(np.linalg.norm(c)))

    def _constraints(self):
        return np.zeros((0, self.dim)), np.zeros(0), self.center, self.radius

    def bounding_ball(self):
        return np.array(self.center), self.radius

    def to_dict(self):
        return {"shape": "ball", "dim": self.dim, "center": self.center.tolist(),
                "radius": self.radius, **self._bounds_dict()}


class Box(BoundedBody):
    kind = "box"

    def __init__(self, lo, hi):
        lo = _frozen(np.atleast_1d(lo))
        hi = _frozen(np.atleast_1d(hi))
        if lo.shape != hi.shape:
            raise DimensionMismatch("lo and hi differ in shape")
        if np.any(hi <= lo):
            raise ValueError("box must be full-dimensional")
        self.lo, self.hi = lo, hi
        far = np.maximum(np.abs(lo), np.abs(hi))
        super().__init__(lo.shape[0], 0.5 * (lo + hi), 0.5 * float(np.min(hi - lo)),
                         float(np.linalg.norm(far)))

    def _contains(self, x, tol):
        return float(np.linalg.norm(x - np.clip(x, self.lo, self.hi))) <= tol

    def _project(self, y):
        return np.clip(y, self.lo, self.hi)

    def _cut(self, x, tol):
        over = x - self.hi
        under = self.lo - x
        i, j = int(np.argmax(over)), int(np.argmax(under))
        if max(over[i], under[j]) <= tol:
            return None
        e = np.zeros(self.dim)
        if over[i] >= under[j]:
            e[i] = 1.0
            return Halfspace(e, self.hi[i])
        e[j] = -1.0
        return Halfspace(e, -self.lo[j])

    def _linopt(self, c):
        return np.where(c > 0, self.hi, self.lo)

    def _constraints(self):
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye]), np.concatenate([self.hi, -self.lo]), None, None

    def bounding_ball(self):
        return np.array(self.inner_center), 0.5 * float(np.linalg.norm(self.hi - self.lo))

    @property
    def vertices(self):
        if self.dim > 12:
            return None
        corners = itertools.product(*zip(self.lo, self.hi))
        return np.array(list(corners), dtype=float)

    def to_dict(self):
        return {"shape": "box", "dim": self.dim, "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                **self._bounds_dict()}


def project_probability_simplex(y) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = 1}`` (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.shape[0] + 1)
    rho = int(np.nonzero(u - css / k > 0)[0][-1])
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


class Simplex(BoundedBody):
    """The corner simplex ``conv{0, e_1, ..., e_d} = {x >= 0, sum x <= 1}``.

    A game player with ``d + 1`` pure actions plays the mixed strategy
    ``(1 - sum x, x_1, ..., x_d)``.
    """

    kind = "simplex"

    def __init__(self, d: int):
        d = int(d)
        rho = 1.0 / (d + math.sqrt(d))
        super().__init__(d, np.full(d, rho), rho, 1.0)
        A = np.vstack([-np.eye(d), np.full((1, d), 1.0 / math.sqrt(d))])
        h = np.concatenate([np.zeros(d), [1.0 / math.sqrt(d)]])
        self._A, self._h = A, h

    def _contains(self, x, tol):
        if np.all(x >= 0.0) and x.sum() <= 1.0:
            return True
        return float(np.linalg.norm(x - self._project(x))) <= tol

    def _project(self, y):
        p = np.maximum(y, 0.0)
        if p.sum() <= 1.0:
            return p
        return project_probability_simplex(y)

    def _cut(self, x, tol):
        return _most_violated(self._A, self._h, x, tol)

    def _linopt(self, c):
        vals = np.concatenate([[0.0], c])
        k = int(np.argmax(vals))
        out = np.zeros(self.dim)
        if k > 0:
            out[k - 1] = 1.0
        return out

    def _constraints(self):
        return self._A, self._h, None, None

    def hrep(self):
        return self._A.copy(), self._h.copy()

    def bounding_ball(self):
        return np.zeros(self.dim), 1.0

    @property
    def vertices(self):
        return np.vstack([np.zeros(self.dim), np.eye(self.dim)])

    def to_dict(self):
        return {"shape": "simplex", "dim": self.dim, **self._bounds_dict()}


def _enumerate_vertices(A: np.ndarray, h: np.ndarray, tol: float = 1e-9) -> Optional[np.ndarray]:
    m, d = A.shape
    if math.comb(m, d) > _VERTEX_ENUM_LIMIT:
        return None
    found = []
    for rows in itertools.combinations(range(m), d):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, h[list(rows)])
        if np.all(A @ v <= h + tol * (1.0 + np.abs(h))):
            if not any(np.allclose(v, w, atol=1e-10) for w in found):
                found.append(v)
    return np.array(found) if found else np.zeros((0, d))


def chebyshev_ball(A: np.ndarray, h: np.ndarray):
    """Largest ball inside ``{Ax <= h}`` (rows of A must be unit)."""
    m, d = A.shape
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.hstack([A, np.ones((m, 1))]), b_ub=h,
                  bounds=[(None, None)] * d + [(0, None)], method="highs")
    if res.status != 0:
        raise ValueError(f"cannot compute an inner ball: {res.message}")
    return res.x[:d], float(res.x[-1])


class HPolytope(BoundedBody):
    """``{x : <a_i, x> <= b_i}`` with unit normals.

    Missing bounding data is derived: the Chebyshev ball for the inner ball and
    the largest vertex norm for the outer radius.
    """

    kind = "hpolytope"

    def __init__(self, normals, offsets, inner_center=None, inner_radius=None, outer_radius=None):
        A, h = _normalize_rows(normals, offsets)
        A.setflags(write=False)
        h.setflags(write=False)
        self.A, self.h = A, h
        self._verts = _enumerate_vertices(A, h)
        if inner_radius is None:
            inner_center, inner_radius = chebyshev_ball(A, h)
        if outer_radius is None:
            if self._verts is None or len(self._verts) == 0:
                raise ValueError("outer radius must be supplied for this polytope")
            outer_radius = float(np.max(np.linalg.norm(self._verts, axis=1)))
            outer_radius = max(outer_radius, float(np.linalg.norm(inner_center)) + inner_radius)
        super().__init__(A.shape[1], inner_center, inner_radius, outer_radius)

    @property
    def rows(self):
        return list(zip(self.A, self.h))

    def _contains(self, x, tol):
        return bool(np.all(self.A @ x - self.h <= tol))

    def _cut(self, x, tol):
        return _most_violated(self.A, self.h, x, tol)

    def _linopt(self, c):
        if self._verts is None:
            return None
        return self._verts[int(np.argmax(self._verts @ c))].copy()

    def _constraints(self):
        return self.A, self.h, None, None

    @property
    def vertices(self):
        return None if self._verts is None else self._verts.copy()

    def to_dict(self):
        return {"shape": "hpolytope", "dim": self.dim,
                "rows": [[a.tolist(), float(b)] for a, b in zip(self.A, self.h)],
                **self._bounds_dict()}


class VPolytope(BoundedBody):
    """Convex hull of finitely many points; facets come from Qhull."""

    kind = "vpolytope"

    def __init__(self, vertices, inner_center=None, inner_radius=None, outer_radius=None):
        V = _frozen(np.array(vertices, dtype=float, ndmin=2))
        self._V = V
        d = V.shape[1]
        if d == 1:
            lo, hi = float(V.min()), float(V.max())
            if hi <= lo:
                raise ValueError("polytope must be full-dimensional")
            A, h = np.array([[1.0], [-1.0]]), np.array([hi, -lo])
        else:
            from scipy.spatial import ConvexHull, QhullError
            try:
                hull = ConvexHull(V)
            except QhullError as exc:
                raise ValueError("polytope must be full-dimensional") from exc
            eq = hull.equations
            A, h = eq[:, :-1], -eq[:, -1]
            key = np.round(np.hstack([A, h[:, None]]), 10)
            _, idx = np.unique(key, axis=0, return_index=True)
            idx = np.sort(idx)
            A, h = _normalize_rows(A[idx], h[idx])
        self._A, self._h = A, h
        if inner_radius is None:
            inner_center, inner_radius = chebyshev_ball(A, h)
        if outer_radius is None:
            outer_radius = float(np.max(np.linalg.norm(V, axis=1)))
        super().__init__(d, inner_center, inner_radius, outer_radius)

    def _contains(self, x, tol):
        if np.all(self._A @ x <= self._h):
            return True
        return float(np.linalg.norm(x - self._project(x))) <= tol

    def _cut(self, x, tol):
        return _most_violated(self._A, self._h, x, tol)

    def _linopt(self, c):
        return self._V[int(np.argmax(self._V @ c))].copy()

    def _constraints(self):
        return self._A, self._h, None, None

    @property
    def vertices(self):
        return np.array(self._V)

    def to_dict(self):
        return {"shape": "vpolytope", "dim": self.dim, "vertices": self._V.tolist(),
                **self._bounds_dict()}


class CappedBall(BoundedBody):
    """``{x : ||x|| <= radius, <u, x> <= cap}``."""

    kind = "capped_ball"

    def __init__(self, radius: float, direction, cap: float):
        u = np.array(direction, dtype=float)
        u = _frozen(u / np.linalg.norm(u))
        if not -radius < cap:
            raise ValueError("cap removes the whole ball")
        self.radius, self.direction, self.cap = float(radius), u, float(cap)
        kappa = min(cap, radius)
        super().__init__(u.shape[0], 0.5 * (kappa - radius) * u, 0.5 * (kappa + radius), radius)

    def _contains(self, x, tol):
        return float(np.linalg.norm(x)) <= self.radius + tol and float(self.direction @ x) <= self.cap + tol

    def _cut(self, x, tol):
        n = float(np.linalg.norm(x))
        over_ball = n - self.radius
        over_cap = float(self.direction @ x) - self.cap
        if max(over_ball, over_cap) <= tol:
            return None
        if over_ball >= over_cap:
            return Halfspace(x / n, self.radius)
        return Halfspace(self.direction, self.cap)

    def _constraints(self):
        return self.direction[None, :], np.array([self.cap]), np.zeros(self.dim), self.radius

    def to_dict(self):
        return {"shape": "capped_ball", "dim": self.dim, "radius": self.radius,
                "direction": self.direction.tolist(), "cap": self.cap, **self._bounds_dict()}


class AffineImage(BoundedBody):
    """``psi(base)`` for an invertible affine map ``psi``."""

    kind = "affine_image"

    def __init__(self, base: BoundedBody, psi: AffineMap, inner_center=None, inner_radius=None,
                 outer_radius=None):
        if psi.dim != base.dim:
            raise DimensionMismatch("map and body dimensions differ")
        self.base, self.psi = base, psi
        self.inv = psi.inverse()
        sv = np.linalg.svd(psi.M, compute_uv=False)
        self._smax, self._smin = float(sv[0]), float(sv[-1])
        self._similar = self._smax - self._smin <= 1e-12 * self._smax
        if inner_radius is None and base.inner_radius is not None:
            inner_center = psi(base.inner_center)
            inner_radius = self._smin * base.inner_radius
        if outer_radius is None:
            V = base.vertices
            if V is not None:
                outer_radius = float(np.max(np.linalg.norm(psi(V), axis=1)))
            else:
                c, rad = base.bounding_ball()
                outer_radius = float(np.linalg.norm(psi(c))) + self._smax * rad
            if inner_radius is not None:
                outer_radius = max(outer_radius, float(np.linalg.norm(inner_center)) + inner_radius)
        super().__init__(base.dim, inner_center, inner_radius, outer_radius)

    def _contains(self, x, tol):
        return membership(self.base, self.inv(x), tol / self._smax)

    def _project(self, y):
        if self._similar:
            p = self.base._project(self.inv(y))
            return None if p is None else self.psi(p)
        return super()._project(y)

    def _cut(self, x, tol):
        h = self.base._cut(self.inv(x), tol / self._smax)
        if h is None:
            return None
        c = self.inv.M.T @ h.normal
        return Halfspace(c, h.offset + float(c @ self.psi.b))

    def _linopt(self, c):
        x, _ = linopt(self.base, self.psi.M.T @ c)
        return self.psi(x)

    def _constraints(self):
        cons = self.base._constraints()
        if cons is None:
            return None
        A, h, center, radius = cons
        if radius is not None and not self._similar:
            return None
        W = A @ self.inv.M
        A2, h2 = (W, h - A @ self.inv.b) if A.shape[0] == 0 else _normalize_rows(W, h - A @ self.inv.b)
        if radius is None:
            return A2, h2, None, None
        return A2, h2, self.psi(center), radius * self._smax

    def bounding_ball(self):
        c, rad = self.base.bounding_ball()
        return self.psi(c), rad * self._smax

    @property
    def vertices(self):
        V = self.base.vertices
        return None if V is None else self.psi(V)

    def to_dict(self):
        return {"shape": "affine_image", "dim": self.dim, "base": self.base.to_dict(),
                "M": self.psi.M.tolist(), "b": self.psi.b.tolist(), **self._bounds_dict()}


class Intersection(BoundedBody):
    """A body cut by finitely many halfspaces.

    The inner ball is optional here: when the halfspaces do not keep the base
    body's inner ball and none is supplied, ``inner_radius`` is ``None``.
    """

    kind = "intersection"

    def __init__(self, base: BoundedBody, halfspaces: Sequence[Halfspace], inner_center=None,
                 inner_radius=None, outer_radius=None):
        self.base = base
        self.halfspaces = tuple(halfspaces)
        if self.halfspaces:
            self._A = np.array([h.normal for h in self.halfspaces])
            self._h = np.array([h.offset for h in self.halfspaces])
        else:
            self._A, self._h = np.zeros((0, base.dim)), np.zeros(0)
        if inner_radius is None and base.inner_radius is not None:
            a, r = base.inner_center, base.inner_radius
            if self._A.shape[0] == 0 or np.all(self._A @ a + r <= self._h):
                inner_center, inner_radius = a, r
        super().__init__(base.dim, inner_center, inner_radius,
                         base.outer_radius if outer_radius is None else outer_radius)

    def _contains(self, x, tol):
        if self._A.shape[0] and np.any(self._A @ x - self._h > tol):
            return False
        return membership(self.base, x, tol)

    def _cut(self, x, tol):
        h = _most_violated(self._A, self._h, x, tol)
        return h if h is not None else self.base._cut(x, tol)

    def _constraints(self):
        cons = self.base._constraints()
        if cons is None:
            return None
        A, h, center, radius = cons
        return np.vstack([A, self._A]), np.concatenate([h, self._h]), center, radius

    def bounding_ball(self):
        return self.base.bounding_ball()

    def to_dict(self):
        return {"shape": "intersection", "dim": self.dim, "base": self.base.to_dict(),
                "rows": [[h.normal.tolist(), h.offset] for h in self.halfspaces],
                **self._bounds_dict()}


# exact projection onto {Ax <= h} ∩ B(center, radius) -------------------------

def _nonneg_lstsq(E: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``argmin ||Eu - f||`` over ``u >= 0``.

    scipy's ``nnls`` occasionally stops short of optimality (positive weights
    with a nonzero gradient), so its KKT conditions are checked and BVLS takes
    over when they fail.
    """
    u, _ = nnls(E, f, maxiter=50 * E.shape[1] + 100)
    grad = E.T @ (E @ u - f)
    slack = 1e-10 * (1.0 + float(np.abs(E).max())) * (1.0 + float(np.abs(f).max()))
    if grad.min() >= -slack and np.all(np.abs(grad[u > 0]) <= slack):
        return u
    return lsq_linear(E, f, bounds=(0.0, np.inf), method="bvls", tol=1e-15).x


def _project_polytope(y: np.ndarray, A: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Least-distance program solved through NNLS (Lawson and Hanson)."""
    if A.shape[0] == 0:
        return y.copy()
    g = A @ y - h
    if np.all(g <= 0.0):
        return y.copy()
    n = y.shape[0]
    E = np.vstack([-A.T, g[None, :]])
    f = np.zeros(n + 1)
    f[n] = 1.0
    u = _nonneg_lstsq(E, f)
    r = E @ u - f
    if abs(r[n]) < 1e-14:
        raise UnsupportedBody("polytope is empty")
    z = -r[:n] / r[n]
    return y + z


def _project_constraints(y, A, h, center, radius) -> np.ndarray:
    x = _project_polytope(y, A, h)
    if radius is None:
        return x

    def excess(t):
        w = t * y + (1.0 - t) * center
        return float(np.linalg.norm(_project_polytope(w, A, h) - center)) - radius

    if float(np.linalg.norm(x - center)) <= radius:
        return x
    if A.shape[0] == 0:
        d = y - center
        return center + d * (radius / float(np.linalg.norm(d)))
    e0 = excess(0.0)
    if e0 > 1e-12 * max(1.0, radius):
        raise UnsupportedBody("ball and halfspaces do not intersect")
    if e0 >= 0.0:
        return _project_polytope(center, A, h)
    t = brentq(excess, 0.0, 1.0, xtol=1e-16, rtol=1e-15, maxiter=200)
    return _project_polytope(t * y + (1.0 - t) * center, A, h)


# public oracles -------------------------------------------------------------

def membership(body: BoundedBody, x, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``x`` is within distance ``tol`` of the body (constraint-wise for H-descriptions)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    return bool(body._contains(_check_point(body, x), tol))


def separate(body: BoundedBody, x, tol: float = DEFAULT_TOL) -> Optional[Halfspace]:
    """``None`` when ``x`` is a member, otherwise a halfspace containing the body but not ``x``."""
    x = _check_point(body, x)
    if membership(body, x, tol):
        return None
    exact = body._project(x)
    p = exact if exact is not None else project(body, x, tol * 1e-3)
    diff = x - p
    dist = float(np.linalg.norm(diff))
    if dist <= tol:
        raise DegenerateProjection(f"point fails membership but lies {dist:.3e} from its projection")
    normal = diff / dist
    offset = float(normal @ p)
    if exact is None:
        offset = max(offset, linopt(body, normal, tol * 1e-3)[1])
    if float(normal @ x) <= offset:
        raise DegenerateProjection("separating halfspace does not exclude the point")
    return Halfspace(normal, offset)


def _affine_min_norm(YS: np.ndarray):
    """Least-norm point of the affine hull of the rows of ``YS`` and its affine weights.

    The point is taken as the projection of any row onto the orthogonal
    complement of the hull's direction space, which stays accurate when the
    point is tiny compared with the rows.
    """
    k, n = YS.shape
    y0 = YS[0]
    if k == 1:
        return y0.copy(), np.ones(1)
    U, sv, _ = np.linalg.svd((YS[1:] - y0).T, full_matrices=True)
    rank = int(np.sum(sv > 1e-13 * max(sv[0], 1e-300)))
    N = U[:, rank:]
    x = N @ (N.T @ y0)
    A = np.vstack([YS.T, np.ones(k)])
    v = np.linalg.lstsq(A, np.append(x, 1.0), rcond=None)[0]
    return x, v


def min_norm_point(Y, max_iter: int = 10000):
    """Point of least norm in ``conv(rows of Y)`` by Wolfe's active-set method.

    Returns ``(x, weights)`` with ``weights`` on the probability simplex.
    ``x`` is the least-norm point of the final face's affine hull, computed
    directly rather than as ``weights @ Y``, so that its direction is reliable
    even when it is many orders of magnitude shorter than the rows.
    """
    Y = np.asarray(Y, dtype=float)
    k = Y.shape[0]
    ymax = float(np.sqrt(np.einsum("ij,ij->i", Y, Y).max()))
    sq = np.einsum("ij,ij->i", Y, Y)
    j = int(np.argmin(sq))
    S = [j]
    w = np.array([1.0])
    x = Y[j].copy()
    for _ in range(max_iter):
        dots = Y @ x
        j = int(np.argmin(dots))
        xx = float(x @ x)
        slack = 1e-12 * xx + 64.0 * np.finfo(float).eps * math.sqrt(xx) * ymax
        if xx - dots[j] <= slack or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        while True:
            y_aff, v = _affine_min_norm(Y[S])
            if np.all(v > 1e-14):
                w, x = v, y_aff
                break
            neg = v <= 1e-14
            ratio = w[neg] / np.maximum(w[neg] - v[neg], 1e-300)
            theta = min(1.0, float(ratio.min()))
            w = w + theta * (v - w)
            keep = w > 1e-14
            if keep.all():
                keep[np.argmin(w)] = False
            S = [s for s, kp in zip(S, keep) if kp]
            w = w[keep]
            w = w / w.sum()
            if len(S) == 1:
                x = Y[S[0]].copy()
                break
    weights = np.zeros(k)
    weights[S] = np.clip(w, 0.0, None) / np.clip(w, 0.0, None).sum()
    return x, weights


def _vertex_quadmin(V: np.ndarray, M: np.ndarray, b: np.ndarray):
    """Exact ``min ½||Mx + b||²`` over ``conv(V)``: the least-norm point of the image hull."""
    r, lam = min_norm_point(V @ M.T + b)
    return lam @ V, 0.5 * float(r @ r)


_VERTEX_QUADMIN_LIMIT = 512


def least_residual(body: BoundedBody, M, b):
    """``(x, Mx + b)`` at an exact minimizer of ``||Mx + b||`` for polytopes with few vertices.

    The residual is returned as computed by the least-norm solver, which is
    more accurate than re-evaluating it at ``x``.  ``None`` for other bodies.
    """
    V = body.vertices
    if V is None or len(V) > _VERTEX_QUADMIN_LIMIT:
        return None
    r, lam = min_norm_point(V @ np.asarray(M, dtype=float).T + np.asarray(b, dtype=float))
    return lam @ V, r


def _feas_tol(body: BoundedBody) -> float:
    return 1e-11 * max(1.0, body.outer_radius)


def _init_ellipsoid(body: BoundedBody) -> Ellipsoid:
    c, rad = body.bounding_ball()
    return Ellipsoid.ball(c, rad * (1.0 + 1e-6) + 1e-9)


def linopt(body: BoundedBody, c, tol: float = DEFAULT_TOL, method: str = "auto"):
    """Maximize ``<c, x>`` over the body; returns ``(point, value)``.

    ``method="ellipsoid"`` forces the cutting-plane path even when a vertex scan
    or closed form exists.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (body.dim,):
        raise DimensionMismatch("objective has the wrong dimension")
    if not np.linalg.norm(c) > 0:
        raise ValueError("objective must be nonzero")
    if method == "auto":
        x = body._linopt(c)
        if x is not None:
            return x, float(c @ x)
    elif method != "ellipsoid":
        raise ValueError(f"unknown method {method!r}")
    feas = _feas_tol(body)
    neg = -c
    res = minimize_convex(lambda z: (float(neg @ z), neg), lambda z: body._cut(z, feas),
                          _init_ellipsoid(body), tol)
    return res.x, -res.value


def support(body: BoundedBody, c, tol: float = DEFAULT_TOL) -> float:
    return linopt(body, c, tol)[1]


def quadmin_run(body: BoundedBody, M, b, tol: float, rtol: float = 0.0,
                stop_if_below: Optional[float] = None,
                stop_if_lb_above: Optional[float] = None, method: str = "auto") -> MinimizeResult:
    """Minimize ``½||Mx + b||²`` with a certified lower bound.

    Polytopes with a short vertex list are solved exactly; other bodies use
    the ellipsoid engine (also forced with ``method="ellipsoid"``).
    """
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if method == "auto":
        V = body.vertices
        if V is not None and len(V) <= _VERTEX_QUADMIN_LIMIT:
            x, val = _vertex_quadmin(V, M, b)
            return MinimizeResult(x, val, val, 0)
    elif method != "ellipsoid":
        raise ValueError(f"unknown method {method!r}")
    MT = M.T

    def fun(x):
        r = M @ x + b
        return 0.5 * float(r @ r), MT @ r

    feas = _feas_tol(body)
    return minimize_convex(fun, lambda z: body._cut(z, feas), _init_ellipsoid(body), tol,
                           rtol=rtol, stop_if_below=stop_if_below, stop_if_lb_above=stop_if_lb_above)


def quadmin(body: BoundedBody, M, b, tol: float = DEFAULT_TOL):
    """Minimize ``½||Mx + b||²`` over the body; returns ``(point, value)``."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.shape != (b.shape[0], body.dim):
        raise DimensionMismatch("M must map the body's space onto b's space")
    if b.shape[0] == body.dim and np.array_equal(M, np.eye(body.dim)):
        x = body._project(-b)
        if x is not None:
            r = x + b
            return x, 0.5 * float(r @ r)
    if not np.any(M):
        x = body.inner_center if body.inner_center is not None else linopt(body, np.ones(body.dim))[0]
        return np.array(x), 0.5 * float(b @ b)
    res = quadmin_run(body, M, b, tol)
    return res.x, res.value


def project(body: BoundedBody, y, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Euclidean projection; exact for shapes with an explicit description."""
    y = _check_point(body, y)
    x = body._project(y)
    if x is not None:
        return x
    ftol = max(0.5 * tol * tol, 1e-15 * (1.0 + float(y @ y)))
    return quadmin_run(body, np.eye(body.dim), -y, ftol).x


# preconditioning ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Preconditioner:
    """``psi(x) = (x - a)/r`` together with the loss transport of the reduction.

    Regret measured on the transformed body is multiplied by ``scale_bound``
    (= 2R) when mapped back.
    """

    map: AffineMap
    inverse: AffineMap
    scale_bound: float

    def to_body(self, x) -> np.ndarray:
        return self.map(x)

    def from_body(self, x) -> np.ndarray:
        return self.inverse(x)

    def transport_loss(self, loss) -> np.ndarray:
        return self.inverse.M.T @ np.asarray(loss, dtype=float) / self.scale_bound

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map.M, np.eye(self.map.dim)) and not np.any(self.map.b))


def precondition(body: BoundedBody):
    """Move the inner ball to the unit ball at the origin."""
    a, r = body.inner_center, body.inner_radius
    if r is None:
        raise UnsupportedBody("body has no inner ball")
    d = body.dim
    psi = AffineMap(np.eye(d) / r, -a / r)
    pre = Preconditioner(psi, psi.inverse(), 2.0 * body.outer_radius)
    if pre.is_identity:
        return pre, body
    image = AffineImage(body, psi, inner_center=np.zeros(d), inner_radius=1.0)
    bound = 2.0 * body.outer_radius / r
    if image.outer_radius > bound:
        image = AffineImage(body, psi, inner_center=np.zeros(d), inner_radius=1.0, outer_radius=bound)
    return pre, image


# sampling and serialization ---------------------------------------------------

def sample_points(body: BoundedBody, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points of the body: interior mixtures and extreme points, not uniform."""
    d = body.dim
    if isinstance(body, Ball):
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return body.center + body.radius * g * rng.random((n, 1)) ** (1.0 / d)
    if isinstance(body, Box):
        return body.lo + (body.hi - body.lo) * rng.random((n, d))
    if isinstance(body, AffineImage):
        return body.psi(sample_points(body.base, n, rng))
    V = body.vertices
    if V is None:
        dirs = rng.standard_normal((2 * d + 4, d))
        V = np.array([linopt(body, u)[0] for u in dirs])
        if body.inner_radius is not None:
            V = np.vstack([V, body.inner_center])
    W = rng.dirichlet(np.full(len(V), 0.5), size=n)
    pts = W @ V
    if isinstance(body, Intersection):
        keep = [p for p in pts if membership(body, p, 1e-9)]
        pts = np.array(keep).reshape(-1, d)
    return pts


def body_to_dict(body: BoundedBody) -> dict:
    return body.to_dict()


def _inner(data):
    inner = data.get("inner")
    if inner is None:
        return {}
    return {"inner_center": np.asarray(inner["center"], dtype=float), "inner_radius": float(inner["radius"])}


def body_from_dict(data: dict) -> BoundedBody:
    try:
        kind = data["shape"]
    except (KeyError, TypeError) as exc:
        raise ValueError("body description needs a 'shape' field") from exc
    if kind == "ball":
        return Ball(data["center"], data["radius"])
    if kind == "box":
        return Box(data["lo"], data["hi"])
    if kind == "simplex":
        return Simplex(data["dim"])
    if kind == "hpolytope":
        rows = data["rows"]
        return HPolytope([r[0] for r in rows], [r[1] for r in rows],
                         outer_radius=data.get("outer_radius"), **_inner(data))
    if kind == "vpolytope":
        return VPolytope(data["vertices"], outer_radius=data.get("outer_radius"), **_inner(data))
    if kind == "capped_ball":
        return CappedBall(data["radius"], data["direction"], data["cap"])
    if kind == "affine_image":
        psi = AffineMap(np.asarray(data["M"], dtype=float), np.asarray(data["b"], dtype=float))
        return AffineImage(body_from_dict(data["base"]), psi,
                           outer_radius=data.get("outer_radius"), **_inner(data))
    if kind == "intersection":
        hs = [Halfspace(np.asarray(r[0], dtype=float), r[1]) for r in data["rows"]]
        return Intersection(body_from_dict(data["base"]), hs,
                            outer_radius=data.get("outer_radius"), **_inner(data))
    raise ValueError(f"unknown shape {kind!r}")
