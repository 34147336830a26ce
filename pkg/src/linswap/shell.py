"""Shell ellipsoid: find a map with a fixed point in a region, or cut the region away.

Runs the central-cut loop over a region ``F`` of flat map space described by
balls and halfspaces.  Centers outside ``F`` are cut with ``F``'s own
description; centers inside are handed to the semi-separation oracle, which
either reports a fixed point (done) or a cut holding every endomorphism.  Only
the latter cuts form the returned frontier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO, Union

import numpy as np

from .affine import AffineMap, flat_dim
from .ellipsoid import Ellipsoid, Found, feasibility_engine, log_ball_volume
from .endo import DEFAULT_FP_TOL, FixedPoint, TransformHalfspace, semi_separate
from .geometry import BoundedBody, Halfspace


class HalfspaceStack:
    """Append-only list of halfspaces with a matrix view for fast checks."""

    def __init__(self, n: int, items: Sequence = ()):
        self.n = n
        self.items = []
        self._A = np.zeros((16, n))
        self._h = np.zeros(16)
        for it in items:
            self.append(it)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def append(self, item) -> None:
        k = len(self.items)
        if k == self._A.shape[0]:
            self._A = np.vstack([self._A, np.zeros_like(self._A)])
            self._h = np.concatenate([self._h, np.zeros_like(self._h)])
        self._A[k] = item.normal
        self._h[k] = item.offset
        self.items.append(item)

    def extend(self, items) -> None:
        for it in items:
            self.append(it)

    @property
    def A(self) -> np.ndarray:
        return self._A[: len(self.items)]

    @property
    def h(self) -> np.ndarray:
        return self._h[: len(self.items)]

    def most_violated(self, z: np.ndarray, tol: float = 0.0):
        k = len(self.items)
        if k == 0:
            return None
        v = self._A[:k] @ z - self._h[:k]
        i = int(np.argmax(v))
        return self.items[i] if v[i] > tol else None

    def copy(self) -> "HalfspaceStack":
        return HalfspaceStack(self.n, self.items)


@dataclass
class ShellRegion:
    """``∩ B(center_i, radius_i) ∩ {cuts}`` in flat map space of ``R^d``."""

    d: int
    balls: list
    cuts: HalfspaceStack

    def violated(self, z: np.ndarray, tol: float = 0.0):
        for c, rad in self.balls:
            diff = z - c
            nrm = math.sqrt(float(diff @ diff))
            if nrm > rad + tol:
                u = diff / nrm
                return Halfspace(u, float(u @ c) + rad)
        return self.cuts.most_violated(z, tol)

    def smallest_ball(self):
        return min(self.balls, key=lambda cb: cb[1])


@dataclass
class Frontier:
    halfspaces: list
    cap: int


@dataclass
class FoundTransform:
    phi: AffineMap
    fixed_point: np.ndarray
    residual: float
    iterations: int


@dataclass
class Separated:
    frontier: Frontier
    iterations: int


ShellOutcome = Union[FoundTransform, Separated]


def default_shell_cap(n: int, radius: float, eps: float) -> int:
    return int(math.ceil(4.0 * (n + 1) * n * math.log(max(2.0 * radius / eps, math.e)))) + 16


def shell_ellipsoid(
    P: BoundedBody,
    region: ShellRegion,
    eps: float,
    fp_tol: float = DEFAULT_FP_TOL,
    cap: Optional[int] = None,
    trace: Optional[TextIO] = None,
    verify_volume: bool = False,
) -> ShellOutcome:
    """Search ``region`` for a map with a fixed point in ``P`` down to volume ``V_n(eps)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = flat_dim(P.dim)
    center, radius = region.smallest_ball()
    frontier = []

    def found(z, fp):
        return FoundTransform(AffineMap.from_flat(z, P.dim), fp.point, fp.residual, 0)

    if radius <= 0.0:
        z = np.asarray(center, dtype=float)
        if region.violated(z) is not None:
            return Separated(Frontier([], 1), 0)
        out = semi_separate(P, AffineMap.from_flat(z, P.dim), fp_tol)
        if isinstance(out, FixedPoint):
            return found(z, out)
        return Separated(Frontier([out], 1), 1)

    if cap is None:
        cap = default_shell_cap(n, radius, eps)
    hits = {}

    def sep(z):
        h = region.violated(z)
        if h is not None:
            return h
        out = semi_separate(P, AffineMap.from_flat(z, P.dim), fp_tol)
        if isinstance(out, FixedPoint):
            hits["fp"] = out
            return None
        frontier.append(out)
        return out

    def kind(h):
        return "semi_separation" if isinstance(h, TransformHalfspace) else "region"

    res = feasibility_engine(sep, Ellipsoid.ball(center, radius), log_ball_volume(n, eps), cap,
                             trace=trace, verify_volume=verify_volume, cut_kind=kind)
    if isinstance(res, Found):
        out = found(res.point, hits["fp"])
        out.iterations = res.iterations
        return out
    return Separated(Frontier(frontier, cap), res.iterations)
