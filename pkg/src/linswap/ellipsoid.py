"""Ellipsoid engine (central and deep cuts).

Everything here works on plain arrays: a cut is any object exposing ``normal``
and ``offset`` (the halfspace ``{x : <normal, x> <= offset}``).  The engine is
shared by the geometry oracles (linear and quadratic minimization), the shell
ellipsoid procedure and the Ellipsoid-Against-Hope solver.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO, Union

import numpy as np

from .errors import IterationCapExceeded, NumericalStall, ShapeDegenerate

_COLLAPSE = 1e-300


def log_unit_ball_volume(n: int) -> float:
    """log of the volume of the unit ball in R^n."""
    return 0.5 * n * math.log(math.pi) - math.lgamma(0.5 * n + 1.0)


def log_ball_volume(n: int, radius: float) -> float:
    return log_unit_ball_volume(n) + n * math.log(radius)


def cut_log_ratio(n: int) -> float:
    """Exact log volume ratio of one central cut in R^n."""
    if n == 1:
        return math.log(0.5)
    return math.log(n / (n + 1.0)) + 0.5 * (n - 1) * math.log(n * n / (n * n - 1.0))


def deep_cut_log_ratio(n: int, depth: float) -> float:
    """Log volume ratio of a cut reaching ``depth`` (in units of the half-width) past the center."""
    if depth <= 0.0:
        return cut_log_ratio(n)
    if n == 1:
        return math.log(0.5 * (1.0 - depth))
    return (0.5 * n * math.log(n * n * (1.0 - depth * depth) / (n * n - 1.0))
            + 0.5 * math.log((n - 1.0) * (1.0 - depth) / ((n + 1.0) * (1.0 + depth))))


def guaranteed_drop(n: int) -> float:
    """The textbook lower bound 1/(2(n+1)) on the log-volume drop of a central cut."""
    return 1.0 / (2.0 * (n + 1))


@dataclass
class Ellipsoid:
    """``{x : (x - center)^T shape^{-1} (x - center) <= 1}``."""

    center: np.ndarray
    shape: np.ndarray
    log_volume: float = field(default=float("nan"))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.shape = np.asarray(self.shape, dtype=float)
        if math.isnan(self.log_volume):
            sign, logdet = np.linalg.slogdet(self.shape)
            if sign <= 0:
                raise ShapeDegenerate("shape matrix is not positive definite")
            self.log_volume = log_unit_ball_volume(self.dim) + 0.5 * logdet

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        center = np.asarray(center, dtype=float)
        n = center.shape[0]
        return cls(center.copy(), np.eye(n) * radius * radius, log_ball_volume(n, radius))

    def contains(self, x, tol: float = 0.0) -> bool:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ np.linalg.solve(self.shape, d)) <= 1.0 + tol

    def width(self, direction) -> float:
        """Half-width of the ellipsoid along ``direction`` (support minus center)."""
        c = np.asarray(direction, dtype=float)
        return math.sqrt(max(float(c @ self.shape @ c), 0.0))


def central_cut(E: Ellipsoid, h, tol: float = 1e-9) -> Ellipsoid:
    """Minimum-volume ellipsoid containing ``E ∩ {x : <c, x> <= <c, center>}``.

    ``h`` must pass through or exclude the center; only its normal is used.
    """
    c = np.asarray(h.normal, dtype=float)
    if float(c @ E.center) < h.offset - tol * max(1.0, abs(h.offset)):
        raise ValueError("halfspace does not pass through or exclude the center")
    n = E.dim
    Qc = E.shape @ c
    s = float(c @ Qc)
    if s <= _COLLAPSE:
        raise ShapeDegenerate(f"c^T Q c = {s:.3e}")
    g = Qc / math.sqrt(s)
    center = E.center - g / (n + 1.0)
    if n == 1:
        shape = E.shape / 4.0
    else:
        shape = (n * n / (n * n - 1.0)) * (E.shape - (2.0 / (n + 1.0)) * np.outer(g, g))
        shape = 0.5 * (shape + shape.T)
    return Ellipsoid(center, shape, E.log_volume + cut_log_ratio(n))


class _Cutter:
    """In-place cut state used by the loops below."""

    __slots__ = ("n", "z", "Q", "log_volume", "_shrink", "_step", "_a", "_ratio",
                 "verify", "_logdet", "cuts_made")

    def __init__(self, E: Ellipsoid, verify: bool = False):
        self.n = E.dim
        self.z = E.center.copy()
        self.Q = E.shape.copy()
        self.log_volume = E.log_volume
        n = self.n
        self._step = 1.0 / (n + 1.0)
        self._shrink = 0.25 if n == 1 else n * n / (n * n - 1.0)
        self._a = 0.0 if n == 1 else 2.0 / (n + 1.0)
        self._ratio = cut_log_ratio(n)
        self.verify = verify
        self._logdet = np.linalg.slogdet(self.Q)[1] if verify else 0.0
        self.cuts_made = 0

    def cut(self, c: np.ndarray, depth: float = 0.0) -> None:
        """Cut with ``<c, x> <= <c, z> - depth * ||c||_Q`` (``0 <= depth < 1``)."""
        Qc = self.Q @ c
        s = float(c @ Qc)
        if not s > _COLLAPSE:
            raise ShapeDegenerate(f"c^T Q c = {s:.3e}")
        g = Qc * (1.0 / math.sqrt(s))
        n = self.n
        if depth <= 0.0:
            step, a, shrink, ratio = self._step, self._a, self._shrink, self._ratio
        else:
            step = (1.0 + n * depth) / (n + 1.0)
            if n == 1:
                a, shrink = 0.0, 0.25 * (1.0 - depth) ** 2
            else:
                a = 2.0 * (1.0 + n * depth) / ((n + 1.0) * (1.0 + depth))
                shrink = n * n * (1.0 - depth * depth) / (n * n - 1.0)
            ratio = deep_cut_log_ratio(n, depth)
        self.z -= step * g
        if n == 1:
            self.Q *= shrink
        else:
            Q = self.Q
            Q -= a * np.outer(g, g)
            Q *= shrink
            Q += Q.T
            Q *= 0.5
        self.log_volume += ratio
        self.cuts_made += 1
        if self.verify:
            sign, logdet = np.linalg.slogdet(self.Q)
            if sign <= 0:
                raise ShapeDegenerate("shape matrix lost positive definiteness")
            drop = 0.5 * (self._logdet - logdet)
            if drop < guaranteed_drop(self.n) - 1e-9:
                raise AssertionError(f"log-volume drop {drop:.3e} below the central-cut bound")
            self._logdet = logdet
        elif self.cuts_made % 256 == 0:
            self.check()

    def check(self) -> None:
        try:
            np.linalg.cholesky(self.Q)
        except np.linalg.LinAlgError as exc:
            raise ShapeDegenerate("Cholesky factorization failed") from exc

    def norm_q(self, c: np.ndarray) -> float:
        return math.sqrt(max(float(c @ self.Q @ c), 0.0))

    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(self.z.copy(), self.Q.copy(), self.log_volume)


@dataclass
class Found:
    point: np.ndarray
    iterations: int
    ellipsoid: Ellipsoid


@dataclass
class Infeasible:
    cuts: list
    iterations: int
    ellipsoid: Ellipsoid


SepResult = Optional[object]


def _unit(h):
    c = np.asarray(h.normal, dtype=float)
    return c, math.sqrt(float(c @ c))


def default_cap(n: int, log_ratio: float) -> int:
    """Iteration cap: twice the volume-shrink count needed to cover ``log_ratio``."""
    return int(math.ceil(4.0 * (n + 1) * max(log_ratio, 1.0))) + 16


def feasibility_engine(
    sep: Callable[[np.ndarray], SepResult],
    init: Ellipsoid,
    log_volume_floor: float,
    cap: int,
    trace: Optional[TextIO] = None,
    verify_volume: bool = False,
    cut_kind: Optional[Callable[[object], str]] = None,
    deep: bool = True,
) -> Union[Found, Infeasible]:
    """Run ellipsoid cuts until ``sep`` reports the center inside or the volume is exhausted.

    ``sep(z)`` returns ``None`` when ``z`` is acceptable, otherwise a halfspace
    containing the target set and (weakly) excluding ``z``.  A halfspace with a
    zero normal and negative offset declares the target empty.

    With ``deep`` the cut uses the halfspace's offset when it excludes the
    center by a margin, shrinking more than a central cut would.  The volume
    floor is a log-volume so that high-dimensional runs do not
    underflow.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    state = _Cutter(init, verify=verify_volume)
    cuts = []
    for it in range(cap):
        if state.log_volume < log_volume_floor:
            return Infeasible(cuts, it, state.ellipsoid())
        h = sep(state.z)
        if h is None:
            return Found(state.z.copy(), it, state.ellipsoid())
        c, nrm = _unit(h)
        cuts.append(h)
        if nrm == 0.0:
            if h.offset < 0.0:
                return Infeasible(cuts, it + 1, state.ellipsoid())
            raise ValueError("cut with a zero normal must have a negative offset")
        c = c / nrm
        depth = 0.0
        if deep:
            w = state.norm_q(c)
            depth = (float(c @ state.z) - h.offset / nrm) / w if w > 0.0 else 0.0
            if depth >= 1.0:
                # the halfspace misses the ellipsoid's interior
                return Infeasible(cuts, it + 1, Ellipsoid(state.z.copy(), state.Q.copy(), -math.inf))
            depth = min(max(depth, 0.0), 1.0 - 1e-12)
        before = state.log_volume
        try:
            state.cut(c, depth)
        except ShapeDegenerate:
            if verify_volume:
                raise
            # flattened below machine precision: the remaining volume is numerically zero
            return Infeasible(cuts, it + 1, Ellipsoid(state.z.copy(), state.Q.copy(), -math.inf))
        if trace is not None:
            kind = cut_kind(h) if cut_kind is not None else "cut"
            trace.write(json.dumps({"iter": it, "log_volume": state.log_volume,
                                    "drop": before - state.log_volume, "cut_kind": kind}) + "\n")
    if state.log_volume < log_volume_floor:
        return Infeasible(cuts, cap, state.ellipsoid())
    raise IterationCapExceeded(f"no decision after {cap} iterations")


def _cut_or_collapse(state: _Cutter, c: np.ndarray, best_x) -> bool:
    """Cut, or report False once the ellipsoid is flat to machine precision.

    A collapse after a feasible center was seen means the remaining region is
    numerically a point, so the search ends with the best center found.
    """
    try:
        state.cut(c)
        return True
    except ShapeDegenerate:
        if best_x is None:
            raise NumericalStall("ellipsoid collapsed before reaching the feasible region")
        return False


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    lower_bound: float
    iterations: int


def minimize_convex(
    fun: Callable[[np.ndarray], tuple],
    sep: Callable[[np.ndarray], SepResult],
    init: Ellipsoid,
    tol: float,
    rtol: float = 0.0,
    cap: Optional[int] = None,
    stop_if_below: Optional[float] = None,
    stop_if_lb_above: Optional[float] = None,
) -> MinimizeResult:
    """Minimize a convex function over the set described by ``sep``.

    ``fun(x)`` returns ``(value, subgradient)``.  Centers accepted by ``sep``
    get an objective cut; the others get the feasibility cut returned by
    ``sep``.  Every objective cut also yields the lower bound
    ``f(z) - ||g||_Q`` on the optimum (the optimum stays inside the ellipsoid),
    so the loop stops with a certified gap ``best - lb <= max(tol, rtol*|best|)``.
    """
    n = init.dim
    state = _Cutter(init)
    if cap is None:
        cap = 400 * n * (n + 1) + 2000
    best_x = None
    best_f = math.inf
    lb = -math.inf
    for it in range(cap):
        h = sep(state.z)
        if h is not None:
            c, nrm = _unit(h)
            if nrm == 0.0:
                raise NumericalStall("feasible region reported empty")
            if not _cut_or_collapse(state, c / nrm, best_x):
                break
            continue
        f, g = fun(state.z)
        if f < best_f:
            best_f = f
            best_x = state.z.copy()
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            lb = max(lb, f)
        else:
            lb = max(lb, f - state.norm_q(g))
        if stop_if_below is not None and best_f <= stop_if_below:
            break
        if stop_if_lb_above is not None and lb > stop_if_lb_above:
            break
        if best_f - lb <= max(tol, rtol * abs(best_f)):
            break
        if gn == 0.0:
            break
        if not _cut_or_collapse(state, g / gn, best_x):
            break
    else:
        raise NumericalStall(
            f"minimization stalled after {cap} iterations (gap {best_f - lb:.3e})")
    return MinimizeResult(best_x, best_f, lb, state.cuts_made)
