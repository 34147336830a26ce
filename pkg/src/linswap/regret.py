"""Linear-swap regret: shell gradient descent, shell projection and the main learner.

The learner keeps an affine map ``phi_t`` with a fixed point ``p_t`` and plays
``p_t``.  Since ``phi_t(p_t) = p_t`` the realized loss equals
``<L_t, phi_t>`` with ``L_t = l_t (p_t; 1)^T``, so linear-swap regret equals the
external regret of the map sequence.  That sequence is produced by projected
gradient descent onto shell sets, outer approximations of the endomorphism set
refined by semi-separation cuts.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .affine import AffineMap, flat_dim, outer_flat
from .ellipsoid import Ellipsoid, minimize_convex
from .endo import (
    DEFAULT_FP_TOL,
    EndoBounds,
    Found,
    endo_membership_hrep,
    find_fixed_point,
)
from .errors import FixedPointMissing, QExceededBound, UnsupportedBody
from .geometry import (
    Ball,
    BoundedBody,
    Box,
    Halfspace,
    HPolytope,
    Intersection,
    Simplex,
    _project_constraints,
    precondition,
    project,
)
from .shell import FoundTransform, HalfspaceStack, ShellRegion, shell_ellipsoid

log = logging.getLogger(__name__)


# shell sets and shell gradient descent ----------------------------------------

class ShellSet:
    """A ball in flat map space cut by halfspaces that hold every endomorphism."""

    def __init__(self, radius: float, n: int, center=None, cuts=()):
        self.radius = float(radius)
        self.n = int(n)
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        self.cuts = HalfspaceStack(n, cuts)

    def copy(self) -> "ShellSet":
        out = ShellSet(self.radius, self.n, self.center)
        out.cuts = self.cuts.copy()
        return out

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x - self.center) > self.radius + tol:
            return False
        return self.cuts.most_violated(x, tol) is None

    def project(self, y) -> np.ndarray:
        """Exact Euclidean projection (least-distance program plus a radius search)."""
        y = np.asarray(y, dtype=float)
        return _project_constraints(y, self.cuts.A, self.cuts.h, self.center, self.radius)

    def distance(self, y) -> float:
        return float(np.linalg.norm(np.asarray(y, dtype=float) - self.project(y)))

    def as_body(self) -> Intersection:
        return Intersection(Ball(self.center, self.radius), [c.halfspace if hasattr(c, "halfspace") else c
                                                              for c in self.cuts])


def loss_matrix(p, loss) -> np.ndarray:
    """Flat ``L = l (p; 1)^T``, so that ``<L, phi> = <phi(p), l>``."""
    return outer_flat(loss, p)


def shell_gd_step(x_prev, loss_prev, eta: float, shell: ShellSet, eps: float = 0.0) -> np.ndarray:
    """One projected step onto the current shell (the projection is exact here)."""
    if not eta > 0:
        raise ValueError("step size must be positive")
    return shell.project(np.asarray(x_prev, dtype=float) - eta * np.asarray(loss_prev, dtype=float))


def shell_gd_bound(D: float, etas: Sequence[float], losses: Sequence, eps: float = 0.0) -> float:
    """``D²/(2 eta_T) + sum eta_t ||l_t||² / 2 + eps sum ||l_t||``."""
    etas = np.asarray(etas, dtype=float)
    norms = np.array([np.linalg.norm(l) for l in losses])
    return D * D / (2.0 * etas[-1]) + float(np.sum(etas * norms ** 2)) / 2.0 + eps * float(norms.sum())


# shell projection -------------------------------------------------------------

@dataclass
class ShellProjResult:
    shell: ShellSet
    phi: AffineMap
    fixed_point: np.ndarray
    residual: float
    q: float
    increments: int
    ellipsoid_calls: int
    steps: int = 0


def shell_proj(
    P: BoundedBody,
    base: ShellSet,
    target,
    eps: float,
    fp_tol: float = DEFAULT_FP_TOL,
    D: Optional[float] = None,
    eps_prime: Optional[float] = None,
    trace: Optional[TextIO] = None,
) -> ShellProjResult:
    """Grow a ball around ``target`` until the shell ellipsoid finds a map with a fixed point.

    ``q`` runs over multiples of ``delta = eps·min(eps, 1)/(4D)``, which keeps
    the returned map within ``eps`` (not just ``sqrt(eps)``) of the projection
    onto the returned shell.  Radii whose ball misses the current shell
    entirely are skipped, since the shell ellipsoid could not add any cut
    there; ``increments`` counts the radii actually tried after the first.
    """
    if not 0 < eps:
        raise ValueError("eps must be positive")
    target = np.asarray(target, dtype=float)
    d = P.dim
    if target.shape != (flat_dim(d),):
        raise ValueError("target has the wrong dimension")
    if D is None:
        D = max(base.radius + float(np.linalg.norm(base.center)), float(np.linalg.norm(target)))
    delta = eps * min(eps, 1.0) / (4.0 * D)
    if eps_prime is None:
        eps_prime = delta * P.inner_radius / (8.0 * P.outer_radius * D)
    shell = base.copy()
    k = 0
    calls = 0
    while True:
        q = k * delta
        if q > 2.0 * D + delta:
            raise QExceededBound(f"search radius {q:.6g} passed 2D = {2 * D:.6g}")
        region = ShellRegion(d, [(shell.center, shell.radius), (target, q)], shell.cuts)
        out = shell_ellipsoid(P, region, eps_prime, fp_tol, trace=trace)
        calls += 1
        if isinstance(out, FoundTransform):
            return ShellProjResult(shell, out.phi, out.fixed_point, out.residual, q, calls - 1, calls, k)
        shell.cuts.extend(out.frontier.halfspaces)
        dist = shell.distance(target)
        k = max(k + 1, int(math.ceil(dist / delta - 1e-9)))


# exact evaluation -----------------------------------------------------------------

@dataclass
class RegretReport:
    realized: float
    best_value: float
    linswap_regret: float
    best_map: Optional[AffineMap] = None
    per_round: list = field(default_factory=list)


def _aggregate(history) -> np.ndarray:
    return sum(loss_matrix(p, l) for p, l in history)


def _realized(history) -> float:
    return float(sum(float(np.dot(p, l)) for p, l in history))


def simplex_best_deviation(history, d: int):
    """Closed form over the corner simplex: send each vertex to its best vertex."""
    cols = np.zeros((d + 1, d))
    for p, l in history:
        lam = np.concatenate([[1.0 - float(np.sum(p))], p])
        cols += np.outer(lam, l)
    images = np.zeros((d + 1, d))
    value = 0.0
    for j in range(d + 1):
        k = int(np.argmin(cols[j]))
        if cols[j, k] < 0.0:
            images[j, k] = 1.0
            value += cols[j, k]
    phi = AffineMap((images[1:] - images[0]).T, images[0])
    return value, phi


def _hrep_rows(P: BoundedBody):
    if isinstance(P, HPolytope):
        return P.rows
    if isinstance(P, Simplex):
        A, h = P.hrep()
        return list(zip(A, h))
    if isinstance(P, Box):
        eye = np.eye(P.dim)
        return [(e, hi) for e, hi in zip(eye, P.hi)] + [(-e, -lo) for e, lo in zip(eye, P.lo)]
    raise UnsupportedBody(f"no tractable endomorphism set for {P.kind}")


def hrep_best_deviation(history, P: BoundedBody, tol: float = 1e-8):
    """Minimize ``<sum L_t, phi>`` over the endomorphisms of a polytope with the ellipsoid engine."""
    rows = _hrep_rows(P)
    d = P.dim
    C = _aggregate(history) if history else np.zeros(flat_dim(d))
    if not np.any(C):
        return 0.0, AffineMap.constant(P.inner_center)
    bounds = EndoBounds.of(P)

    def sep(z):
        cut = endo_membership_hrep(rows, P, AffineMap.from_flat(z, d), 1e-10)
        return None if cut is None else cut.halfspace

    res = minimize_convex(lambda z: (float(C @ z), C), sep,
                          Ellipsoid.ball(np.zeros(flat_dim(d)), bounds.outer_radius * 1.01), tol,
                          rtol=1e-10, cap=200000)
    return res.value, AffineMap.from_flat(res.x, d)


def exact_linswap_regret(history, P: BoundedBody, method: str = "auto", tol: float = 1e-8) -> RegretReport:
    """Realized loss minus the best loss of any endomorphism applied in hindsight."""
    history = [(np.asarray(p, dtype=float), np.asarray(l, dtype=float)) for p, l in history]
    realized = _realized(history)
    if method == "auto":
        method = "simplex" if isinstance(P, Simplex) else "hrep"
    if method == "simplex":
        if not isinstance(P, Simplex):
            raise UnsupportedBody("closed form needs the simplex")
        best, phi = simplex_best_deviation(history, P.dim)
    elif method == "hrep":
        best, phi = hrep_best_deviation(history, P, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RegretReport(realized, best, realized - best, phi)


def external_regret(history, P: BoundedBody) -> float:
    """Regret against the best fixed point of the body (constant deviations)."""
    from .geometry import linopt
    total = sum(np.asarray(l, dtype=float) for _, l in history)
    if not np.any(total):
        return _realized(history)
    return _realized(history) + linopt(P, -total)[1]


# learners --------------------------------------------------------------------------

def _clip_loss(loss, d: int) -> np.ndarray:
    loss = np.asarray(loss, dtype=float)
    if loss.shape != (d,):
        raise ValueError(f"loss must have dimension {d}")
    if np.any(np.abs(loss) > 1.0):
        warnings.warn("loss entries outside [-1, 1] were clipped", RuntimeWarning, stacklevel=3)
        loss = np.clip(loss, -1.0, 1.0)
    return loss


@dataclass
class LearnerConstants:
    R_phi: float
    beta: float
    eps: float
    G: float
    eps_prime: float
    isotropic: bool


class LinSwapLearner:
    """Linear-swap regret minimizer over a well-bounded body.

    The body is first moved so that its inner ball is the unit ball at the
    origin; points are reported and losses accepted in original coordinates.
    The first map is the identity, or the constant map to ``start`` if given.
    ``eps_floor`` and ``eps_prime_floor`` keep the projection precision within
    reach of double precision (the theoretical values are far below it).
    """

    def __init__(self, P: BoundedBody, T: int, fp_tol: float = 1e-7, eps: Optional[float] = None,
                 eps_floor: float = 1e-3, eps_prime_floor: float = 1e-9, beta: Optional[float] = None,
                 trace: Optional[TextIO] = None, start=None):
        if T < 1:
            raise ValueError("T must be at least 1")
        self.original = P
        self.pre, self.body = precondition(P)
        self.T = int(T)
        self.fp_tol = fp_tol
        self.trace = trace
        d = P.dim
        self.d = d
        Rp = self.body.outer_radius
        isotropic = d >= 2 and Rp <= d + 1 + 1e-9
        if isotropic:
            R_phi = 4.0 * d * d
            G = 2.0 * d ** 1.5
            theory_eps = 1.0 / (16.0 * d ** 4 * T * T)
            default_beta = 4.0 / math.sqrt(T)
        else:
            R_phi = EndoBounds.of(self.body).outer_radius
            G = math.sqrt(d) * (Rp + 1.0)
            theory_eps = 1.0 / (4.0 * G * G * d * T * T)
            default_beta = R_phi / (G * math.sqrt(T))
        eps_val = max(theory_eps, eps_floor) if eps is None else eps
        D = R_phi
        delta = eps_val * min(eps_val, 1.0) / (4.0 * D)
        eps_prime = max(delta * self.body.inner_radius / (8.0 * Rp * D), eps_prime_floor)
        self.constants = LearnerConstants(R_phi, default_beta if beta is None else beta, eps_val, G,
                                          eps_prime, isotropic)
        log.info("learner constants: R_phi=%.4g beta=%.4g eps=%.3g eps'=%.3g (r'=%.4g, R'=%.4g)",
                 R_phi, self.constants.beta, eps_val, eps_prime, self.body.inner_radius, Rp)
        self.t = 1
        if start is None:
            self.phi = AffineMap.identity(d)
            self.p = np.zeros(d)  # fixed point of the identity: the inner center
        else:
            self.p = self.pre.to_body(np.asarray(start, dtype=float))
            self.phi = AffineMap.constant(self.p)
        self.history = []
        self.stats = []
        self._loss_sq = 0.0
        self._loss_abs = 0.0

    def regret_bound(self) -> float:
        """Shell gradient descent bound for the rounds so far, in original loss units."""
        c = self.constants
        body_units = (c.R_phi ** 2 / (2.0 * c.beta) + 0.5 * c.beta * self._loss_sq
                      + c.eps * self._loss_abs)
        return self.pre.scale_bound * body_units

    def base_shell(self) -> ShellSet:
        return ShellSet(self.constants.R_phi, flat_dim(self.d))

    def next(self) -> np.ndarray:
        return self.pre.from_body(self.p)

    def observe(self, loss) -> None:
        loss = _clip_loss(loss, self.d)
        self.history.append((self.next(), loss))
        lp = self.pre.transport_loss(loss)
        L = loss_matrix(self.p, lp)
        nl = float(np.linalg.norm(L))
        self._loss_sq += nl * nl
        self._loss_abs += nl
        target = self.phi.flat() - self.constants.beta * L
        res = shell_proj(self.body, self.base_shell(), target, self.constants.eps, fp_tol=self.fp_tol,
                         eps_prime=self.constants.eps_prime, trace=self.trace)
        self.stats.append((res.increments, res.ellipsoid_calls, len(res.shell.cuts)))
        fp = res.fixed_point
        if fp is None or res.residual > self.fp_tol:
            found = find_fixed_point(self.body, res.phi, self.fp_tol)
            if not isinstance(found, Found):
                raise FixedPointMissing(f"map returned by the shell projection has no fixed point "
                                        f"(residual {found.min_residual:.3e})")
            fp = found.point
        self.phi = res.phi
        self.p = np.asarray(fp, dtype=float)
        self.t += 1


class DoublingLearner:
    """Unknown horizon: restart with twice the horizon whenever it runs out."""

    def __init__(self, P: BoundedBody, factory: Callable = LinSwapLearner, T0: int = 1, **kw):
        self.P, self.factory, self.kw = P, factory, kw
        self.horizon = T0
        self.inner = factory(P, T0, **kw)
        self.used = 0
        self.history = []

    def next(self) -> np.ndarray:
        return self.inner.next()

    def observe(self, loss) -> None:
        self.history.append((self.next(), np.asarray(loss, dtype=float)))
        self.inner.observe(loss)
        self.used += 1
        if self.used >= self.horizon:
            self.horizon *= 2
            self.inner = self.factory(self.P, self.horizon, **self.kw)
            self.used = 0


class OGDLearner:
    """Projected online gradient descent on the body (external regret only)."""

    def __init__(self, P: BoundedBody, T: int, eta: Optional[float] = None):
        self.P = P
        d = P.dim
        diam = 2.0 * P.outer_radius
        self.eta = diam / math.sqrt(d * T) if eta is None else eta
        self.x = np.array(P.inner_center, dtype=float)
        self.history = []

    def next(self) -> np.ndarray:
        return self.x.copy()

    def observe(self, loss) -> None:
        loss = _clip_loss(loss, self.P.dim)
        self.history.append((self.x.copy(), loss))
        self.x = project(self.P, self.x - self.eta * loss)


def external_ogd_baseline(P: BoundedBody, T: int, eta: Optional[float] = None) -> OGDLearner:
    return OGDLearner(P, T, eta)


# adversaries and runs ----------------------------------------------------------------

class Adversary:
    """Loss sequences in [-1, 1]^d: ``uniform``, ``constant`` or ``adaptive-worst-column``."""

    kinds = ("uniform", "constant", "adaptive-worst-column")

    def __init__(self, kind: str, d: int, rng: np.random.Generator, loss=None):
        if kind not in self.kinds:
            raise ValueError(f"unknown adversary {kind!r}")
        self.kind, self.d, self.rng = kind, d, rng
        if kind == "constant":
            self.fixed = rng.uniform(-1.0, 1.0, d) if loss is None else np.asarray(loss, dtype=float)

    def __call__(self, t: int, p: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return self.rng.uniform(-1.0, 1.0, self.d)
        if self.kind == "constant":
            return self.fixed.copy()
        # punish the action the learner leans on most, reward the others
        lam = np.concatenate([[1.0 - float(np.sum(p))], p])
        k = int(np.argmax(lam))
        loss = -np.ones(self.d)
        if k > 0:
            loss[k - 1] = 1.0
        return loss


def run_learner(learner, adversary: Adversary, T: int, P: BoundedBody,
                callback: Optional[Callable] = None) -> list:
    """Play ``T`` rounds and return rows ``(t, p, loss, realized, running regret)``."""
    rows = []
    cols = np.zeros((P.dim + 1, P.dim)) if isinstance(P, Simplex) else None
    realized = 0.0
    for t in range(1, T + 1):
        p = learner.next()
        loss = adversary(t, p)
        learner.observe(loss)
        step = float(p @ loss)
        realized += step
        if cols is not None:
            lam = np.concatenate([[1.0 - float(np.sum(p))], p])
            cols += np.outer(lam, loss)
            best = float(np.sum(np.minimum(cols.min(axis=1), 0.0)))
            running = realized - best
        else:
            running = float("nan")
        rows.append((t, p, loss, step, running))
        if callback is not None:
            callback(t)
    return rows


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_history_csv(rows, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "p_t", "loss_t", "realized_loss", "running_regret_estimate"])
    for t, p, loss, step, running in rows:
        w.writerow([t, ";".join(_fmt(v) for v in p), ";".join(_fmt(v) for v in loss),
                    _fmt(step), _fmt(running)])
