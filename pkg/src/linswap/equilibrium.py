"""Linear correlated equilibria through Ellipsoid Against Hope.

A Correlator picks a distribution over strategy profiles, a Deviator picks one
affine endomorphism per player; the Correlator's payoff is the total gain the
Deviator forgoes.  The ellipsoid method runs on the Deviator's (infeasible)
side, every step either cutting with a good-enough response (a product of
fixed points) or with a semi-separation halfspace.  A small linear program
then mixes the good-enough responses into an approximate equilibrium.

Utilities are multilinear in the augmented strategies ``(1, p_i)``, and the
only access to them is the gradient oracle ``g_i(x_{-i})`` with
``u_i(x) = <g_i(x_{-i}), (1, x_i)>``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, TextIO, Union

import numpy as np
from scipy.optimize import linprog

from .affine import AffineMap, flat_dim, outer_flat
from .ellipsoid import Ellipsoid, Infeasible, feasibility_engine, log_ball_volume
from .endo import DEFAULT_FP_TOL, EndoBounds, FixedPoint, semi_separate
from .errors import CompressedPrimalInfeasible, ConfigError, DimensionMismatch, UnsupportedBody
from .geometry import BoundedBody, Halfspace, Simplex, body_from_dict, body_to_dict, membership
from .regret import (
    LinSwapLearner,
    OGDLearner,
    RegretReport,
    exact_linswap_regret,
    hrep_best_deviation,
    simplex_best_deviation,
)

log = logging.getLogger(__name__)


# games ----------------------------------------------------------------------

class ConvexGame:
    """An n-player game with multilinear utilities known through gradients.

    ``gradient_oracle(i, profile)`` returns ``g_i`` in ``R^{d_i + 1}`` for the
    profile's opponents (``profile[i]`` is ignored).  The oracle must be pure.
    """

    def __init__(self, bodies: Sequence[BoundedBody], gradient_oracle: Callable,
                 utility_oracle: Optional[Callable] = None):
        if len(bodies) < 1:
            raise ValueError("a game needs at least one player")
        self.bodies = list(bodies)
        self._gradient = gradient_oracle
        self._utility = utility_oracle

    @property
    def players(self) -> int:
        return len(self.bodies)

    @property
    def dims(self) -> List[int]:
        return [b.dim for b in self.bodies]

    @property
    def N(self) -> int:
        return 1 + sum(flat_dim(d) for d in self.dims)

    def gradient(self, i: int, profile) -> np.ndarray:
        g = np.asarray(self._gradient(i, profile), dtype=float)
        if g.shape != (self.bodies[i].dim + 1,):
            raise DimensionMismatch(f"gradient of player {i} has shape {g.shape}")
        return g

    def utility(self, profile) -> np.ndarray:
        if self._utility is not None:
            return np.asarray(self._utility(profile), dtype=float)
        return np.array([self.gradient(i, profile) @ np.append(1.0, profile[i])
                         for i in range(self.players)])

    def validate(self, rng: np.random.Generator, samples: int = 20, tol: float = 1e-6) -> None:
        """Spot-check bounded utilities and gradient/utility consistency on random profiles."""
        from .geometry import sample_points
        for _ in range(samples):
            prof = [sample_points(b, 1, rng)[0] for b in self.bodies]
            u = self.utility(prof)
            if np.any(np.abs(u) > 1.0 + 1e-9):
                raise ConfigError(f"utilities {u} leave [-1, 1]")
            for i in range(self.players):
                g = self.gradient(i, prof)
                if abs(g @ np.append(1.0, prof[i]) - u[i]) > tol:
                    raise ConfigError(f"gradient of player {i} disagrees with its utility")

    def to_dict(self) -> dict:
        raise UnsupportedBody("only tabular games serialize")


class NormalFormGame(ConvexGame):
    """Finite game; player i's mixed strategy lives in the corner simplex of dimension A_i - 1.

    A point ``p`` stands for the distribution ``(1 - sum p, p)`` over actions.
    """

    def __init__(self, tensors: Sequence):
        T = [np.asarray(t, dtype=float) for t in tensors]
        n = len(T)
        shape = T[0].shape
        if len(shape) != n or any(t.shape != shape for t in T):
            raise DimensionMismatch("need one payoff tensor per player, all of the same shape")
        if any(a < 2 for a in shape):
            raise ConfigError("every player needs at least two actions")
        self.tensors = T
        self.actions = shape
        super().__init__([Simplex(a - 1) for a in shape], self._grad)

    @staticmethod
    def mixed(p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.concatenate([[1.0 - p.sum()], p])

    def action_values(self, i: int, profile) -> np.ndarray:
        """Expected payoff of each of player i's actions against the others' mixed strategies."""
        U = self.tensors[i]
        for j in reversed(range(self.players)):
            if j != i:
                U = np.tensordot(U, self.mixed(profile[j]), axes=([j], [0]))
        return U

    def _grad(self, i, profile):
        v = self.action_values(i, profile)
        return np.concatenate([[v[0]], v[1:] - v[0]])

    def to_dict(self) -> dict:
        return {"players": self.players, "bodies": [body_to_dict(b) for b in self.bodies],
                "utilities": {"kind": "normal_form", "tensors": [t.tolist() for t in self.tensors]}}


class PolymatrixGame(ConvexGame):
    """Sum of pairwise games: ``u_i(s) = sum over pairs (i, j) of matrix[s_i, s_j]``."""

    def __init__(self, actions: Sequence[int], pairs: Sequence[dict]):
        self.actions = tuple(int(a) for a in actions)
        self.pairs = []
        for pr in pairs:
            i, j = int(pr["i"]), int(pr["j"])
            Mx = np.asarray(pr["matrix"], dtype=float)
            if i == j or Mx.shape != (self.actions[i], self.actions[j]):
                raise DimensionMismatch(f"pair ({i}, {j}) has a matrix of shape {Mx.shape}")
            self.pairs.append((i, j, Mx))
        super().__init__([Simplex(a - 1) for a in self.actions], self._grad)

    def _grad(self, i, profile):
        v = np.zeros(self.actions[i])
        for a, b, Mx in self.pairs:
            if a == i:
                v += Mx @ NormalFormGame.mixed(profile[b])
        return np.concatenate([[v[0]], v[1:] - v[0]])

    def to_dict(self) -> dict:
        return {"players": self.players, "bodies": [body_to_dict(b) for b in self.bodies],
                "utilities": {"kind": "polymatrix",
                              "pairs": [{"i": i, "j": j, "matrix": M.tolist()} for i, j, M in self.pairs]}}


def game_from_dict(data: dict) -> ConvexGame:
    try:
        util = data["utilities"]
        kind = util["kind"]
        if kind == "normal_form":
            game = NormalFormGame(util["tensors"])
        elif kind == "polymatrix":
            bodies = [body_from_dict(b) for b in data["bodies"]]
            game = PolymatrixGame([b.dim + 1 for b in bodies], util["pairs"])
        else:
            raise ConfigError(f"unknown utility kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed game: {exc}") from exc
    if "players" in data and int(data["players"]) != game.players:
        raise ConfigError("player count does not match the utilities")
    if "bodies" in data:
        dims = [body_from_dict(b).dim for b in data["bodies"]]
        if dims != game.dims:
            raise ConfigError(f"bodies of dimensions {dims} do not match the utilities {game.dims}")
    return game


def matching_pennies() -> NormalFormGame:
    A = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return NormalFormGame([A, -A])


def rock_paper_scissors() -> NormalFormGame:
    A = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
    return NormalFormGame([A, -A])


def coordination() -> NormalFormGame:
    A = np.eye(2)
    return NormalFormGame([A, A])


def random_normal_form(actions: Sequence[int], rng: np.random.Generator) -> NormalFormGame:
    shape = tuple(actions)
    return NormalFormGame([rng.uniform(-1.0, 1.0, shape) for _ in shape])


# deviations and the correlator's payoff -------------------------------------------

@dataclass(frozen=True, eq=False)
class DeviationProfile:
    """``(1, phi_1, ..., phi_n)`` flattened into ``R^N``."""

    maps: tuple

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "DeviationProfile":
        return cls(tuple(AffineMap.identity(d) for d in dims))

    @classmethod
    def from_vector(cls, y, dims: Sequence[int]) -> "DeviationProfile":
        y = np.asarray(y, dtype=float)
        if y.shape != (1 + sum(flat_dim(d) for d in dims),):
            raise DimensionMismatch("vector length does not match the player dimensions")
        maps, k = [], 1
        for d in dims:
            maps.append(AffineMap.from_flat(y[k:k + flat_dim(d)], d))
            k += flat_dim(d)
        return cls(tuple(maps))

    def vector(self) -> np.ndarray:
        return np.concatenate([[1.0]] + [m.flat() for m in self.maps])


def _blocks(dims):
    out, k = [], 1
    for d in dims:
        out.append(slice(k, k + flat_dim(d)))
        k += flat_dim(d)
    return out


def ger_row(game: ConvexGame, profile) -> np.ndarray:
    """``x^T A`` for the product profile ``x``: ``<row, y>`` is the correlator's payoff."""
    row = np.zeros(game.N)
    for i, sl in enumerate(_blocks(game.dims)):
        x = np.asarray(profile[i], dtype=float)
        g = game.gradient(i, profile)[1:]
        row[0] += g @ x
        row[sl] = -outer_flat(g, x)
    return row


def correlator_value(profile, y: Union[DeviationProfile, np.ndarray], game: ConvexGame) -> float:
    """Total expected gain the deviations in ``y`` forgo at the product profile."""
    if isinstance(y, DeviationProfile):
        if [m.dim for m in y.maps] != game.dims:
            raise DimensionMismatch("deviation profile does not match the game")
        total = 0.0
        for i, phi in enumerate(y.maps):
            x = np.asarray(profile[i], dtype=float)
            g = game.gradient(i, profile)[1:]
            total += float(g @ (x - phi(x)))
        return total
    y = np.asarray(y, dtype=float)
    if y.shape != (game.N,):
        raise DimensionMismatch("deviation vector has the wrong length")
    return float(ger_row(game, profile) @ y)


@dataclass
class Ger:
    profile: list
    row: np.ndarray


@dataclass
class Sep:
    halfspace: Halfspace
    player: Optional[int] = None


GerOrSep = Union[Ger, Sep]


def cd_oracle(game: ConvexGame, y, fp_tol: float = DEFAULT_FP_TOL, lead_tol: float = 1e-12) -> GerOrSep:
    """Good-enough response (product of fixed points) or a cut separating ``y`` from the deviations."""
    y = np.asarray(y, dtype=float)
    if y.shape != (game.N,):
        raise DimensionMismatch("deviation vector has the wrong length")
    if abs(y[0] - 1.0) > lead_tol:
        e = np.zeros(game.N)
        e[0] = 1.0 if y[0] > 1.0 else -1.0
        return Sep(Halfspace(e, e[0]))
    profile = []
    for i, (P, sl) in enumerate(zip(game.bodies, _blocks(game.dims))):
        out = semi_separate(P, AffineMap.from_flat(y[sl], P.dim), fp_tol)
        if not isinstance(out, FixedPoint):
            normal = np.zeros(game.N)
            normal[sl] = out.normal
            return Sep(Halfspace(normal, out.offset), i)
        profile.append(out.point)
    return Ger(profile, ger_row(game, profile))


# Ellipsoid Against Hope -----------------------------------------------------------

def eah_iteration_bound(N: int, R_y: float, B: float, eps: float) -> float:
    """``2(N+1) N ln(B R_y / eps)``: central cuts needed to shrink ``B(R_y)`` below ``V_N(eps/B)``."""
    return 2.0 * (N + 1) * N * math.log(max(B * R_y / eps, math.e))


@dataclass
class EAHResult:
    weights: np.ndarray
    gers: list
    seps: list
    value: float
    iterations: int
    bound: float
    R_y: float


def _slice_halfspace(h: Halfspace):
    """Restrict ``{<a, y> <= c}`` to ``y_0 = 1``."""
    return h.normal[1:], h.offset - h.normal[0]


def eah_solve(oracle: Callable[[np.ndarray], GerOrSep], N: int, R_y: float, B: float, eps: float,
              box: Optional[np.ndarray] = None, r_y: Optional[float] = None,
              trace: Optional[TextIO] = None) -> EAHResult:
    """Run the ellipsoid on the infeasible dual, then mix the good-enough responses.

    The leading coordinate is pinned to 1, so the dual runs over that slice
    (``N - 1`` coordinates).  ``box`` gives per-coordinate bounds on the slice
    that hold for every deviation; they are cut explicitly and make the
    compressed primal a linear program.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if B < 1.0:
        raise ValueError("B must be at least 1")
    n = N - 1
    box = np.full(n, R_y) if box is None else np.asarray(box, dtype=float)
    radius = max(R_y, float(np.linalg.norm(box)))
    gers, seps = [], []
    eye = np.eye(n)

    def sep(z):
        j = int(np.argmax(np.abs(z) - box))
        if abs(z[j]) > box[j]:
            s = 1.0 if z[j] > 0 else -1.0
            return Halfspace(s * eye[j], box[j])
        out = oracle(np.concatenate([[1.0], z]))
        if isinstance(out, Sep):
            a, c = _slice_halfspace(out.halfspace)
            seps.append((a, c))
            if not np.any(a):
                return Halfspace(np.zeros(n), -1.0 if c < 0 else 0.0)
            return Halfspace(a, c)
        gers.append(out)
        a = out.row[1:]
        if not np.any(a):
            # the response covers every deviation at once
            return Halfspace(np.zeros(n), -1.0)
        return Halfspace(a, -out.row[0])

    bound = eah_iteration_bound(N, radius, B, eps)
    floor = log_ball_volume(n, eps / B)
    res = feasibility_engine(sep, Ellipsoid.ball(np.zeros(n), radius), floor,
                             int(math.ceil(bound)) + 16, trace=trace)
    if not isinstance(res, Infeasible):
        raise CompressedPrimalInfeasible("the dual ellipsoid accepted a point")
    if not gers:
        raise CompressedPrimalInfeasible("no good-enough response was collected")
    lam, value = _compressed_primal(gers, seps, box)
    if value < -eps * (1.0 + 1e-9):
        raise CompressedPrimalInfeasible(f"best mixture guarantees only {value:.3e} < -{eps:.3e}")
    return EAHResult(lam, gers, seps, value, res.iterations, bound, radius)


def _compressed_primal(gers, seps, box):
    """``max_{lambda in simplex} min_{y in shell} lambda^T R y`` as one linear program."""
    R = np.array([g.row for g in gers])
    L, n = R.shape[0], R.shape[1] - 1
    G = [np.eye(n), -np.eye(n)] + ([np.array([a for a, _ in seps])] if seps else [])
    h = [box, box] + ([np.array([c for _, c in seps])] if seps else [])
    G = np.vstack(G)
    h = np.concatenate(h)
    K = G.shape[0]
    # variables: lambda (L), mu (K), t
    c = np.zeros(L + K + 1)
    c[-1] = -1.0
    A_ub = np.concatenate([-R[:, 0], h, [1.0]])[None, :]
    A_eq = np.zeros((n + 1, L + K + 1))
    A_eq[:n, :L] = R[:, 1:].T
    A_eq[:n, L:L + K] = G.T
    A_eq[n, :L] = 1.0
    b_eq = np.zeros(n + 1)
    b_eq[n] = 1.0
    bounds = [(0, None)] * (L + K) + [(None, None)]
    sol = linprog(c, A_ub=A_ub, b_ub=[0.0], A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if sol.status != 0:
        raise CompressedPrimalInfeasible(f"compressed primal: {sol.message}")
    lam = np.clip(sol.x[:L], 0.0, None)
    lam /= lam.sum()
    return lam, float(-sol.fun)


# solutions ---------------------------------------------------------------------

@dataclass
class CorrelatedSolution:
    atoms: list
    weights: np.ndarray
    provenance: list = field(default_factory=list)
    ger_count: int = 0
    value: float = float("nan")
    iterations: int = 0
    bound: float = float("nan")

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.atoms) != len(self.weights):
            raise ValueError("one weight per atom")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be a probability vector")

    def check(self, game: ConvexGame, tol: float = 1e-7) -> None:
        for atom in self.atoms:
            for P, x in zip(game.bodies, atom):
                if not membership(P, x, tol):
                    raise ValueError("atom strategy outside its body")

    def to_dict(self, gaps=None) -> dict:
        out = {"atoms": [[np.asarray(x, dtype=float).tolist() for x in atom] for atom in self.atoms],
               "weights": self.weights.tolist()}
        if gaps is not None:
            out["gaps"] = [float(g) for g in gaps]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CorrelatedSolution":
        try:
            atoms = [[np.asarray(x, dtype=float) for x in atom] for atom in data["atoms"]]
            return cls(atoms, np.asarray(data["weights"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed solution: {exc}") from exc


def compute_lce(game: ConvexGame, eps: float, fp_tol: float = DEFAULT_FP_TOL,
                trace: Optional[TextIO] = None) -> CorrelatedSolution:
    """An eps-approximate linear correlated equilibrium as a mixture of product profiles."""
    N = game.N
    B = math.sqrt(N)
    box = np.concatenate([np.full(flat_dim(P.dim), EndoBounds.of(P).outer_radius) for P in game.bodies])
    R_y = math.sqrt(1.0 + sum(EndoBounds.of(P).outer_radius ** 2 for P in game.bodies))
    res = eah_solve(lambda y: cd_oracle(game, y, fp_tol), N, R_y, B, eps, box=box, trace=trace)
    keep = np.flatnonzero(res.weights > 1e-14)
    w = res.weights[keep] / res.weights[keep].sum()
    atoms = [[np.asarray(x, dtype=float) for x in res.gers[k].profile] for k in keep]
    log.info("eah: %d iterations, %d responses, %d kept, value %.3e", res.iterations, len(res.gers),
             len(keep), res.value)
    return CorrelatedSolution(atoms, w, keep.tolist(), len(res.gers), res.value, res.iterations, res.bound)


def lce_gap(solution: CorrelatedSolution, game: ConvexGame, player: int) -> float:
    """Largest expected gain of an affine deviation for ``player`` under the mixture."""
    P = game.bodies[player]
    history, base = [], 0.0
    for lam, atom in zip(solution.weights, solution.atoms):
        g = game.gradient(player, atom)[1:]
        x = np.asarray(atom[player], dtype=float)
        history.append((x, -lam * g))
        base += lam * float(g @ x)
    if isinstance(P, Simplex):
        value, _ = simplex_best_deviation(history, P.dim)
    else:
        value, _ = hrep_best_deviation(history, P)
    return max(-value - base, 0.0)


def lce_gaps(solution: CorrelatedSolution, game: ConvexGame) -> list:
    return [lce_gap(solution, game, i) for i in range(game.players)]


# self-play -------------------------------------------------------------------------

@dataclass
class SelfPlayResult:
    reports: list
    solution: CorrelatedSolution
    profiles: list


def selfplay(game: ConvexGame, T: int, rng: Optional[np.random.Generator] = None,
             learner: str = "linswap", callback: Optional[Callable] = None, **kw) -> SelfPlayResult:
    """Independent learners, one per player, each fed its negated (halved) utility gradient.

    ``learner="ogd"`` swaps in projected gradient descent as an
    external-regret baseline.  ``rng`` picks the learners' starting points.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    learners = []
    for P in game.bodies:
        start = None
        if rng is not None:
            from .geometry import sample_points
            start = sample_points(P, 1, rng)[0]
        if learner == "linswap":
            learners.append(LinSwapLearner(P, T, start=start, **kw))
        elif learner == "ogd":
            ogd = OGDLearner(P, T, **kw)
            if start is not None:
                ogd.x = np.array(start)
            learners.append(ogd)
        else:
            raise ValueError(f"unknown learner {learner!r}")
    histories = [[] for _ in game.bodies]
    profiles = []
    for t in range(1, T + 1):
        prof = [lr.next() for lr in learners]
        profiles.append(prof)
        for i, lr in enumerate(learners):
            loss = np.clip(-0.5 * game.gradient(i, prof)[1:], -1.0, 1.0)
            lr.observe(loss)
            histories[i].append((prof[i], loss))
        if callback is not None:
            callback(t, profiles)
    reports = []
    for P, hist in zip(game.bodies, histories):
        reports.append(exact_linswap_regret(hist, P) if _tractable(P) else None)
    solution = CorrelatedSolution([list(p) for p in profiles], np.full(T, 1.0 / T))
    return SelfPlayResult(reports, solution, profiles)


def _tractable(P) -> bool:
    from .geometry import Box, HPolytope
    return isinstance(P, (Simplex, HPolytope, Box))


def empirical_gaps(game: ConvexGame, profiles, upto: Optional[int] = None) -> list:
    """Per-player gaps of the uniform mixture over the first ``upto`` profiles."""
    prof = profiles if upto is None else profiles[:upto]
    sol = CorrelatedSolution([list(p) for p in prof], np.full(len(prof), 1.0 / len(prof)))
    return lce_gaps(sol, game)


def pure_profiles(game: NormalFormGame):
    """All pure profiles as corner-simplex points, with their action indices."""
    for idx in itertools.product(*[range(a) for a in game.actions]):
        yield idx, [np.eye(a)[k][1:] for a, k in zip(game.actions, idx)]


class RunningGap:
    """Per-player gaps of the uniform mixture over the profiles seen so far (simplex players)."""

    def __init__(self, game: ConvexGame):
        if not all(isinstance(P, Simplex) for P in game.bodies):
            raise UnsupportedBody("running gaps need simplex strategy sets")
        self.game = game
        self.cols = [np.zeros((P.dim + 1, P.dim)) for P in game.bodies]
        self.base = np.zeros(game.players)
        self.t = 0

    def add(self, profile) -> np.ndarray:
        self.t += 1
        for i, P in enumerate(self.game.bodies):
            g = self.game.gradient(i, profile)[1:]
            x = np.asarray(profile[i], dtype=float)
            self.cols[i] += np.outer(NormalFormGame.mixed(x), g)
            self.base[i] += float(g @ x)
        return self.gaps()

    def gaps(self) -> np.ndarray:
        best = np.array([np.sum(np.maximum(c.max(axis=1), 0.0)) for c in self.cols])
        return np.maximum(best - self.base, 0.0) / max(self.t, 1)
