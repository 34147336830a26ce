"""Shared generators and independent reference computations for the tests."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from linswap.affine import AffineMap, flat_dim
from linswap.geometry import HPolytope


def random_hpolytope(d: int, rng: np.random.Generator, extra: int = 3, max_radius: float = 8.0) -> HPolytope:
    """Random bounded polytope with the origin strictly inside."""
    while True:
        m = d + 1 + int(rng.integers(0, extra + 1))
        A = rng.standard_normal((m, d))
        h = rng.uniform(0.3, 1.0, m)
        try:
            P = HPolytope(A, h)
        except ValueError:
            continue
        if P.outer_radius <= max_radius:
            return P


def random_map_in_ball(d: int, radius: float, rng: np.random.Generator) -> AffineMap:
    n = flat_dim(d)
    g = rng.standard_normal(n)
    g *= radius * rng.random() ** (1.0 / n) / np.linalg.norm(g)
    return AffineMap.from_flat(g, d)


def mixed_utilities(game, strategies) -> np.ndarray:
    """Expected utility of every player by summing over pure profiles (no gradients involved)."""
    out = np.zeros(game.players)
    for idx in np.ndindex(*game.actions):
        w = np.prod([s[k] for s, k in zip(strategies, idx)])
        out += w * np.array([T[idx] for T in game.tensors])
    return out


def row_stochastic_gap(solution, game, player: int) -> float:
    """Best gain from a row-stochastic action remapping, solved as an LP."""
    A = game.actions[player]
    C = np.zeros((A, A))
    for lam, atom in zip(solution.weights, solution.atoms):
        sigma = game.mixed(atom[player])
        v = game.action_values(player, atom)
        C += lam * np.outer(sigma, v - sigma @ v)
    # gain of Q is sum_kj Q[k, j] C[k, j] since every row of Q sums to one
    Aeq = np.kron(np.eye(A), np.ones(A))
    res = linprog(-C.ravel(), A_eq=Aeq, b_eq=np.ones(A), bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return max(-res.fun, 0.0)
