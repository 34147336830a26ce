import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import mixed_utilities, row_stochastic_gap
from linswap.affine import AffineMap, flat_dim
from linswap.endo import sample_endomorphisms
from linswap.equilibrium import (
    CorrelatedSolution,
    DeviationProfile,
    Ger,
    NormalFormGame,
    PolymatrixGame,
    RunningGap,
    Sep,
    cd_oracle,
    compute_lce,
    coordination,
    correlator_value,
    eah_iteration_bound,
    empirical_gaps,
    game_from_dict,
    lce_gap,
    lce_gaps,
    matching_pennies,
    random_normal_form,
    rock_paper_scissors,
)
from linswap.errors import ConfigError, DimensionMismatch
from linswap.geometry import sample_points

H, T = np.array([0.0]), np.array([1.0])   # corner-simplex points of the two pure actions


def test_correlator_value_examples():
    mp = matching_pennies()
    ident = DeviationProfile.identity(mp.dims)
    assert correlator_value([H, T], ident, mp) == 0.0
    assert correlator_value([np.array([0.5]), np.array([0.5])], DeviationProfile.from_vector(
        np.concatenate([[1.0], np.zeros(4)]), mp.dims), mp) == pytest.approx(0.0)
    y = ident.vector()
    assert correlator_value([H, T], y, mp) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DimensionMismatch):
        correlator_value([H, T], y[:-1], mp)


def test_cd_oracle_examples():
    mp = matching_pennies()
    y = DeviationProfile.identity(mp.dims).vector()
    out = cd_oracle(mp, y)
    assert isinstance(out, Ger) and len(out.profile) == 2
    y2 = y.copy()
    y2[0] = 0.5
    out = cd_oracle(mp, y2)
    assert isinstance(out, Sep) and out.halfspace.violation(y2) > 0
    y3 = DeviationProfile([AffineMap(np.eye(1), np.array([3.0])), AffineMap.identity(1)]).vector()
    out = cd_oracle(mp, y3)
    assert isinstance(out, Sep) and out.player == 0
    assert out.halfspace.violation(y3) > 0


def test_lce_gap_examples():
    mp = matching_pennies()
    point = CorrelatedSolution([[H, H]], [1.0])
    assert lce_gaps(point, mp) == pytest.approx([0.0, 2.0])
    co = coordination()
    diag = CorrelatedSolution([[H, H], [T, T]], [0.5, 0.5])
    assert lce_gaps(diag, co) == pytest.approx([0.0, 0.0])
    uniform = CorrelatedSolution([[np.array([0.5]), np.array([0.5])]], [1.0])
    assert max(lce_gaps(uniform, mp)) == pytest.approx(0.0, abs=1e-12)


def test_constant_game_needs_one_atom():
    zero = NormalFormGame([np.zeros((2, 3)), np.zeros((2, 3))])
    sol = compute_lce(zero, 1e-3)
    assert len(sol.atoms) == 1
    assert max(lce_gaps(sol, zero)) == 0.0


def _classical_ce_gap(sol, game, player):
    """Joint distribution over pure profiles, then the textbook incentive constraints."""
    joint = np.zeros(game.actions)
    for lam, atom in zip(sol.weights, sol.atoms):
        mixes = [game.mixed(x) for x in atom]
        joint += lam * np.einsum(*itertools.chain.from_iterable(
            (m, [k]) for k, m in enumerate(mixes)), list(range(game.players)))
    U = game.tensors[player]
    gap = 0.0
    for k in range(game.actions[player]):
        rec = np.take(joint, k, axis=player)
        here = np.take(U, k, axis=player)
        gain = max(float(np.sum(rec * (np.take(U, j, axis=player) - here))) for j in range(game.actions[player]))
        gap += max(gain, 0.0)
    return gap


def test_rock_paper_scissors_matches_classical_ce():
    rps = rock_paper_scissors()
    eps = 1e-3
    sol = compute_lce(rps, eps)
    sol.check(rps)
    for i in range(2):
        assert _classical_ce_gap(sol, rps, i) <= eps + 1e-6
        assert lce_gap(sol, rps, i) == pytest.approx(_classical_ce_gap(sol, rps, i), abs=1e-9)
        assert lce_gap(sol, rps, i) == pytest.approx(row_stochastic_gap(sol, rps, i), abs=1e-9)
    assert sol.iterations <= sol.bound


def test_polymatrix_game():
    rng = np.random.default_rng(0)
    pairs = [{"i": 0, "j": 1, "matrix": rng.uniform(-0.5, 0.5, (2, 3))},
             {"i": 1, "j": 2, "matrix": rng.uniform(-0.5, 0.5, (3, 2))},
             {"i": 2, "j": 0, "matrix": rng.uniform(-0.5, 0.5, (2, 2))}]
    game = PolymatrixGame([2, 3, 2], pairs)
    game.validate(rng)
    sol = compute_lce(game, 1e-2)
    assert max(lce_gaps(sol, game)) <= 1e-2 + 1e-6
    back = game_from_dict(game.to_dict())
    prof = [sample_points(P, 1, rng)[0] for P in game.bodies]
    for i in range(3):
        assert np.allclose(back.gradient(i, prof), game.gradient(i, prof))


def test_running_gap_matches_batch():
    rng = np.random.default_rng(1)
    game = random_normal_form([2, 3], rng)
    run = RunningGap(game)
    profiles = []
    for _ in range(30):
        prof = [sample_points(P, 1, rng)[0] for P in game.bodies]
        profiles.append(prof)
        gaps = run.add(prof)
    assert np.allclose(gaps, empirical_gaps(game, profiles), atol=1e-12)


def test_game_dict_errors_and_round_trip():
    with pytest.raises(ConfigError):
        game_from_dict({"utilities": {"kind": "cubic"}})
    with pytest.raises(ConfigError):
        game_from_dict({"players": 2})
    mp = matching_pennies()
    data = mp.to_dict()
    with pytest.raises(ConfigError):
        game_from_dict({**data, "players": 3})
    with pytest.raises(ConfigError):
        game_from_dict({**data, "bodies": [{"shape": "simplex", "dim": 2}] * 2})
    with pytest.raises(ConfigError):
        NormalFormGame([np.zeros((1, 2)), np.zeros((1, 2))])
    back = game_from_dict(data)
    assert all(np.array_equal(a, b) for a, b in zip(back.tensors, mp.tensors))


def test_validate_rejects_large_utilities():
    big = NormalFormGame([2 * np.ones((2, 2)), np.zeros((2, 2))])
    with pytest.raises(ConfigError):
        big.validate(np.random.default_rng(0))
    matching_pennies().validate(np.random.default_rng(0))


def test_iteration_bound_formula():
    assert eah_iteration_bound(13, 10.0, 13 ** 0.5, 1e-3) == pytest.approx(
        2 * 14 * 13 * np.log(13 ** 0.5 * 10 / 1e-3))


# properties ---------------------------------------------------------------------------

@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_utilities_match_pure_expansion(seed):
    rng = np.random.default_rng(seed)
    game = random_normal_form([2, 3, 2], rng)
    prof = [sample_points(P, 1, rng)[0] for P in game.bodies]
    assert np.allclose(game.utility(prof), mixed_utilities(game, [game.mixed(x) for x in prof]), atol=1e-12)


def _deviation_vectors(game, rng, k):
    per = [sample_endomorphisms(P, k, rng) for P in game.bodies]
    return [DeviationProfile(maps).vector() for maps in zip(*per)]


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_sep_is_sound(seed):
    rng = np.random.default_rng(seed)
    game = random_normal_form([2, 3], rng)
    valid = _deviation_vectors(game, rng, 40)
    for _ in range(5):
        y = np.concatenate([[1.0], rng.uniform(-4, 4, game.N - 1)])
        out = cd_oracle(game, y)
        if isinstance(out, Sep):
            assert out.halfspace.violation(y) > 0
            assert max(out.halfspace.violation(v) for v in valid) <= 1e-8


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_ger_is_good_enough(seed):
    rng = np.random.default_rng(seed)
    game = random_normal_form([3, 2], rng)
    fp_tol = 1e-8
    for y in _deviation_vectors(game, rng, 5):
        out = cd_oracle(game, y, fp_tol)
        assert isinstance(out, Ger)
        grads = sum(np.linalg.norm(game.gradient(i, out.profile)[1:]) for i in range(game.players))
        assert abs(out.row @ y) <= grads * fp_tol + 1e-12
        assert out.row @ y == pytest.approx(correlator_value(out.profile, y, game), abs=1e-12)
        assert flat_dim(1) + flat_dim(2) + 1 == game.N
