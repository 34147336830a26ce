import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import linswap.endo as endo
from helpers import random_hpolytope, random_map_in_ball
from linswap.affine import AffineMap
from linswap.endo import (
    EndoBounds,
    FixedPoint,
    Found,
    NotFound,
    SemiSeparation,
    TransformHalfspace,
    apply,
    endo_membership,
    endo_membership_hrep,
    endo_membership_vrep,
    find_fixed_point,
    flat_ball_point,
    sample_endomorphisms,
    semi_separate,
)
from linswap.errors import InconsistentOracle
from linswap.geometry import Ball, Box, CappedBall, HPolytope, Simplex, membership, sample_points

SQUARE = Box([0.0, 0.0], [1.0, 1.0])
DISK = Ball(np.zeros(2), 1.0)
SWAP = AffineMap(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))


def test_apply_examples():
    assert np.allclose(apply(AffineMap.identity(2), [0.3, 0.7]), [0.3, 0.7])
    assert np.allclose(apply(AffineMap.constant([1.0, 0.0]), [0.4, -2.0]), [1, 0])
    assert np.allclose(apply(SWAP, [0.2, 0.8]), [0.8, 0.2])


def test_membership_examples():
    assert endo_membership(Simplex(2), SWAP) is None
    assert endo_membership(Simplex(2), AffineMap.constant([1.0, 0.0])) is None
    cut = endo_membership(SQUARE, AffineMap(np.eye(2), np.array([0.5, 0.0])))
    assert isinstance(cut, TransformHalfspace)
    assert np.allclose(SQUARE.vertices[cut.provenance.vertex], [1, 0])   # first to leave
    assert cut.violation(AffineMap(np.eye(2), np.array([0.5, 0.0]))) > 0
    doubled = AffineMap(2 * np.eye(2), np.zeros(2))
    assert endo_membership(Simplex(2), doubled) is not None


def test_vrep_and_hrep_agree_on_the_square():
    rows = [([1.0, 0.0], 1.0), ([0.0, 1.0], 1.0), ([-1.0, 0.0], 0.0), ([0.0, -1.0], 0.0)]
    rng = np.random.default_rng(0)
    for _ in range(200):
        phi = AffineMap(rng.uniform(-1, 1, (2, 2)), rng.uniform(-0.5, 1.5, 2))
        v = endo_membership_vrep(SQUARE.vertices, SQUARE, phi)
        h = endo_membership_hrep(rows, SQUARE, phi)
        assert (v is None) == (h is None)
        images = np.array([phi(x) for x in SQUARE.vertices])
        inside = np.all(images >= -1e-9) and np.all(images <= 1 + 1e-9)
        assert (v is None) == inside


def test_fixed_point_examples():
    res = find_fixed_point(DISK, AffineMap(0.5 * np.eye(2), np.zeros(2)))
    assert isinstance(res, Found) and np.linalg.norm(res.point) <= 1e-8
    res = find_fixed_point(SQUARE, AffineMap(np.eye(2), np.array([2.0, 0.0])))
    assert isinstance(res, NotFound)
    assert res.min_residual == pytest.approx(2.0, abs=1e-6)
    cap = CappedBall(1.0, [1.0, 0.0], 0.75)
    res = find_fixed_point(cap, AffineMap(-7 / 8 * np.eye(2), np.zeros(2)))
    assert isinstance(res, Found) and np.linalg.norm(res.point) <= 1e-8
    with pytest.raises(ValueError):
        find_fixed_point(DISK, SWAP, 0.0)


def test_fixed_point_off_the_linear_system():
    # the identity plus a shift along the unreachable direction has no fixed point
    phi = AffineMap(np.diag([1.0, 0.5]), np.array([0.3, 0.0]))
    res = find_fixed_point(SQUARE, phi)
    assert isinstance(res, NotFound) and res.min_residual == pytest.approx(0.3, abs=1e-6)
    phi = AffineMap(np.diag([1.0, 0.5]), np.zeros(2))
    res = find_fixed_point(SQUARE, phi)
    assert isinstance(res, Found) and membership(SQUARE, res.point, 1e-8)


def test_semi_separate_translation_of_the_square():
    phi = AffineMap(np.eye(2), np.array([1.0, 0.0]))
    cut = semi_separate(SQUARE, phi)
    assert isinstance(cut, TransformHalfspace) and isinstance(cut.provenance, SemiSeparation)
    assert np.allclose(cut.provenance.p_u[0], 1.0)
    assert cut.provenance.u[0] > 0 and abs(cut.provenance.u[1]) <= 1e-9
    assert cut.violation(phi) > 0


def test_semi_separate_translation_of_the_disk():
    phi = AffineMap(np.eye(2), np.array([0.0, 3.0]))
    cut = semi_separate(DISK, phi)
    u = cut.provenance.u
    assert np.allclose(u / np.linalg.norm(u), [0, 1], atol=1e-9)
    assert np.allclose(cut.provenance.p_u, [0, 1], atol=1e-9)
    assert cut.provenance.margin == pytest.approx(float(u @ u), rel=1e-9)


def test_semi_separate_returns_fixed_points():
    out = semi_separate(Simplex(3), AffineMap.identity(3))
    assert isinstance(out, FixedPoint) and out.residual <= 1e-8


def test_inconsistent_oracle(monkeypatch):
    phi = AffineMap(np.eye(2), np.array([0.0, 3.0]))
    # a residual orthogonal to the true displacement cannot produce a cut
    monkeypatch.setattr(endo, "least_residual", lambda *a, **k: (np.zeros(2), np.array([1e-2, 0.0])))
    with pytest.raises(InconsistentOracle):
        semi_separate(DISK, phi, fp_tol=1e-3)


def test_endo_bounds_examples():
    b = EndoBounds.of(DISK)
    assert b.inner_radius == pytest.approx(0.5)
    assert b.outer_radius == pytest.approx(3.0 * math.sqrt(3.0))
    assert np.allclose(b.center_map.flat(), 0)


# properties ---------------------------------------------------------------------------

def _bodies(rng):
    return [Simplex(2), Simplex(3), SQUARE, DISK, random_hpolytope(2, rng), random_hpolytope(3, rng),
            Box([-1.0, 0.0, 0.0], [0.0, 2.0, 1.0])]


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_endo_bounds_sandwich(seed):
    rng = np.random.default_rng(seed)
    for P in _bodies(rng):
        b = EndoBounds.of(P)
        pts = sample_points(P, 40, rng)
        for _ in range(5):
            phi = flat_ball_point(b.center_map, b.inner_radius * (1 - 1e-9), rng)
            assert all(membership(P, phi(x), 1e-9) for x in pts)
        for phi in sample_endomorphisms(P, 20, rng):
            assert phi.frob_norm() <= b.outer_radius + 1e-9


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_sampled_endomorphisms_are_endomorphisms(seed):
    rng = np.random.default_rng(seed)
    for P in _bodies(rng):
        pts = sample_points(P, 40, rng)
        for phi in sample_endomorphisms(P, 12, rng):
            assert all(membership(P, phi(x), 1e-8) for x in pts)
            if not isinstance(P, Ball):
                assert endo_membership(P, phi, 1e-8) is None


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_semi_separation_is_sound(seed):
    rng = np.random.default_rng(seed)
    for P in _bodies(rng):
        endos = sample_endomorphisms(P, 40, rng)
        for _ in range(3):
            phi = random_map_in_ball(P.dim, EndoBounds.of(P).outer_radius, rng)
            out = semi_separate(P, phi)
            if isinstance(out, FixedPoint):
                assert membership(P, out.point, 1e-8)
                assert np.linalg.norm(phi(out.point) - out.point) <= 1e-8
            else:
                assert out.violation(phi) >= 0.25e-16
                assert max(h.flat() @ out.normal - out.offset for h in endos) <= 1e-8


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_fixed_point_matches_linear_solve(seed):
    rng = np.random.default_rng(seed)
    P = Simplex(3)
    phi = sample_endomorphisms(P, 4, rng)[rng.integers(4)]
    res = find_fixed_point(P, phi)
    assert isinstance(res, Found)
    A = phi.M - np.eye(3)
    if np.linalg.cond(A) < 1e8:
        x = np.linalg.solve(A, -phi.b)
        assert np.allclose(res.point, x, atol=1e-6)


def test_hpolytope_and_vrep_agree():
    rng = np.random.default_rng(7)
    P = random_hpolytope(2, rng)
    V = np.array(list(P.vertices))
    for _ in range(100):
        phi = AffineMap(rng.uniform(-1, 1, (2, 2)), rng.uniform(-0.5, 0.5, 2))
        a = endo_membership_vrep(V, P, phi, 1e-9)
        b = endo_membership_hrep(P.rows, P, phi, 1e-9)
        assert (a is None) == (b is None)
        assert isinstance(P, HPolytope)
