import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import FIB
from toralkam.action_factory import random_field
from toralkam.diffeo import (
    TorusMap,
    compose,
    conjugate_action,
    dh_sup,
    inverse_points,
    inverse_residual,
    invert,
    torus_dist,
)
from toralkam.errors import AliasingWarning, ConvergenceError, NonInvertibleError
from toralkam.spectral_field import SpectralField, eval_at, partials
from toralkam.torus_algebra import eigen_decompose

A = np.array(FIB)


def small_map(seed, amplitude=1e-2, max_mode=3, linear=None):
    g = random_field(2, seed, max_mode, amplitude, 1.0)
    return TorusMap(np.eye(2, dtype=int) if linear is None else linear, g)


def test_torus_dist_wraps():
    assert torus_dist([[0.99, 0.0]], [[0.01, 0.0]])[0] == pytest.approx(0.02)
    assert torus_dist([[3.25, -1.0]], [[0.25, 0.0]])[0] == pytest.approx(0.0)


def test_compose_identity_and_translations():
    G = small_map(1)
    I = TorusMap.identity(2, 4)
    assert compose(I, G, 3).periodic.max_coeff_diff(G.periodic) < 1e-15
    a = TorusMap.near_identity(SpectralField.constant([0.25, 0.5], 2))
    b = TorusMap.near_identity(SpectralField.constant([0.5, 0.125], 2))
    np.testing.assert_allclose(compose(a, b, 2).periodic.mean, [0.75, 0.625], atol=1e-15)


def test_compose_linear_parts_multiply():
    F = TorusMap(A, SpectralField.zeros(2, 2))
    assert np.array_equal(compose(F, F, 2).linear, A @ A)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_compose_matches_pointwise(seed):
    F = small_map(seed, linear=A)
    G = small_map(seed + 1)
    FG = compose(F, G, 32)
    x = np.random.default_rng(seed).uniform(size=(50, 2))
    assert torus_dist(FG(x), F(G(x))).max() < 1e-12


def test_compose_associative_within_alias_tol():
    F, G, K = small_map(1), small_map(2), small_map(3)
    left = compose(compose(F, G, 32), K, 32)
    right = compose(F, compose(G, K, 32), 32)
    assert left.periodic.max_coeff_diff(right.periodic) <= 10 * 1e-9


def test_compose_warns_on_truncation():
    F = TorusMap.near_identity(random_field(2, 1, 6, 0.05, 0.0))
    with pytest.warns(AliasingWarning):
        compose(F, F, 4)


def test_invert_examples():
    I = invert(TorusMap.identity(2, 4))
    assert I.periodic.is_zero()
    c = np.array([0.1, -0.3])
    T = invert(TorusMap.near_identity(SpectralField.constant(c, 2)))
    np.testing.assert_allclose(T.periodic.mean, -c, atol=1e-15)
    h = SpectralField.from_modes({(1, 0): [0.005j, 0.0]}, d=2, cutoff=1)  # amplitude 0.01
    H = TorusMap.near_identity(h)
    Hinv = invert(H, cutoff=32)
    assert inverse_residual(H, Hinv) < 1e-11
    x = np.random.default_rng(0).uniform(size=(100, 2))
    assert torus_dist(Hinv(H(x)), x).max() < 1e-11


def test_invert_rejects_large_or_non_identity_maps():
    big = SpectralField.from_modes({(1, 0): [0.1j, 0.0]}, d=2, cutoff=1)  # |Dh| = 0.4 pi
    with pytest.raises(NonInvertibleError):
        invert(TorusMap.near_identity(big))
    with pytest.raises(NonInvertibleError):
        invert(TorusMap(A, SpectralField.zeros(2, 1)))


def test_inverse_points_convergence_error():
    h = SpectralField.from_modes({(1, 0): [0.05j, 0.0]}, d=2, cutoff=1)
    y = np.random.default_rng(0).uniform(size=(10, 2))
    with pytest.raises(ConvergenceError):
        inverse_points(h, y, max_iters=1)
    p = inverse_points(h, y)
    np.testing.assert_allclose(p + eval_at(h, p), y, atol=1e-14)


def test_dh_sup_closed_form():
    h = SpectralField.from_modes({(1, 0): [0.01j, 0.0]}, d=2, cutoff=1)  # h1 = -0.02 sin(2 pi x1)
    assert dh_sup(h) == pytest.approx(0.04 * np.pi, rel=1e-12)
    assert dh_sup(SpectralField.zeros(2, 3)) == 0


def test_conjugate_action_trivial_cases():
    eig = eigen_decompose(FIB)
    Atil = TorusMap(A, random_field(2, 4, 3, 1e-3, 1.0, 16))
    vtil = SpectralField.constant(eig.v_unit, 16) + random_field(2, 5, 3, 1e-3, 1.0, 16)
    A2, v2 = conjugate_action(TorusMap.identity(2, 16), Atil, vtil, 16)
    assert A2.periodic.max_coeff_diff(Atil.periodic) == 0 and v2.max_coeff_diff(vtil) == 0
    # w = 0 gives h = 0 from the coboundary solve, so the affine flow is untouched
    A3, v3 = conjugate_action(TorusMap.identity(2, 16), TorusMap(A, SpectralField.zeros(2, 16)),
                              SpectralField.constant(eig.v_unit, 16), 16)
    np.testing.assert_allclose(v3.mean, eig.v_unit)
    assert A3.periodic.is_zero()


def test_conjugate_action_is_pointwise_conjugation():
    eig = eigen_decompose(FIB)
    G = small_map(9, amplitude=1e-3)
    affine = TorusMap(A, SpectralField.zeros(2, 32))
    Atil, vtil = conjugate_action(G, affine, SpectralField.constant(eig.v_unit, 32), 32)
    assert np.array_equal(Atil.linear, A)
    x = np.random.default_rng(1).uniform(size=(50, 2))
    # G o A = Atil o G and DG . v = vtil o G
    assert torus_dist(G(x @ A.T), Atil(G(x))).max() < 1e-12
    DG = np.stack([eval_at(p, x) for p in partials(G.periodic)], axis=-1) + np.eye(2)
    np.testing.assert_allclose(eval_at(vtil, G(x)), DG @ eig.v_unit, atol=1e-12)


def test_conjugate_round_trip_recovers_affine():
    eig = eigen_decompose(FIB)
    G = small_map(11, amplitude=1e-3)
    affine = TorusMap(A, SpectralField.zeros(2, 24))
    v = SpectralField.constant(eig.v_unit, 24)
    Atil, vtil = conjugate_action(G, affine, v, 24)
    Ginv = invert(G, cutoff=24)
    A_back, v_back = conjugate_action(Ginv, Atil, vtil, 24)
    assert np.abs(A_back.periodic.coeffs).max() < 1e-9
    assert v_back.max_coeff_diff(v) < 1e-9
