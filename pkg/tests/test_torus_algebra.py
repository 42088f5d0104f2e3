import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import CUBIC, FIB, GOLDEN_V
from toralkam.errors import DegenerateDivisorWarning, DimensionError, InputError, UnsupportedSpectrumError
from toralkam.torus_algebra import (
    ToralAutomorphism,
    as_integer_matrix,
    charpoly,
    check_irreducible,
    eigen_decompose,
    estimate_diophantine,
    find_factor,
    integer_det,
    integer_inverse,
    project,
)

PHI = (1 + math.sqrt(5)) / 2
small_ints = st.integers(-4, 4)


def square(n):
    return st.lists(st.lists(small_ints, min_size=n, max_size=n), min_size=n, max_size=n)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4).flatmap(square))
def test_charpoly_and_det_match_sympy(M):
    t = sympy.Symbol("t")
    expected = sympy.Poly(sympy.Matrix(M).charpoly(t).as_expr(), t).all_coeffs()
    assert charpoly(M) == [int(c) for c in expected]
    assert integer_det(M) == int(sympy.Matrix(M).det())


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4).flatmap(square))
def test_irreducibility_matches_sympy(M):
    t = sympy.Symbol("t")
    poly = sympy.Poly(sympy.Matrix(M).charpoly(t).as_expr(), t)
    assert check_irreducible(M) == poly.is_irreducible
    q = find_factor(charpoly(M))
    if q is not None:
        assert sympy.rem(poly, sympy.Poly(q, t)).is_zero


def test_irreducibility_examples():
    assert check_irreducible(FIB)
    assert not check_irreducible(np.eye(2, dtype=int))
    assert not check_irreducible([[2, 0], [0, 3]])
    assert check_irreducible(CUBIC)


def test_non_square_is_dimension_error():
    with pytest.raises(DimensionError):
        check_irreducible([[1, 2, 3], [4, 5, 6]])
    with pytest.raises(InputError):
        as_integer_matrix([[1.5, 0], [0, 1]])


def test_integer_inverse_exact():
    inv = integer_inverse(CUBIC)
    assert np.array_equal(np.array(CUBIC) @ inv, np.eye(3, dtype=int))
    assert np.array_equal(inv, np.array(sympy.Matrix(CUBIC).inv().tolist(), dtype=np.int64))
    with pytest.raises(InputError):
        integer_inverse([[2, 0], [0, 1]])


def test_validated_automorphism():
    A = ToralAutomorphism.validated(FIB)
    assert A.determinant == 1 and A.dimension == 2
    assert A.norm == pytest.approx(PHI ** 2)
    with pytest.raises(InputError):
        ToralAutomorphism.validated([[2, 0], [0, 1]])
    with pytest.raises(InputError):
        ToralAutomorphism.validated([[1, 1], [0, 1]])


def test_fibonacci_eigendata():
    eig = eigen_decompose(FIB)
    assert eig.lam == pytest.approx(PHI ** 2, abs=1e-10)
    assert abs(eig.lam - 2.6180339887) < 1e-10
    np.testing.assert_allclose(eig.v_unit, [0.8506508084, 0.5257311121], atol=1e-10)
    A = np.array(FIB, dtype=float)
    assert np.linalg.norm(A @ eig.v_unit - eig.lam * eig.v_unit) < 1e-12
    other = np.array([1.0, -PHI])
    assert np.abs(eig.P_V @ other).max() < 1e-12
    assert np.abs(project(eig, other, "V")).max() < 1e-12
    np.testing.assert_allclose(project(eig, eig.v_unit, "V"), eig.v_unit, atol=1e-15)


def test_smallest_and_numeric_selector():
    small = eigen_decompose(FIB, "smallest")
    assert small.lam == pytest.approx(1 / PHI ** 2, abs=1e-12)
    assert eigen_decompose(FIB, 2.618).lam == pytest.approx(PHI ** 2, abs=1e-12)
    with pytest.raises(UnsupportedSpectrumError):
        eigen_decompose(FIB, 5.0)


def test_unsupported_spectra():
    with pytest.raises(UnsupportedSpectrumError):
        eigen_decompose([[0, -1], [1, 0]])  # rotation: no real eigenvalue
    with pytest.raises(UnsupportedSpectrumError):
        eigen_decompose([[1, 1], [0, 1]])  # repeated eigenvalue


@pytest.mark.parametrize("A", [FIB, CUBIC, [[0, 0, 0, 1], [1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0]]])
def test_projector_invariants(A):
    eig = eigen_decompose(A)
    Af = np.array(A, dtype=float)
    d = len(A)
    P, Q = eig.P_V, eig.P_Vperp
    assert np.abs(P @ Af - Af @ P).max() <= 1e-10
    assert np.abs(P @ P - P).max() < 1e-12
    assert np.abs(P + Q - np.eye(d)).max() == 0
    assert eig.perp_gap > 0
    first = np.flatnonzero(np.abs(eig.v_unit) > 1e-14)[0]
    assert eig.v_unit[first] > 0 and abs(np.linalg.norm(eig.v_unit) - 1) < 1e-15
    u = np.random.default_rng(0).standard_normal(d)
    np.testing.assert_allclose(project(eig, u, "V") + project(eig, u, "Vperp"), u, atol=1e-14)
    x = eig.solve_perp(u)
    assert np.abs(Q @ x - x).max() < 1e-12
    np.testing.assert_allclose((Af - eig.lam * np.eye(d)) @ x, Q @ u, atol=1e-12)


def test_diophantine_examples():
    v = eigen_decompose(FIB).v_unit
    c100 = estimate_diophantine(v, 1, 100)
    assert c100.C == pytest.approx(0.447, abs=1e-3)
    assert sorted(abs(x) for x in c100.argmin_k) in ([34, 55], [21, 34], [55, 89])
    assert estimate_diophantine(v, 1, 1000).C <= c100.C
    with pytest.warns(DegenerateDivisorWarning):
        cert = estimate_diophantine([1.0, 0.0], 1, 10)
    assert cert.C == 0 and cert.degenerate and cert.argmin_k == (0, 1)


def _brute(v, tau, K):
    best = math.inf
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            r2 = k1 * k1 + k2 * k2
            if 0 < r2 <= K * K:
                best = min(best, abs(k1 * v[0] + k2 * v[1]) * math.sqrt(r2) ** tau)
    return best


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, math.pi / 2 - 0.01), st.integers(3, 25), st.sampled_from([0.5, 1.0, 2.0]))
def test_diophantine_matches_bruteforce(angle, K, tau):
    v = np.array([math.cos(angle), math.sin(angle)])
    cert = estimate_diophantine(v, tau, K, floor=0.0)
    assert cert.C == pytest.approx(_brute(v, tau, K), rel=1e-9, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, math.pi / 2 - 0.01), st.integers(3, 30))
def test_diophantine_symmetries(angle, K):
    v = np.array([math.cos(angle), math.sin(angle)])
    base = estimate_diophantine(v, 1, K, floor=0.0).C
    assert estimate_diophantine(-v, 1, K, floor=0.0).C == pytest.approx(base, rel=1e-12, abs=1e-15)
    assert estimate_diophantine(v[::-1], 1, K, floor=0.0).C == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_diophantine_three_dimensional():
    v = eigen_decompose(CUBIC).v_unit
    cert = estimate_diophantine(v, 2, 12)
    from itertools import product

    best = min(abs(np.dot(k, v)) * np.linalg.norm(k) ** 2 for k in product(range(-12, 13), repeat=3)
               if 0 < sum(x * x for x in k) <= 144)
    assert cert.C == pytest.approx(best, rel=1e-9)
    assert cert.C > 0 and not cert.degenerate


def test_golden_vector_constant():
    np.testing.assert_allclose(np.abs(eigen_decompose(FIB).v_unit), GOLDEN_V, atol=1e-15)
