"""Linearized solvers: the flow coboundary, the zero modes and the error fields."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ErgodicityError, RelationWarning, ResonanceError
from .spectral_field import (
    TWO_PI,
    OperatorSpec,
    SpectralField,
    evaluate,
    frequency_set,
    grid_points,
    grid_size,
    jacobian_apply,
    next_pow2,
    pushforward,
    smooth_project,
    sup_norm,
)
from .torus_algebra import EigenData, as_integer_matrix


@dataclass(frozen=True, eq=False)
class CoboundarySolution:
    h: SpectralField
    h_zero: np.ndarray
    min_divisor: float
    amplification: float


@dataclass(frozen=True, eq=False)
class ErrorFields:
    E: SpectralField
    E_star: SpectralField
    E_zero: np.ndarray
    w_zero_correction: np.ndarray


def _as_S(op, A=None) -> OperatorSpec:
    if isinstance(op, OperatorSpec):
        return op
    return OperatorSpec("S", int(op), A)


def divide_by_divisors(g: SpectralField, v, keep: np.ndarray, divisor_floor: float = 1e-10):
    """Coefficients g(n) / (2 pi i <n, v>) on the kept modes, zero elsewhere.

    Returns the new coefficient array, the smallest divisor used and the
    largest amplification 1 / |2 pi <n, v>|.
    """
    v = np.asarray(v, dtype=float)
    div = TWO_PI * (g.modes @ v)
    keep = keep.copy()
    keep[0] = False
    out = np.zeros_like(g.coeffs)
    if not keep.any():
        return out, math.inf, 0.0
    mags = np.abs(div[keep])
    i = int(np.argmin(mags))
    if mags[i] < divisor_floor:
        raise ResonanceError(g.modes[keep][i], mags[i], divisor_floor)
    out[keep] = g.coeffs[keep] / (1j * div[keep])[:, None]
    return out, float(mags[i]), float(1.0 / mags[i])


def solve_zero_mode(f_zero, A) -> np.ndarray:
    """h(0) with (A - Id) h(0) = f(0)."""
    M = as_integer_matrix(A).astype(float) - np.eye(len(f_zero))
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] < 1e-12 * max(1.0, s[0]):
        raise ErgodicityError("A - Id is singular: 1 is an eigenvalue of A")
    return np.linalg.solve(M, np.asarray(f_zero, dtype=float))


def solve_flow_coboundary(w: SpectralField, v, op=None, divisor_floor: float = 1e-10,
                          f_zero=None, A=None) -> CoboundarySolution:
    """Solve -S_N w = Dh . v on the nonzero modes of Lambda(S_N).

    ``op`` is an OperatorSpec of kind S or an integer N (default: w's cutoff).
    When ``f_zero`` and ``A`` are given the zero mode (A - Id)^-1 f(0) is filled in.
    """
    op = _as_S(w.cutoff if op is None else op)
    h_cutoff = op.N
    wN = w.with_cutoff(max(h_cutoff, 0))
    keep = frequency_set(op, wN.modes)
    coeffs, min_div, amp = divide_by_divisors(-wN, v, keep, divisor_floor)
    h_zero = np.zeros(w.d) if f_zero is None else solve_zero_mode(f_zero, A)
    coeffs[0] = h_zero
    h = SpectralField(coeffs, h_cutoff)
    return CoboundarySolution(h, h_zero, min_div, amp)


def compose_with_map(w: SpectralField, A, f: SpectralField, cutoff: int) -> SpectralField:
    """w o (A + f) sampled on a grid fine enough for the band of w o A, truncated to ``cutoff``."""
    A = as_integer_matrix(A)
    band = cutoff + math.ceil(np.linalg.norm(A.astype(float), 2) * w.cutoff) + f.cutoff + 1
    M = max(grid_size(cutoff, 2.0), next_pow2(band))
    y = grid_points(w.d, M)
    pts = y @ A.T + evaluate(f, y)
    vals = evaluate(w, pts)
    return SpectralField.from_grid(vals.T.reshape((w.d,) + (M,) * w.d), cutoff)


def compute_error_fields(f: SpectralField, w: SpectralField, A, eig: EigenData, v=None,
                         cutoff: int | None = None, divisor_floor: float = 1e-10,
                         relation_tol: float = 1e-8) -> ErrorFields:
    """E = lam w o (A+f) - lam w o A - Df . w, its small-divisor quotient E* and the w(0) solve."""
    lam = eig.lam
    v = eig.v_unit if v is None else np.asarray(v, dtype=float)
    cutoff = max(f.cutoff, w.cutoff) if cutoff is None else cutoff
    if f.is_zero() or w.is_zero():
        E = SpectralField.zeros(w.d, cutoff)
    else:
        shifted = compose_with_map(w, A, f, cutoff)
        E = lam * (shifted - pushforward(w, A, cutoff)) - jacobian_apply(f, w, cutoff)
    keep = np.ones(len(E.modes), dtype=bool)
    star, _, _ = divide_by_divisors(E, v, keep, divisor_floor)
    E_star = SpectralField(star, cutoff)
    E_zero = E.mean
    drift = float(np.linalg.norm(eig.P_V @ E_zero))
    if drift > relation_tol:
        warnings.warn(
            f"|P_V E(0)| = {drift:.2e} exceeds {relation_tol:.0e}: the pair does not satisfy the group relation",
            RelationWarning,
            stacklevel=2,
        )
    return ErrorFields(E, E_star, E_zero, eig.solve_perp(E_zero))


def relation_terms(h: SpectralField, f: SpectralField, A, E_star: SpectralField, N: int):
    """The four T_N-truncated terms of the map equation, all at a common cutoff."""
    A = as_integer_matrix(A)
    c = max(h.cutoff, f.cutoff, E_star.cutoff, N)
    T = OperatorSpec("T", N, A)
    Tsharp = OperatorSpec("Tsharp", N, A)
    lin = smooth_project(h.with_cutoff(c), T).apply_matrix(A)
    ff = smooth_project(f.with_cutoff(c), T)
    shifted = pushforward(smooth_project(h.with_cutoff(c), Tsharp), A, c)
    es = smooth_project(E_star.with_cutoff(c), T)
    return lin, ff, shifted, es


def map_equation_residual(h: SpectralField, f: SpectralField, A, E_star: SpectralField, N: int) -> float:
    """C^0 norm of -A T_N h + T_N f + (T#_N h) o A - T_N E*."""
    lin, ff, shifted, es = relation_terms(h, f, A, E_star, N)
    return sup_norm(ff - lin + shifted - es)
