"""Torus maps x -> Lx + g(x): composition, inversion and conjugation of actions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AliasingWarning, ConvergenceError, NonInvertibleError
from .spectral_field import (
    SpectralField,
    evaluate,
    evaluate_many,
    grid_points,
    grid_size,
    next_pow2,
    partials,
)
from .torus_algebra import as_integer_matrix


@dataclass(frozen=True, eq=False)
class TorusMap:
    """Lift x -> linear @ x + periodic(x) of a map of T^d."""

    linear: np.ndarray
    periodic: SpectralField

    def __post_init__(self):
        L = as_integer_matrix(self.linear)
        L.setflags(write=False)
        object.__setattr__(self, "linear", L)
        if L.shape[0] != self.periodic.d:
            raise ValueError("linear part and periodic part disagree on dimension")

    @classmethod
    def identity(cls, d: int, cutoff: int = 0) -> "TorusMap":
        return cls(np.eye(d, dtype=np.int64), SpectralField.zeros(d, cutoff))

    @classmethod
    def near_identity(cls, h: SpectralField) -> "TorusMap":
        return cls(np.eye(h.d, dtype=np.int64), h)

    @property
    def d(self) -> int:
        return self.periodic.d

    @property
    def cutoff(self) -> int:
        return self.periodic.cutoff

    @property
    def is_near_identity(self) -> bool:
        return bool(np.array_equal(self.linear, np.eye(self.d, dtype=np.int64)))

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.linear.T + evaluate(self.periodic, pts)

    def with_cutoff(self, cutoff: int) -> "TorusMap":
        return TorusMap(self.linear, self.periodic.with_cutoff(cutoff))


def torus_dist(a, b) -> np.ndarray:
    """Euclidean distance on T^d between rows of a and b."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    diff -= np.rint(diff)
    return np.linalg.norm(np.atleast_2d(diff), axis=-1)


def _to_field(samples: np.ndarray, d: int, M: int, cutoff: int) -> SpectralField:
    values = samples.T.reshape((d,) + (M,) * d)
    return SpectralField.from_grid(values, cutoff)


def _warn_tail(field: SpectralField, alias_tol: float, what: str):
    scale = max(1.0, float(np.abs(field.coeffs).max(initial=0.0)))
    if field.tail > alias_tol * scale:
        warnings.warn(
            f"{what}: discarded spectral tail {field.tail:.2e} exceeds {alias_tol:.0e}",
            AliasingWarning,
            stacklevel=3,
        )


def compose(F: TorusMap, G: TorusMap, cutoff: int, alias_tol: float = 1e-9) -> TorusMap:
    """F o G re-projected to ``cutoff``; the dropped tail is kept in ``periodic.tail``."""
    d = F.d
    LG = G.linear.astype(float)
    band = cutoff + math.ceil(np.linalg.norm(LG, 2) * F.cutoff) + G.cutoff + 1
    M = max(grid_size(cutoff, 2.0), next_pow2(band))
    y = grid_points(d, M)
    gG = evaluate(G.periodic, y)
    inner = y @ LG.T + gG
    values = evaluate(F.periodic, inner) + gG @ F.linear.T
    g = _to_field(values, d, M, cutoff)
    _warn_tail(g, alias_tol, "compose")
    return TorusMap(F.linear @ G.linear, g)


def dh_sup(h: SpectralField, rho: float = 4.0) -> float:
    """Sup over a grid of the spectral operator norm of Dh."""
    if h.is_zero():
        return 0.0
    M = grid_size(h.cutoff, rho)
    cols = [p.to_grid(M).reshape(h.d, -1) for p in partials(h)]
    J = np.stack(cols, axis=-1).transpose(1, 0, 2)  # (points, i, j) = d h_i / d x_j
    return float(np.linalg.norm(J, ord=2, axis=(1, 2)).max())


def inverse_points(h: SpectralField, y: np.ndarray, max_iters: int = 100) -> np.ndarray:
    """Solve p + h(p) = y for every row of y by the contraction p <- y - h(p).

    Iterates until the update reaches the rounding floor (it stops shrinking).
    """
    p = y - evaluate(h, y)
    floor = 4 * np.finfo(float).eps * max(1.0, float(np.abs(y).max()))
    best = np.inf
    flat = 0
    for _ in range(max_iters):
        nxt = y - evaluate(h, p)
        step = float(np.abs(nxt - p).max())
        p = nxt
        if step <= floor:
            break
        if step < best:
            best, flat = step, 0
        else:
            flat += 1
        if flat >= 2 and best < 1e-13:
            break
    resid = float(np.abs(p + evaluate(h, p) - y).max())
    if resid > 1e-13:
        raise ConvergenceError(
            f"inverse contraction did not converge in {max_iters} iterations (residual {resid:.2e})"
        )
    return p


def invert(H: TorusMap, kappa: float = 0.5, cutoff: int | None = None, max_iters: int = 100,
           alias_tol: float = 1e-9) -> TorusMap:
    """Inverse of a near-identity map Id + h, projected to ``cutoff`` (default: that of h)."""
    if not H.is_near_identity:
        raise NonInvertibleError("invert expects a map with identity linear part")
    h = H.periodic
    cutoff = h.cutoff if cutoff is None else cutoff
    if h.is_zero():
        return TorusMap.identity(H.d, cutoff)
    lip = dh_sup(h)
    if lip >= kappa:
        raise NonInvertibleError(f"sup |Dh| = {lip:.3g} is not below {kappa}")
    M = grid_size(max(cutoff, h.cutoff), 2.0)
    y = grid_points(H.d, M)
    p = inverse_points(h, y, max_iters)
    k = _to_field(p - y, H.d, M, cutoff)
    _warn_tail(k, alias_tol, "invert")
    return TorusMap.near_identity(k)


def inverse_residual(H: TorusMap, Hinv: TorusMap, M: int | None = None) -> float:
    """Sup over a grid of the torus distance |H(Hinv(y)) - y|."""
    M = M or grid_size(max(H.cutoff, Hinv.cutoff), 2.0)
    y = grid_points(H.d, M)
    return float(torus_dist(H(Hinv(y)), y).max())


def conjugate_action(H: TorusMap, Atil: TorusMap, vtil: SpectralField, cutoff: int,
                     max_iters: int = 100, alias_tol: float = 1e-9):
    """(H o Atil o H^-1, (DH . vtil) o H^-1), both projected to ``cutoff``.

    Everything is evaluated directly at the inverse points p = H^-1(y) of a
    uniform grid, so H^-1 itself is never truncated.
    """
    if not H.is_near_identity:
        raise NonInvertibleError("conjugation expects a map with identity linear part")
    h = H.periodic
    if h.is_zero():
        return Atil.with_cutoff(cutoff), vtil.with_cutoff(cutoff)
    d = H.d
    A = Atil.linear.astype(float)
    M = grid_size(cutoff, 2.0)
    y = grid_points(d, M)
    p = inverse_points(h, y, max_iters)
    fp, vp, *dh = evaluate_many([Atil.periodic, vtil] + partials(h), p)
    image = p @ A.T + fp
    hq = evaluate(h, image)
    f_new = (p - y) @ A.T + fp + hq
    J = np.stack(dh, axis=-1)  # (points, i, j)
    v_new = vp + np.einsum("pij,pj->pi", J, vp)
    f_field = _to_field(f_new, d, M, cutoff)
    v_field = _to_field(v_new, d, M, cutoff)
    _warn_tail(f_field, alias_tol, "conjugate map")
    _warn_tail(v_field, alias_tol, "conjugate flow")
    return TorusMap(Atil.linear, f_field), v_field
