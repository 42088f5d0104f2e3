"""Input actions: affine models, seeded conjugated perturbations and their checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffeo import TorusMap, conjugate_action, dh_sup, torus_dist
from .errors import InputError, NonInvertibleError
from .spectral_field import (
    SpectralField,
    evaluate,
    evaluate_many,
    grid_points,
    grid_size,
    mode_table,
    partials,
)
from .torus_algebra import EigenData, as_integer_matrix

__all__ = [
    "ActionPair",
    "make_affine",
    "random_field",
    "make_conjugated_perturbation",
    "group_relation_residual",
    "normalize_input",
    "flow_integrate",
    "torus_dist",
]


@dataclass(frozen=True, eq=False)
class ActionPair:
    """Generators of a Z x_lam R action: the map Atil and the flow field vtil."""

    Atil: TorusMap
    vtil: SpectralField
    lam: float

    @property
    def d(self) -> int:
        return self.vtil.d

    @property
    def cutoff(self) -> int:
        return max(self.Atil.cutoff, self.vtil.cutoff)


def make_affine(A, v, cutoff: int = 0, tol: float = 1e-10) -> ActionPair:
    A = as_integer_matrix(A)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise InputError("flow vector must be nonzero")
    Av = A @ v
    lam = float(Av @ v / (v @ v))
    if np.linalg.norm(Av - lam * v) > tol * max(1.0, nv):
        raise InputError("v is not an eigenvector of A")
    return ActionPair(TorusMap(A, SpectralField.zeros(len(v), cutoff)),
                      SpectralField.constant(v, cutoff), lam)


def random_field(d: int, seed: int, max_mode: int, amplitude: float, decay: float,
                 cutoff: int | None = None) -> SpectralField:
    """Seeded field with coefficient amplitude * exp(-decay |n|) * (z1 + i z2) / sqrt(2).

    The draws run over the canonical half-ball |n| <= max_mode (zero mode
    first, real); conjugate symmetry supplies the other half.
    """
    rng = np.random.default_rng(seed)
    modes = mode_table(d, max_mode)
    z = rng.standard_normal((len(modes), d)) + 1j * rng.standard_normal((len(modes), d))
    weights = amplitude * np.exp(-decay * np.sqrt((modes ** 2).sum(1)))
    coeffs = weights[:, None] * z / np.sqrt(2.0)
    coeffs[0] = coeffs[0].real
    g = SpectralField(coeffs, max_mode)
    return g if cutoff is None else g.with_cutoff(cutoff)


def make_conjugated_perturbation(A, v, seed: int = 1, max_mode: int = 3, amplitude: float = 1e-3,
                                 decay: float = 1.0, cutoff: int = 64, time_scale: float = 1.0):
    """Conjugate the affine action (A, time_scale * v) by G = Id + g.

    Returns the pair (G o A o G^-1, (DG . v) o G^-1) and the ground-truth G.
    """
    A = as_integer_matrix(A)
    v = np.asarray(v, dtype=float)
    affine = make_affine(A, time_scale * v, cutoff)
    g = random_field(len(v), seed, max_mode, amplitude, decay)
    if dh_sup(g) >= 0.5:
        raise NonInvertibleError("generator field is too large: sup |Dg| >= 1/2")
    G = TorusMap.near_identity(g)
    Atil, vtil = conjugate_action(G, affine.Atil, affine.vtil, cutoff)
    return ActionPair(Atil, vtil, affine.lam), G


def group_relation_residual(pair: ActionPair, A=None, lam: float | None = None,
                            rho: float = 2.0) -> float:
    """Grid sup of (A + Df) . vtil - lam * vtil o (A + f)."""
    A = pair.Atil.linear if A is None else as_integer_matrix(A)
    lam = pair.lam if lam is None else lam
    f, vt = pair.Atil.periodic, pair.vtil
    d = pair.d
    M = grid_size(pair.cutoff, rho)
    y = grid_points(d, M)
    vals, fy, *df = evaluate_many([vt, f] + partials(f), y)
    J = np.stack(df, axis=-1)
    lhs = vals @ A.T + np.einsum("pij,pj->pi", J, vals)
    rhs = lam * evaluate(vt, y @ A.T + fy)
    return float(np.linalg.norm(lhs - rhs, axis=1).max())


def normalize_input(pair: ActionPair, eig: EigenData, rescale: bool = True):
    """Split the flow as vtil * scale = v0 + w with v0 in V and w(0) in V_perp.

    With ``rescale`` the time is changed so that v0 is a unit eigenvector
    (scale = 1 / |alpha| where P_V mean(vtil) = alpha * v_unit); otherwise
    scale = 1 and v0 = P_V mean(vtil).  Returns (ActionState, scale).
    """
    from .kam_engine import ActionState

    mean = pair.vtil.mean
    alpha = float(eig.V_basis[0] @ (eig.P_V @ mean))
    if abs(alpha) < 1e-12:
        raise InputError("the mean flow has no component along the eigendirection")
    scale = 1.0 / abs(alpha) if rescale else 1.0
    v0 = scale * alpha * eig.v_unit
    w = pair.vtil * scale - v0
    vnorm = float(np.linalg.norm(v0))
    if not 0.5 <= vnorm <= 2.0:
        raise InputError(f"|v0| = {vnorm:.3g} is outside [1/2, 2]")
    state = ActionState(eig.A, eig, pair.Atil.periodic, v0, w)
    return state, scale


def flow_integrate(vtil: SpectralField, x0, t: float, dt: float = 1e-3) -> np.ndarray:
    """Classical RK4 for x' = vtil(x); returns lifted coordinates (not reduced mod 1)."""
    if dt > 1e-2:
        raise InputError("dt must be at most 1e-2")
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    if t == 0:
        return x
    steps = max(1, int(np.ceil(abs(t) / dt - 1e-12)))
    h = t / steps

    def rhs(p):
        return evaluate(vtil, p)

    for _ in range(steps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
