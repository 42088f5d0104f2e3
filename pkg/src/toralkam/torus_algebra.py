"""Integer matrix algebra for toral automorphisms.

Exact characteristic polynomials and irreducibility over the rationals,
the eigen-splitting R^d = V + V_perp used throughout the KAM scheme, and
a brute-force Diophantine certificate for the flow direction.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import DegenerateDivisorWarning, DimensionError, InputError, UnsupportedSpectrumError


def as_integer_matrix(M) -> np.ndarray:
    arr = np.asarray(getattr(M, "entries", M))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {arr.shape}")
    rounded = np.rint(np.asarray(arr, dtype=float))
    if not np.array_equal(rounded, np.asarray(arr, dtype=float)):
        raise InputError("matrix entries must be integers")
    return rounded.astype(np.int64)


def integer_det(M) -> int:
    """Exact determinant by fraction-free (Bareiss) elimination."""
    a = [[int(x) for x in row] for row in as_integer_matrix(M)]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def integer_inverse(M) -> np.ndarray:
    """Inverse of a unimodular integer matrix, verified exactly."""
    A = as_integer_matrix(M)
    det = integer_det(A)
    if abs(det) != 1:
        raise InputError(f"matrix is not invertible over the integers (det = {det})")
    inv = np.rint(np.linalg.inv(A.astype(float))).astype(np.int64)
    if not np.array_equal(A @ inv, np.eye(len(A), dtype=np.int64)):
        raise InputError("integer inverse failed exact verification")
    return inv


def charpoly(M) -> list[int]:
    """Integer characteristic polynomial det(tI - M), highest degree first.

    Faddeev-LeVerrier in exact integer arithmetic; every division is exact.
    """
    A = [[int(x) for x in row] for row in as_integer_matrix(M)]
    n = len(A)
    coeffs = [1]
    Mk = [[0] * n for _ in range(n)]
    c = 1
    for k in range(1, n + 1):
        # Mk <- A @ Mk + c * I
        Mk = [[sum(A[i][l] * Mk[l][j] for l in range(n)) + (c if i == j else 0)
               for j in range(n)] for i in range(n)]
        AM = [[sum(A[i][l] * Mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        tr = sum(AM[i][i] for i in range(n))
        assert tr % k == 0
        c = -tr // k
        coeffs.append(c)
    return coeffs


def _poly_divmod_monic(p: list[int], q: list[int]) -> list[int]:
    """Remainder of p by monic q (integer coefficients, highest degree first)."""
    r = list(p)
    dq = len(q) - 1
    for i in range(len(r) - dq):
        lead = r[i]
        if lead:
            for j in range(1, dq + 1):
                r[i + j] -= lead * q[j]
        r[i] = 0
    return r[len(r) - dq:]


def _divisors(n: int) -> list[int]:
    n = abs(n)
    ds = [x for x in range(1, math.isqrt(n) + 1) if n % x == 0]
    ds = sorted(set(ds + [n // x for x in ds]))
    return ds + [-x for x in ds]


def find_factor(p: list[int]) -> list[int] | None:
    """Search for a monic integer factor of degree 1..deg(p)//2.

    Coefficients are bounded by Mignotte's bound |q_j| <= C(k, j) * ||p||_2,
    and the constant term must divide p's constant term.
    """
    deg = len(p) - 1
    if deg >= 1 and p[-1] == 0:
        return [1, 0]
    norm2 = math.sqrt(sum(c * c for c in p))
    for k in range(1, deg // 2 + 1):
        bounds = [math.floor(math.comb(k, j) * norm2) for j in range(1, k)]
        middle = [range(-b, b + 1) for b in bounds]
        for const in _divisors(p[-1]):
            for mid in itertools.product(*middle):
                q = [1, *mid, const]
                if not any(_poly_divmod_monic(p, q)):
                    return q
    return None


def check_irreducible(M) -> bool:
    """True iff the characteristic polynomial of M is irreducible over Q."""
    return find_factor(charpoly(M)) is None


@dataclass(frozen=True, eq=False)
class ToralAutomorphism:
    entries: np.ndarray
    dimension: int = field(init=False)
    determinant: int = field(init=False)

    def __post_init__(self):
        A = as_integer_matrix(self.entries)
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)
        object.__setattr__(self, "dimension", A.shape[0])
        object.__setattr__(self, "determinant", integer_det(A))

    @classmethod
    def validated(cls, M) -> "ToralAutomorphism":
        A = cls(M)
        if abs(A.determinant) != 1:
            raise InputError(f"|det A| must be 1, got {A.determinant}")
        if not check_irreducible(A.entries):
            raise InputError("characteristic polynomial of A is reducible over Q")
        return A

    @property
    def inverse(self) -> np.ndarray:
        return integer_inverse(self.entries)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))


@dataclass(frozen=True, eq=False)
class EigenData:
    """Eigen-splitting around a real simple eigenvalue.

    Vperp_basis holds d-1 orthonormal rows spanning the complementary
    A-invariant subspace (the sum of the other eigenspaces).
    """

    A: np.ndarray
    lam: float
    v_unit: np.ndarray
    V_basis: np.ndarray
    Vperp_basis: np.ndarray
    P_V: np.ndarray
    P_Vperp: np.ndarray
    restricted: np.ndarray
    perp_gap: float

    @property
    def d(self) -> int:
        return len(self.v_unit)

    def project(self, u, which: str = "V") -> np.ndarray:
        return project(self, u, which)

    def solve_perp(self, rhs) -> np.ndarray:
        """Solve (A - lam Id) x = P_Vperp rhs for x in V_perp."""
        rhs = self.P_Vperp @ np.asarray(rhs, dtype=float)
        y = np.linalg.solve(self.restricted, self.Vperp_basis @ rhs)
        return self.Vperp_basis.T @ y


def _sign_normalize(u: np.ndarray) -> np.ndarray:
    u = u / np.linalg.norm(u)
    nz = np.flatnonzero(np.abs(u) > 1e-14)
    if len(nz) and u[nz[0]] < 0:
        u = -u
    return u


def _real_roots(coeffs: list[int]) -> tuple[np.ndarray, np.ndarray]:
    c = np.array(coeffs, dtype=float)
    roots = np.roots(c)
    slope = np.polyval(np.polyder(c), roots)
    safe = np.abs(slope) > 1e-12
    polished = roots.copy()
    polished[safe] -= np.polyval(c, roots[safe]) / slope[safe]
    return roots, polished


def eigen_decompose(A, which="largest") -> EigenData:
    """Eigen-splitting for a real simple eigenvalue of A.

    ``which`` is ``"largest"`` / ``"smallest"`` (by modulus among the real
    eigenvalues) or a number, in which case the nearest real eigenvalue is
    taken.
    """
    if isinstance(A, ToralAutomorphism):
        A = A.entries
    A = as_integer_matrix(A)
    d = A.shape[0]
    roots, polished = _real_roots(charpoly(A))
    scale = np.maximum(1.0, np.abs(roots))
    real = np.abs(roots.imag) <= 1e-9 * scale
    if not real.any():
        raise UnsupportedSpectrumError("A has no real eigenvalue")
    cand = np.flatnonzero(real)
    if isinstance(which, str):
        mods = np.abs(roots[cand].real)
        if which == "largest":
            pick = cand[np.argmax(mods)]
        elif which == "smallest":
            pick = cand[np.argmin(mods)]
        else:
            raise ValueError(f"unknown eigenvalue selector {which!r}")
    else:
        target = complex(which)
        if abs(target.imag) > 1e-12:
            raise UnsupportedSpectrumError("complex eigenvalue requested")
        pick = cand[np.argmin(np.abs(roots[cand] - target.real))]
        if abs(roots[pick] - target.real) > 1e-3 * max(1.0, abs(target.real)):
            raise UnsupportedSpectrumError(f"no real eigenvalue near {target.real}")
    others = np.delete(roots, pick)
    if len(others) and np.min(np.abs(others - roots[pick])) < 1e-6 * max(1.0, abs(roots[pick])):
        raise UnsupportedSpectrumError(f"eigenvalue {roots[pick].real:.6g} is repeated")
    lam = float(polished[pick].real)

    Af = A.astype(float)
    shifted = Af - lam * np.eye(d)
    v = _sign_normalize(np.linalg.svd(shifted)[2][-1])
    u = np.linalg.svd(shifted.T)[2][-1]
    residual = np.linalg.norm(Af @ v - lam * v)
    if residual > 1e-10 * max(1.0, abs(lam)):
        raise UnsupportedSpectrumError(f"eigenvector residual {residual:.2e} too large")

    P_V = np.outer(v, u) / (u @ v)
    P_Vperp = np.eye(d) - P_V
    Q = null_space(u[None, :]).T  # rows: orthonormal basis of ker(u^T) = range(A - lam)
    restricted = Q @ shifted @ Q.T
    gap = float(np.linalg.svd(restricted, compute_uv=False).min()) if d > 1 else math.inf
    for arr in (v, Q, P_V, P_Vperp, restricted):
        arr.setflags(write=False)
    return EigenData(
        A=A, lam=lam, v_unit=v, V_basis=v[None, :], Vperp_basis=Q,
        P_V=P_V, P_Vperp=P_Vperp, restricted=restricted, perp_gap=gap,
    )


def project(E: EigenData, u, which: str = "V") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if which == "V":
        return E.P_V @ u
    if which in ("Vperp", "V_perp", "perp"):
        return E.P_Vperp @ u
    raise ValueError(f"unknown subspace {which!r}")


@dataclass(frozen=True)
class DiophantineCertificate:
    """Exhaustive lower-bound surrogate for the Diophantine constant.

    C = min |<k, v>| * |k|^tau over integer k with 0 < |k| <= K (Euclidean).
    The true constant is an infimum over all of Z^d, so C only bounds it
    from above; it certifies the divisors actually used up to cutoff K.
    """

    C: float
    tau: float
    K: int
    argmin_k: tuple[int, ...]
    degenerate: bool = False

    def divisor_floor(self, n_norm: float) -> float:
        return self.C / max(n_norm, 1.0) ** self.tau


def _canonical_sign(k: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(k)
    return -k if len(nz) and k[nz[0]] < 0 else k


def _ball_points(dim: int, K: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((1, 0), dtype=np.int64)
    r = np.arange(-K, K + 1)
    pts = np.stack(np.meshgrid(*([r] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return pts[(pts ** 2).sum(1) <= K * K]


def _split(x: float) -> tuple[float, float]:
    """Veltkamp split x = hi + lo with 26 significant bits in hi."""
    c = 134217729.0 * x
    hi = c - (c - x)
    return hi, x - hi


def _exact_abs_dot(k, v) -> float:
    """|<k, v>| correctly rounded for integer k with |k_i| < 2^26."""
    terms = []
    for ki, vi in zip(k, v):
        hi, lo = _split(float(vi))
        terms += [int(ki) * hi, int(ki) * lo]
    return abs(math.fsum(terms))


def estimate_diophantine(v, tau: float, K: int, floor: float = 1e-8) -> DiophantineCertificate:
    """Minimum of |<k, v>| * |k|^tau over 0 < |k| <= K.

    Exhaustive but pruned: for every prefix of d-1 coordinates only the few
    values of the remaining coordinate (the one where |v| is largest) that
    could beat the current best are examined.
    """
    v = np.asarray(v, dtype=float)
    if K < 1:
        raise ValueError("K must be >= 1")
    if not np.any(v):
        raise ValueError("v must be nonzero")
    d = len(v)
    j = int(np.argmax(np.abs(v)))
    rest = [i for i in range(d) if i != j]
    prefixes = _ball_points(d - 1, K)
    pnorm2 = (prefixes ** 2).sum(1)
    s = prefixes @ v[rest] if rest else np.zeros(len(prefixes))
    t = -s / v[j]
    room = np.floor(np.sqrt(K * K - pnorm2) + 1e-12)

    def assemble(rows, last):
        k = np.empty((len(last), d), dtype=np.int64)
        k[:, rest] = prefixes[rows]
        k[:, j] = last
        return k

    def score(k):
        kf = k.astype(float)
        return np.abs(kf @ v) * np.sqrt((kf * kf).sum(1)) ** tau

    # first pass: nearest-integer completion of every prefix gives an upper bound
    rows = np.arange(len(prefixes))
    last = np.clip(np.rint(t), -room, room).astype(np.int64)
    last[(pnorm2 == 0) & (last == 0)] = 1
    k = assemble(rows, last)
    vals = score(k)
    best = float(vals.min())

    # second pass: every completion inside the window that could still win
    halfwidth = best / (abs(v[j]) * np.maximum(np.sqrt(pnorm2), 1.0) ** tau) + 1e-9
    lo = np.maximum(np.ceil(t - halfwidth), -room).astype(np.int64)
    hi = np.minimum(np.floor(t + halfwidth), room).astype(np.int64)
    width = np.maximum(hi - lo + 1, 0)
    all_k, all_vals = [k], [vals]
    for off in range(int(width.max(initial=0))):
        sel = width > off
        rows = np.flatnonzero(sel)
        cand = lo[sel] + off
        ok = (cand != 0) | (pnorm2[sel] > 0)
        rows, cand = rows[ok], cand[ok]
        kk = assemble(rows, cand)
        all_k.append(kk)
        all_vals.append(score(kk))
    k = np.concatenate(all_k)
    vals = np.concatenate(all_vals)
    # |<k, v>| cancels badly for large k; rescore the contenders exactly
    near = np.flatnonzero(vals <= vals.min() * (1 + 1e-6))
    vals = vals.copy()
    vals[near] = [_exact_abs_dot(kk, v) * math.sqrt(float(kk @ kk)) ** tau for kk in k[near]]
    C = float(vals.min())
    ties = np.flatnonzero(vals == C)
    i = int(ties[np.argmin((k[ties] ** 2).sum(1))])
    argmin = tuple(int(x) for x in _canonical_sign(k[i]))
    degenerate = C < floor
    if degenerate:
        warnings.warn(
            f"v is numerically resonant up to |k| <= {K}: C = {C:.3e} at k = {argmin}",
            DegenerateDivisorWarning, stacklevel=2,
        )
    return DiophantineCertificate(C=C, tau=float(tau), K=int(K), argmin_k=argmin, degenerate=degenerate)
