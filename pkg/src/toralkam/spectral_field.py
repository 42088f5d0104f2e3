"""Trigonometric polynomials T^d -> R^d.

A field is stored on the canonical half of the Euclidean frequency ball
{|n| <= cutoff}: the zero mode first, then every n whose first nonzero
entry is positive.  The coefficient at -n is the conjugate of the one at
n, so reality holds by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import AliasingError

TWO_PI = 2.0 * np.pi

try:
    import finufft
except ImportError:  # pragma: no cover - exercised only without the wheel
    finufft = None


# ----------------------------------------------------------------------------
# frequency tables

@lru_cache(maxsize=None)
def mode_table(d: int, cutoff: int) -> np.ndarray:
    """Canonical half-ball of integer frequencies, zero mode first."""
    r = np.arange(-cutoff, cutoff + 1)
    pts = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    inside = (pts ** 2).sum(1) <= cutoff * cutoff
    first = np.argmax(pts != 0, axis=1)
    lead = pts[np.arange(len(pts)), first]
    pts = pts[inside & (lead > 0)]
    order = np.lexsort(tuple(pts[:, ::-1].T) + ((pts ** 2).sum(1),))
    modes = np.vstack([np.zeros((1, d), dtype=np.int64), pts[order].astype(np.int64)])
    modes.setflags(write=False)
    return modes


@lru_cache(maxsize=None)
def _lookup(d: int, cutoff: int):
    """Dense (2c+1)^d tables: canonical row of +-n and whether n is the conjugate twin."""
    modes = mode_table(d, cutoff)
    shape = (2 * cutoff + 1,) * d
    idx = np.full(shape, -1, dtype=np.int64)
    conj = np.zeros(shape, dtype=bool)
    rows = np.arange(len(modes))
    neg = tuple((cutoff - modes).T)
    idx[neg] = rows
    conj[neg] = True
    pos = tuple((cutoff + modes).T)
    idx[pos] = rows
    conj[pos] = False
    idx.setflags(write=False)
    conj.setflags(write=False)
    return idx, conj


def locate(modes: np.ndarray, cutoff: int):
    """Rows and conjugation flags of arbitrary integer frequencies in a cutoff table.

    Frequencies outside the ball get row -1.
    """
    modes = np.asarray(modes, dtype=np.int64)
    d = modes.shape[1]
    idx, conj = _lookup(d, cutoff)
    inbox = np.all(np.abs(modes) <= cutoff, axis=1)
    rows = np.full(len(modes), -1, dtype=np.int64)
    flags = np.zeros(len(modes), dtype=bool)
    sel = tuple((modes[inbox] + cutoff).T)
    rows[inbox] = idx[sel]
    flags[inbox] = conj[sel]
    flags[rows < 0] = False
    return rows, flags


@lru_cache(maxsize=None)
def _reindex(d: int, src: int, dst: int) -> np.ndarray:
    rows, _ = locate(mode_table(d, dst), src)
    rows.setflags(write=False)
    return rows


def grid_size(cutoff: int, rho: float = 2.0) -> int:
    """Smallest power of two >= rho * (2 * cutoff + 1)."""
    need = max(1, math.ceil(rho * (2 * cutoff + 1) - 1e-9))
    return 1 << (need - 1).bit_length()


def next_pow2(n: int) -> int:
    return 1 << (max(1, int(n)) - 1).bit_length()


def grid_points(d: int, M: int) -> np.ndarray:
    """Uniform grid j / M on [0, 1)^d, shape (M**d, d), 'ij' ordering."""
    axis = np.arange(M) / M
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


# ----------------------------------------------------------------------------
# the field type

class SpectralField:
    """Real trigonometric polynomial with values in R^d.

    ``coeffs[i]`` is the complex d-vector at frequency ``modes[i]``.
    ``tail`` records the largest coefficient dropped when the field was
    produced by truncation (0 for exactly constructed fields).
    """

    __slots__ = ("d", "cutoff", "coeffs", "tail")

    def __init__(self, coeffs, cutoff: int, tail: float = 0.0):
        coeffs = np.array(coeffs, dtype=complex)
        if coeffs.ndim != 2:
            raise ValueError("coeffs must have shape (n_modes, d)")
        d = coeffs.shape[1]
        if coeffs.shape[0] != len(mode_table(d, cutoff)):
            raise ValueError(
                f"expected {len(mode_table(d, cutoff))} rows for d={d}, cutoff={cutoff}, "
                f"got {coeffs.shape[0]}"
            )
        zero = coeffs[0]
        if np.any(np.abs(zero.imag) > 1e-12 * max(1.0, np.abs(zero).max())):
            raise ValueError("the zero-frequency coefficient of a real field must be real")
        coeffs[0] = zero.real
        coeffs.setflags(write=False)
        self.d = d
        self.cutoff = int(cutoff)
        self.coeffs = coeffs
        self.tail = float(tail)

    # -- construction ------------------------------------------------------
    @classmethod
    def zeros(cls, d: int, cutoff: int = 0) -> "SpectralField":
        return cls(np.zeros((len(mode_table(d, cutoff)), d)), cutoff)

    @classmethod
    def constant(cls, c, cutoff: int = 0) -> "SpectralField":
        c = np.asarray(c, dtype=float)
        out = np.zeros((len(mode_table(len(c), cutoff)), len(c)), dtype=complex)
        out[0] = c
        return cls(out, cutoff)

    @classmethod
    def from_modes(cls, entries: dict, d: int | None = None, cutoff: int | None = None) -> "SpectralField":
        """Build from ``{n: coefficient}``; either of n / -n may be given (or both, if conjugate)."""
        items = [(tuple(int(x) for x in n), np.asarray(c, dtype=complex)) for n, c in entries.items()]
        if d is None:
            if not items:
                raise ValueError("d is required for an empty field")
            d = len(items[0][0])
        need = max((math.ceil(math.sqrt(sum(x * x for x in n)) - 1e-12) for n, _ in items), default=0)
        cutoff = need if cutoff is None else cutoff
        if need > cutoff:
            raise ValueError(f"frequency outside cutoff {cutoff}")
        out = np.zeros((len(mode_table(d, cutoff)), d), dtype=complex)
        seen = np.zeros(len(out), dtype=bool)
        rows, flags = locate(np.array([n for n, _ in items], dtype=np.int64).reshape(-1, d), cutoff)
        for (n, c), row, flip in zip(items, rows, flags):
            val = np.conj(c) if flip else c
            if seen[row] and not np.allclose(out[row], val, rtol=1e-12, atol=1e-14):
                raise ValueError(f"coefficients at {n} and its negative are not conjugate")
            out[row] = val
            seen[row] = True
        return cls(out, cutoff)

    # -- basic accessors ---------------------------------------------------
    @property
    def modes(self) -> np.ndarray:
        return mode_table(self.d, self.cutoff)

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[0].real.copy()

    def coefficient(self, n) -> np.ndarray:
        rows, flags = locate(np.asarray(n, dtype=np.int64).reshape(1, -1), self.cutoff)
        if rows[0] < 0:
            return np.zeros(self.d, dtype=complex)
        c = self.coeffs[rows[0]]
        return np.conj(c) if flags[0] else c.copy()

    def items(self):
        """Nonzero (n, coefficient) pairs over the stored half-ball."""
        nz = np.flatnonzero(np.any(self.coeffs != 0, axis=1))
        for i in nz:
            yield tuple(int(x) for x in self.modes[i]), self.coeffs[i]

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def with_cutoff(self, cutoff: int) -> "SpectralField":
        if cutoff == self.cutoff:
            return self
        rows = _reindex(self.d, self.cutoff, cutoff)
        out = np.zeros((len(rows), self.d), dtype=complex)
        ok = rows >= 0
        out[ok] = self.coeffs[rows[ok]]
        tail = self.tail
        if cutoff < self.cutoff:
            keep = np.zeros(len(self.coeffs), dtype=bool)
            keep[rows[ok]] = True
            dropped = np.linalg.norm(self.coeffs[~keep], axis=1)
            tail = max(tail, float(dropped.max(initial=0.0)))
        return SpectralField(out, cutoff, tail)

    def with_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(coeffs, self.cutoff)

    def with_mean(self, c) -> "SpectralField":
        out = self.coeffs.copy()
        out[0] = np.asarray(c, dtype=float)
        return SpectralField(out, self.cutoff, self.tail)

    def without_mean(self) -> "SpectralField":
        return self.with_mean(np.zeros(self.d))

    # -- arithmetic --------------------------------------------------------
    def _aligned(self, other: "SpectralField"):
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        N = max(self.cutoff, other.cutoff)
        return self.with_cutoff(N), other.with_cutoff(N), N

    def __add__(self, other):
        if not isinstance(other, SpectralField):
            return self.with_mean(self.mean + np.asarray(other, dtype=float))
        a, b, N = self._aligned(other)
        return SpectralField(a.coeffs + b.coeffs, N, max(a.tail, b.tail))

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, SpectralField):
            return self.with_mean(self.mean - np.asarray(other, dtype=float))
        a, b, N = self._aligned(other)
        return SpectralField(a.coeffs - b.coeffs, N, max(a.tail, b.tail))

    def __neg__(self):
        return SpectralField(-self.coeffs, self.cutoff, self.tail)

    def __mul__(self, s):
        return SpectralField(self.coeffs * float(s), self.cutoff, abs(float(s)) * self.tail)

    __rmul__ = __mul__

    def apply_matrix(self, M) -> "SpectralField":
        """Pointwise x -> M @ f(x)."""
        M = np.asarray(M, dtype=float)
        return SpectralField(self.coeffs @ M.T, self.cutoff, self.tail)

    def allclose(self, other: "SpectralField", atol: float = 1e-12) -> bool:
        a, b, _ = self._aligned(other)
        return bool(np.all(np.abs(a.coeffs - b.coeffs) <= atol))

    def max_coeff_diff(self, other: "SpectralField") -> float:
        a, b, _ = self._aligned(other)
        return float(np.abs(a.coeffs - b.coeffs).max(initial=0.0))

    def __repr__(self):
        return f"SpectralField(d={self.d}, cutoff={self.cutoff}, nonzero={sum(1 for _ in self.items())})"

    # -- grids -------------------------------------------------------------
    def spectrum_on_grid(self, M: int) -> np.ndarray:
        """Full complex spectrum laid out for an M-point FFT per axis, shape (d, M, ..., M)."""
        if M < 2 * self.cutoff + 1:
            raise AliasingError(f"grid of {M} points cannot carry cutoff {self.cutoff}")
        F = np.zeros((self.d,) + (M,) * self.d, dtype=complex)
        pos = tuple((self.modes % M).T)
        neg = tuple((-self.modes % M).T)
        for c in range(self.d):
            F[(c,) + neg] = np.conj(self.coeffs[:, c])
            F[(c,) + pos] = self.coeffs[:, c]
        return F

    def to_grid(self, M: int) -> np.ndarray:
        """Exact samples on the M^d grid, shape (d, M, ..., M)."""
        F = self.spectrum_on_grid(M)
        axes = tuple(range(1, self.d + 1))
        return sfft.ifftn(F, axes=axes, norm="forward").real

    @classmethod
    def from_grid(cls, values: np.ndarray, cutoff: int) -> "SpectralField":
        """Discrete Fourier analysis of grid samples truncated to ``cutoff``.

        The largest discarded coefficient is kept in ``tail``.
        """
        values = np.asarray(values, dtype=float)
        d = values.shape[0]
        M = values.shape[1]
        if M < 2 * cutoff + 1:
            raise AliasingError(f"grid of {M} points cannot carry cutoff {cutoff}")
        axes = tuple(range(1, d + 1))
        F = sfft.fftn(values, axes=axes, norm="forward")
        modes = mode_table(d, cutoff)
        pos = tuple((modes % M).T)
        coeffs = np.stack([F[(c,) + pos] for c in range(d)], axis=1)
        mag = np.sqrt((np.abs(F) ** 2).sum(0))
        mag[pos] = 0.0
        mag[tuple((-modes % M).T)] = 0.0
        return cls(coeffs, cutoff, tail=float(mag.max()))

    def dense_cube(self) -> np.ndarray:
        """Full coefficients on the box [-cutoff, cutoff]^d, shape (d, 2c+1, ..., 2c+1)."""
        N = self.cutoff
        cube = np.zeros((self.d,) + (2 * N + 1,) * self.d, dtype=complex)
        pos = tuple((self.modes + N).T)
        neg = tuple((N - self.modes).T)
        for c in range(self.d):
            cube[(c,) + neg] = np.conj(self.coeffs[:, c])
            cube[(c,) + pos] = self.coeffs[:, c]
        return cube


@dataclass(frozen=True, eq=False)
class GridSample:
    """Samples of a field on a uniform power-of-two grid.

    ``values`` has shape (d, M, ..., M); ``cutoff`` is the spectral cutoff
    the samples stand for.
    """

    values: np.ndarray
    cutoff: int

    def __post_init__(self):
        M = self.values.shape[1]
        if M & (M - 1):
            raise AliasingError(f"grid size {M} is not a power of two")
        if self.rho < 2.0:
            raise AliasingError(
                f"grid of {M} points is too coarse for cutoff {self.cutoff} (oversampling {self.rho:.2f} < 2)"
            )

    @property
    def grid_size(self) -> int:
        return self.values.shape[1]

    @property
    def rho(self) -> float:
        return self.grid_size / (2 * self.cutoff + 1)


def transform(x, rho: float = 2.0):
    """Field -> GridSample (synthesis) or GridSample -> field (analysis)."""
    if isinstance(x, SpectralField):
        M = grid_size(x.cutoff, rho)
        return GridSample(x.to_grid(M), x.cutoff)
    if isinstance(x, GridSample):
        return SpectralField.from_grid(x.values, x.cutoff)
    raise TypeError(f"cannot transform {type(x).__name__}")


# ----------------------------------------------------------------------------
# norms

def coefficient_norms(f: SpectralField) -> np.ndarray:
    return np.sqrt((np.abs(f.coeffs) ** 2).sum(1))


def seminorm(f: SpectralField, r: float) -> float:
    """sup over n != 0 of |f^(n)| * |n|^r."""
    if len(f.coeffs) < 2:
        return 0.0
    mags = coefficient_norms(f)[1:]
    radii = np.sqrt((f.modes[1:] ** 2).sum(1))
    return float((mags * radii ** r).max())


def multi_indices(d: int, order: int):
    for total in range(order + 1):
        for alpha in itertools.product(range(total + 1), repeat=d):
            if sum(alpha) == total:
                yield alpha


def _derivative_factor(modes: np.ndarray, alpha) -> np.ndarray:
    fac = np.ones(len(modes), dtype=complex)
    for j, a in enumerate(alpha):
        if a:
            fac *= (TWO_PI * 1j * modes[:, j]) ** a
    return fac


def cr_norms(f: SpectralField, orders=(0, 1), rho: float = 4.0) -> dict:
    """C^l norms for several l at once: max over |alpha| <= l of the grid sup of |d^alpha f|."""
    top = max(orders)
    if f.is_zero():
        return {l: 0.0 for l in orders}
    M = grid_size(f.cutoff, rho)
    axes = tuple(range(1, f.d + 1))
    base = f.spectrum_on_grid(M)
    # two real components share one complex transform: ifft(Sa + i Sb) = fa + i fb
    packed = [base[i] + 1j * base[i + 1] for i in range(0, f.d - 1, 2)]
    if f.d % 2:
        packed.append(base[-1])
    packed = np.stack(packed)
    k = TWO_PI * 1j * np.fft.fftfreq(M, 1.0 / M)
    sup_by_order = np.zeros(top + 1)
    for alpha in multi_indices(f.d, top):
        spec = packed
        for j, a in enumerate(alpha):
            if a:
                shape = [1] * (f.d + 1)
                shape[j + 1] = M
                spec = spec * (k ** a).reshape(shape)
        vals = sfft.ifftn(spec, axes=axes, norm="forward")
        sq = (vals.real ** 2).sum(0)
        if f.d > 1:
            sq = sq + (vals.imag[: f.d // 2] ** 2).sum(0)
        o = sum(alpha)
        sup_by_order[o] = max(sup_by_order[o], float(np.sqrt(sq.max())))
    running = np.maximum.accumulate(sup_by_order)
    return {l: float(running[l]) for l in orders}


def cr_norm(f: SpectralField, r: int, rho: float = 4.0) -> float:
    return cr_norms(f, (r,), rho)[r]


def sup_norm(f: SpectralField, rho: float = 4.0) -> float:
    return cr_norms(f, (0,), rho)[0]


# ----------------------------------------------------------------------------
# differentiation

def derivative(f: SpectralField, alpha) -> SpectralField:
    fac = _derivative_factor(f.modes, alpha)
    return SpectralField(f.coeffs * fac[:, None], f.cutoff)


def partials(f: SpectralField) -> list[SpectralField]:
    """[d f / d x_j for j in range(d)]."""
    return [derivative(f, tuple(int(i == j) for i in range(f.d))) for j in range(f.d)]


def directional_derivative(h: SpectralField, u) -> SpectralField:
    """Dh . u for a constant vector u: coefficients h^(n) * 2 pi i <n, u>."""
    u = np.asarray(u, dtype=float)
    fac = TWO_PI * 1j * (h.modes @ u)
    return SpectralField(h.coeffs * fac[:, None], h.cutoff)


def jacobian_apply(h: SpectralField, w: SpectralField, cutoff: int | None = None) -> SpectralField:
    """Dh(x) . w(x) by pointwise products on a grid wide enough for the full product band."""
    band = h.cutoff + w.cutoff
    out_cutoff = band if cutoff is None else cutoff
    M = grid_size(max(band, out_cutoff), 2.0)
    wv = w.to_grid(M)
    acc = np.zeros_like(wv)
    for j, dh in enumerate(partials(h)):
        acc += dh.to_grid(M) * wv[j]
    return SpectralField.from_grid(acc, out_cutoff)


# ----------------------------------------------------------------------------
# evaluation at arbitrary points

def eval_at(f: SpectralField, points, chunk: int = 2_000_000) -> np.ndarray:
    """Direct summation of the Fourier series at arbitrary points, shape (P, d)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((len(pts), f.d))
    modes = f.modes.astype(float)
    zero = f.coeffs[0].real
    rest = f.coeffs[1:]
    step = max(1, chunk // max(1, len(modes)))
    for s in range(0, len(pts), step):
        phase = np.exp(TWO_PI * 1j * (pts[s:s + step] @ modes[1:].T))
        out[s:s + step] = zero + 2.0 * (phase @ rest).real
    return out


_NUFFT = {1: "nufft1d2", 2: "nufft2d2", 3: "nufft3d2"}


def evaluate(f: SpectralField, points, eps: float = 1e-15) -> np.ndarray:
    """Fast evaluation at many points (type-2 NUFFT when available), shape (P, d)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if finufft is None or f.d not in _NUFFT or len(pts) < 512 or f.cutoff == 0:
        return eval_at(f, pts)
    coords = [TWO_PI * np.mod(pts[:, j], 1.0) for j in range(f.d)]
    cube = f.dense_cube()
    fn = getattr(finufft, _NUFFT[f.d])
    vals = fn(*coords, cube, isign=1, eps=eps)
    return np.ascontiguousarray(vals.real.T)


def evaluate_many(fields, points, eps: float = 1e-15) -> list[np.ndarray]:
    """Evaluate several fields at the same points with one batched transform."""
    fields = list(fields)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    N = max(f.cutoff for f in fields)
    if finufft is None or d not in _NUFFT or len(pts) < 512 or N == 0:
        return [eval_at(f, pts) for f in fields]
    cube = np.concatenate([f.with_cutoff(N).dense_cube() for f in fields], axis=0)
    coords = [TWO_PI * np.mod(pts[:, j], 1.0) for j in range(d)]
    vals = getattr(finufft, _NUFFT[d])(*coords, cube, isign=1, eps=eps).real
    return [np.ascontiguousarray(vals[i * d:(i + 1) * d].T) for i in range(len(fields))]


# ----------------------------------------------------------------------------
# smoothing operators

KINDS = ("S", "Sdot", "T", "Tdot", "Tsharp", "Tsharpdot")


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """One member of the truncation family.

    S keeps 0 < |n| <= N; T additionally needs 0 < |(A^T)^-1 n| <= N;
    Tsharp additionally needs 0 < |A^T n| <= N.  The ``dot`` kinds keep the
    complement minus the zero mode.
    """

    kind: str
    N: int
    A: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind.startswith("T") and self.A is None:
            raise ValueError(f"operator {self.kind} needs the automorphism A")

    @property
    def dotted(self) -> bool:
        return self.kind.endswith("dot")

    @property
    def base(self) -> str:
        return self.kind[:-3] if self.dotted else self.kind

    @property
    def inner_radius(self) -> float:
        """Radius M with {0 < |n| <= M} inside the kept set."""
        if self.base == "S":
            return float(self.N)
        A = np.asarray(self.A, dtype=float)
        return self.N / max(np.linalg.norm(A, 2), np.linalg.norm(np.linalg.inv(A), 2))


def frequency_set(op: OperatorSpec, modes: np.ndarray) -> np.ndarray:
    """Membership of each frequency in the undotted set, exact integer arithmetic."""
    modes = np.asarray(modes, dtype=np.int64)
    N2 = int(op.N) ** 2
    n2 = (modes ** 2).sum(1)
    keep = (n2 > 0) & (n2 <= N2)
    if op.base != "S":
        from .torus_algebra import as_integer_matrix, integer_inverse

        A = as_integer_matrix(op.A)
        # row form: (A^T n)^T = n^T A,  ((A^T)^-1 n)^T = n^T A^-1
        image = modes @ (integer_inverse(A) if op.base == "T" else A)
        m2 = (image ** 2).sum(1)
        keep &= (m2 > 0) & (m2 <= N2)
    return keep


def smooth_project(f: SpectralField, op: OperatorSpec) -> SpectralField:
    keep = frequency_set(op, f.modes)
    if op.dotted:
        keep = ~keep
        keep[0] = False
    return SpectralField(np.where(keep[:, None], f.coeffs, 0), f.cutoff)


def pushforward(g: SpectralField, A, cutoff: int | None = None) -> SpectralField:
    """g o A for an integer matrix A by exact relabelling n -> A^T n."""
    A = np.asarray(A, dtype=np.int64)
    image = g.modes @ A
    need = int(math.ceil(np.sqrt((image ** 2).sum(1)).max(initial=0.0) - 1e-12))
    target = need if cutoff is None else cutoff
    rows, flip = locate(image, target)
    out = np.zeros((len(mode_table(g.d, target)), g.d), dtype=complex)
    ok = rows >= 0
    vals = np.where(flip[:, None], np.conj(g.coeffs), g.coeffs)
    out[rows[ok]] = vals[ok]
    dropped = coefficient_norms(g)[~ok]
    return SpectralField(out, target, max(g.tail, float(dropped.max(initial=0.0))))
