"""Embedded invariant suites behind ``toralkam selftest``."""

from __future__ import annotations

import numpy as np

from .cohomology import solve_flow_coboundary, solve_zero_mode
from .kam_engine import theoretical_parameters
from .spectral_field import (
    OperatorSpec,
    SpectralField,
    directional_derivative,
    grid_size,
    mode_table,
    seminorm,
    smooth_project,
    transform,
)
from .torus_algebra import eigen_decompose

FIB = np.array([[2, 1], [1, 1]])
CUBIC = np.array([[0, 0, 1], [1, 0, 1], [0, 1, 0]])


def _random_field(rng, d, N, decay=0.3):
    modes = mode_table(d, N)
    weight = np.exp(-decay * np.sqrt((modes ** 2).sum(1)))[:, None]
    c = (rng.standard_normal((len(modes), d)) + 1j * rng.standard_normal((len(modes), d))) * weight
    c[0] = c[0].real
    return SpectralField(c, N)


def suite_smoothing(trials: int = 50, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for A in (FIB, CUBIC):
        d = len(A)
        for _ in range(trials):
            N = int(rng.integers(3, 7))
            f = _random_field(rng, d, N + 3)
            for kind in ("S", "T", "Tsharp"):
                op = OperatorSpec(kind, N, A)
                dot = OperatorSpec(kind + "dot", N, A)
                S, Sd = smooth_project(f, op), smooth_project(f, dot)
                M = op.inner_radius
                for a in (1, 2):
                    for b in (1, 2):
                        worst = max(worst, seminorm(S, a + b) / (N ** b * seminorm(f, a)) - 1)
                        worst = max(worst, seminorm(Sd, a - b) / (M ** -b * seminorm(f, a)) - 1)
                rebuilt = S + Sd + f.mean
                if rebuilt.max_coeff_diff(f) != 0:
                    return False, f"decomposition failed for {kind}"
    return worst <= 1e-12, f"max relative slack {worst:.1e}"


def suite_coboundary() -> tuple[bool, str]:
    eig = eigen_decompose(FIB)
    v = eig.v_unit
    eps = 1e-3
    w = SpectralField.from_modes({(1, 0): [eps / 2, 0.0]}, d=2, cutoff=4)
    h = solve_flow_coboundary(w, v, 4).h
    expected = -(eps / (2 * np.pi * v[0])) / 2 / 1j
    err = abs(h.coefficient((1, 0))[0] - expected)
    resid = np.abs((directional_derivative(h, v) + smooth_project(w, OperatorSpec("S", 4))).coeffs).max()
    return err < 1e-12 and resid < 1e-13, f"coefficient error {err:.1e}, equation residual {resid:.1e}"


def suite_parseval(seed: int = 1) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d, N in ((2, 10), (3, 4)):
        f = _random_field(rng, d, N)
        g = transform(f)
        energy = (g.values ** 2).sum(0).mean()
        coeff = 2 * (np.abs(f.coeffs[1:]) ** 2).sum() + (np.abs(f.coeffs[0]) ** 2).sum()
        worst = max(worst, abs(energy - coeff) / coeff)
        back = transform(g)
        worst = max(worst, back.max_coeff_diff(f) / np.abs(f.coeffs).max())
    return worst < 1e-12, f"max relative error {worst:.1e} (grid {grid_size(10)})"


def suite_projectors() -> tuple[bool, str]:
    worst = 0.0
    for A in (FIB, CUBIC):
        eig = eigen_decompose(A)
        P, Q = eig.P_V, eig.P_Vperp
        I = np.eye(len(A))
        worst = max(worst, np.abs(P @ P - P).max(), np.abs(P + Q - I).max(),
                    np.abs(A @ P - P @ A).max(), np.abs(P @ eig.v_unit - eig.v_unit).max())
        x = np.arange(1.0, len(A) + 1)
        sol = eig.solve_perp(x)
        worst = max(worst, np.abs((A - eig.lam * I) @ sol - Q @ x).max())
        h0 = solve_zero_mode(x, A)
        worst = max(worst, np.abs((A - I) @ h0 - x).max())
    return worst < 1e-12, f"max defect {worst:.1e}"


def suite_parameters() -> tuple[bool, str]:
    rows = []
    for d in (2, 3, 4):
        tau, r, k, (lo, hi) = theoretical_parameters(d, 0.5)
        if (tau, r, k) != (d - 1, 42 * (d + 1), 6 * d + 6) or not lo < hi:
            return False, f"d={d}: got tau={tau}, r={r}, k={k}, window=[{lo:.3f}, {hi:.3f}]"
        rows.append(f"d={d}: tau={tau} r={r} k={k} y in [{lo:.2f}, {hi:.2f}]")
    return True, "; ".join(rows)


SUITES = {
    "smoothing inequalities": suite_smoothing,
    "coboundary oracle": suite_coboundary,
    "parseval and round trip": suite_parseval,
    "projector algebra": suite_projectors,
    "parameter algebra": suite_parameters,
}


def run_all() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in SUITES.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
