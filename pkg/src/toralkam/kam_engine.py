"""The KAM iteration: inductive step, schedule, safeguards and decay checks."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cohomology import compute_error_fields, relation_terms, solve_flow_coboundary
from .diffeo import TorusMap, compose, conjugate_action
from .errors import DivergenceError, ParameterError, StepRejected
from .spectral_field import (
    OperatorSpec,
    SpectralField,
    cr_norms,
    evaluate,
    evaluate_many,
    grid_points,
    grid_size,
    pushforward,
    smooth_project,
)
from .torus_algebra import EigenData, as_integer_matrix

TRACE_KEYS = ("step", "N", "eps0", "epsR", "eta0", "eta1", "etaR", "vnorm",
              "min_divisor", "h_c1", "alias_tail", "wall_ms", "flags")


# ----------------------------------------------------------------------------
# parameters

def theoretical_parameters(d: int, sigma: float = 0.5, r: int | None = None, k: int | None = None):
    """(tau, r, k, y_window) of the convergence proof for dimension d."""
    if d < 2:
        raise ParameterError("dimension must be at least 2")
    if not 0 < sigma < 1:
        raise ParameterError("sigma must lie in (0, 1)")
    tau = d - 1
    r = 42 * (d + 1) if r is None else r
    k = 6 * d + 6 if k is None else k
    if not k > (2 * d + 3 + tau) / sigma:
        raise ParameterError(f"k = {k} does not exceed (2d+3+tau)/sigma = {(2 * d + 3 + tau) / sigma:g}")
    denom = 1 - sigma - 1 / r
    if denom <= 0:
        raise ParameterError("1 - sigma - 1/r must be positive")
    lo = (2 * d + 2 + tau + k / r) / denom
    hi = (r - 3 * d - 3 - tau - k) / (1 + sigma)
    if not lo < hi:
        raise ParameterError(f"empty y window [{lo:.4g}, {hi:.4g}]")
    return tau, r, k, (lo, hi)


def r_requirement(d: int, sigma: float, k: int, tau: int | None = None) -> float:
    """Lower bound on r needed by the decay estimate for a given k."""
    tau = d - 1 if tau is None else tau
    return (1 + sigma) * (3 * d + 3 + tau + 2 * k + 2 * (2 * d + 2 + tau) / (1 - sigma))


def next_cutoff(N: int, sigma: float, cap: int | None = None) -> int:
    nxt = math.ceil(N ** (1 + sigma) - 1e-9)
    return nxt if cap is None else min(nxt, cap)


@dataclass
class KamSchedule:
    N0: int = 8
    sigma: float = 0.5
    r: int = 4
    k: int | None = None
    y: float = 1.0
    delta: float | None = None
    max_steps: int = 6
    target_tol: float = 1e-9
    cutoff_cap: int = 64
    profile: str = "practical"

    def cutoffs(self, steps: int | None = None) -> list[int]:
        out, N = [], self.N0
        for _ in range(self.max_steps if steps is None else steps):
            out.append(min(N, self.cutoff_cap))
            N = next_cutoff(N, self.sigma, self.cutoff_cap)
        return out

    def k_for(self, d: int) -> int:
        return 6 * d + 6 if self.k is None else self.k

    @staticmethod
    def safeguard_exponent(d: int) -> int:
        return 2 * d + 2 + (d - 1)


# ----------------------------------------------------------------------------
# state

@dataclass(eq=False)
class ActionState:
    """Action generated by (A + f, v + w)."""

    A: np.ndarray
    eig: EigenData
    f: SpectralField
    v: np.ndarray
    w: SpectralField
    _norms: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.A = as_integer_matrix(self.A)
        self.v = np.asarray(self.v, dtype=float)

    @property
    def d(self) -> int:
        return len(self.v)

    @property
    def cutoff(self) -> int:
        return max(self.f.cutoff, self.w.cutoff)

    def norms(self, r: int) -> dict:
        """eps_l = |f|_{C^l}, eta_l = |w|_{C^l} for l in {0, 1, r}."""
        if r not in self._norms:
            e = cr_norms(self.f, (0, 1, r))
            n = cr_norms(self.w, (0, 1, r))
            self._norms[r] = {"eps0": e[0], "eps1": e[1], "epsR": e[r],
                              "eta0": n[0], "eta1": n[1], "etaR": n[r]}
        return self._norms[r]

    def size(self) -> float:
        n = self.norms(1)
        return n["eps0"] + n["eta0"]

    @property
    def pair(self):
        from .action_factory import ActionPair

        return ActionPair(TorusMap(self.A, self.f), self.w + self.v, self.eig.lam)


# ----------------------------------------------------------------------------
# one step

@dataclass
class StepReport:
    N: int
    cutoff: int
    before: dict
    after: dict
    min_divisor: float
    amplification: float
    h_c1: float
    h_cr: float
    drift: np.ndarray
    alias_tail: float
    flags: list
    smallness: float = float("nan")
    omega: dict = field(default_factory=dict)
    omega_residual: float = float("nan")
    bound_ratios: dict = field(default_factory=dict)
    composition_ratio: float = float("nan")


def _grid_sup(vals: np.ndarray) -> float:
    return float(np.linalg.norm(vals, axis=1).max()) if len(vals) else 0.0


def omega_decomposition(f: SpectralField, h: SpectralField, A, N: int, f_new: SpectralField):
    """Sup norms of the five pieces of f' o H and the residual of their sum."""
    A = as_integer_matrix(A)
    c = max(f.cutoff, h.cutoff)
    hc = h.with_cutoff(c)
    Tdot = OperatorSpec("Tdot", N, A)
    Tsdot = OperatorSpec("Tsharpdot", N, A)
    M = grid_size(max(c, f_new.cutoff), 2.0)
    y = grid_points(h.d, M)
    fy, hy = evaluate_many([f, hc], y)
    image = y @ A.T
    lin, ff, shifted, _ = relation_terms(h, f, A, SpectralField.zeros(h.d, 0), N)
    fast_h = pushforward(smooth_project(hc, Tsdot), A)
    o1 = evaluate(smooth_project(f, Tdot), y)
    o2 = -evaluate(smooth_project(hc, Tdot), y) @ A.T
    o3 = evaluate(fast_h, y)
    o4 = evaluate(hc, image + fy) - evaluate(hc, image)
    o5 = evaluate(ff - lin + shifted, y)
    lhs = evaluate(f_new, y + hy)
    total = o1 + o2 + o3 + o4 + o5
    omega = {f"omega{i}": _grid_sup(o) for i, o in enumerate((o1, o2, o3, o4, o5), start=1)}
    return omega, _grid_sup(lhs - total)


def step_bounds(before: dict, N: int, r: int, d: int) -> dict:
    """Right-hand sides of the four inductive estimates (constants set to 1)."""
    tau = d - 1
    e0, er, n0, nr = before["eps0"], before["epsR"], before["eta0"], before["etaR"]
    q = 1.0 / r
    return {
        "map_c0": N ** (-r + d + 1) * er + N ** (-r + 3 * d + 3 + tau) * nr
        + N ** (2 * d + 2 + tau) * n0 ** (1 - q) * nr ** q * e0
        + N ** (d + 1 + tau) * n0 * e0 ** (1 - q) * er ** q,
        "map_cr": 1 + er + N ** (2 * d + 2 + tau) * nr,
        "flow_c0": N ** (-r + d + 1) * nr + N ** (2 * d + 2 + tau) * n0 ** (2 - q) * nr ** q
        + n0 ** (1 - q) * nr ** q * e0 + n0 * e0 ** (1 - q) * er ** q,
        "flow_cr": 1 + N ** (2 * d + 3 + tau) * nr,
    }


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return a / b


def inductive_step(state: ActionState, N: int, cutoff: int | None = None, r: int = 4,
                   delta: float | None = None, diagnostics: bool = False, divisor_floor: float = 1e-10):
    """One conjugation step.  Returns (new_state, H, StepReport).

    h solves -S_N w = Dh . v on nonzero modes and (A - Id) h(0) = f(0);
    the conjugated action is then renormalized so that w'(0) lies in V_perp.
    """
    d = state.d
    cutoff = state.cutoff if cutoff is None else cutoff
    before = state.norms(r)
    flags = []
    if not before["eps1"] < 1:
        raise StepRejected("eps1 < 1", f"|f|_C1 = {before['eps1']:.3e} is not below 1")
    lhs = before["eps0"] + N ** KamSchedule.safeguard_exponent(d) * before["eta1"]
    if delta is not None and not lhs < delta:
        raise StepRejected("eps0 + N^p eta1 < delta", f"eps0 + N^p eta1 = {lhs:.3e} is not below delta = {delta:.3e}")
    sol = solve_flow_coboundary(state.w, state.v, N, divisor_floor, f_zero=state.f.mean, A=state.A)
    h = sol.h
    hn = cr_norms(h, (1, r))
    if not hn[1] < 0.5:
        raise StepRejected("|h|_C1 < 1/2", f"|h|_C1 = {hn[1]:.3e} is not below 1/2")
    H = TorusMap.near_identity(h)
    vtil = state.w + state.v
    Atil_new, vtil_new = conjugate_action(H, TorusMap(state.A, state.f), vtil, cutoff)
    w_raw = vtil_new - state.v
    drift = state.eig.P_V @ w_raw.mean
    new_v = state.v + drift
    new_w = w_raw.with_mean(w_raw.mean - drift)
    new_state = ActionState(state.A, state.eig, Atil_new.periodic, new_v, new_w)
    after = new_state.norms(r)
    tail = max(Atil_new.periodic.tail, vtil_new.tail)
    report = StepReport(N, cutoff, dict(before), dict(after), sol.min_divisor, sol.amplification,
                        hn[1], hn[r], drift, tail, flags, lhs)
    if diagnostics:
        report.omega, report.omega_residual = omega_decomposition(state.f, h, state.A, N, Atil_new.periodic)
        bounds = step_bounds(before, N, r, d)
        flow = cr_norms(w_raw, (0, r))
        measured = {"map_c0": after["eps0"], "map_cr": after["epsR"],
                    "flow_c0": flow[0], "flow_cr": flow[r]}
        report.bound_ratios = {k: _ratio(measured[k], bounds[k]) for k in bounds}
        report.composition_ratio = after["epsR"] / (1 + before["epsR"] + hn[r])
    return new_state, H, report


# ----------------------------------------------------------------------------
# calibration

def calibrate_delta(A, eig: EigenData, N: int, safety: float = 4.0, probes: int = 4, seed: int = 0) -> float:
    """Smallness threshold for the step safeguard at cutoff N.

    K is the largest |h|_C1 / (eps0 + N^p eta1) over seeded probe perturbations
    shaped like the generator's output, and delta = 1 / (2 * safety * K) keeps
    the implied |h|_C1 bound well below 1/2.
    """
    from .action_factory import random_field

    d = eig.d
    p = KamSchedule.safeguard_exponent(d)
    worst = 0.0
    for i in range(probes):
        f = random_field(d, seed + 2 * i, 3, 1e-6, 1.0)
        w = random_field(d, seed + 2 * i + 1, min(N, 8), 1e-6, 0.5)
        w = w.with_mean(eig.P_Vperp @ w.mean)
        sol = solve_flow_coboundary(w, eig.v_unit, N, f_zero=f.mean, A=A)
        e = cr_norms(f, (0,))[0]
        n1 = cr_norms(w, (1,))[1]
        worst = max(worst, cr_norms(sol.h, (1,))[1] / (e + N ** p * n1))
    return 1.0 / (2.0 * safety * worst)


def calibrate_schedule(A, eig: EigenData, sched: "KamSchedule") -> dict:
    """delta for every distinct cutoff the schedule will visit."""
    return {N: calibrate_delta(A, eig, N) for N in sorted(set(sched.cutoffs()))}


# ----------------------------------------------------------------------------
# the iteration

class KamTrace(list):
    """Append-only list of per-step records (state before the step)."""

    final: dict | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec) + "\n" for rec in self)


class KamResult(NamedTuple):
    H: TorusMap
    v_star: np.ndarray
    trace: KamTrace
    converged: bool
    state: ActionState
    reports: list
    deltas: dict


def _record(step, N, norms, v, report: StepReport | None, wall_ms, flags):
    return {
        "step": step, "N": N, "eps0": norms["eps0"], "epsR": norms["epsR"],
        "eta0": norms["eta0"], "eta1": norms["eta1"], "etaR": norms["etaR"],
        "vnorm": float(np.linalg.norm(v)),
        "min_divisor": None if report is None or not math.isfinite(report.min_divisor) else report.min_divisor,
        "h_c1": None if report is None else report.h_c1,
        "alias_tail": None if report is None else report.alias_tail,
        "wall_ms": wall_ms, "flags": list(flags),
    }


def run(state: ActionState, sched: KamSchedule | None = None, sink=None, diagnostics: bool = False) -> KamResult:
    """Iterate the inductive step on the schedule N_0, N_0^(1+sigma), ... (capped).

    Fields stay at the cap cutoff throughout; N_n only limits the frequencies
    h solves for.  ``sink`` (a text stream) receives each trace record as a
    JSON line as soon as the step completes.
    """
    sched = sched or KamSchedule()
    if sched.profile != "practical":
        raise ParameterError("only the practical profile can be iterated")
    d = state.d
    cap = sched.cutoff_cap
    state = ActionState(state.A, state.eig, state.f.with_cutoff(cap), state.v, state.w.with_cutoff(cap))
    H_total = TorusMap.identity(d, cap)
    trace = KamTrace()
    reports = []
    if sched.delta is None:
        deltas = calibrate_schedule(state.A, state.eig, sched)
    else:
        deltas = {N: sched.delta for N in sched.cutoffs()}
    N = sched.N0
    rising = 0
    prev = state.size()
    converged = prev < sched.target_tol
    step = 0
    while not converged and step < sched.max_steps:
        t0 = time.perf_counter()
        Nn = min(N, cap)
        try:
            state_new, H, report = inductive_step(state, Nn, cap, sched.r, deltas[Nn], diagnostics)
        except StepRejected:
            trace.final = _final(state)
            raise
        wall = (time.perf_counter() - t0) * 1e3
        H_total = compose(H, H_total, cap)
        rec = _record(step, Nn, state.norms(sched.r), state.v, report, wall, report.flags)
        trace.append(rec)
        reports.append(report)
        if sink is not None:
            sink.write(json.dumps(rec) + "\n")
            sink.flush()
        state = state_new
        step += 1
        size = state.size()
        rising = rising + 1 if size > prev else 0
        prev = size
        if rising >= 3:
            trace.final = _final(state)
            raise DivergenceError("eps0 + eta0 increased for 3 consecutive steps", trace)
        converged = size < sched.target_tol
        N = next_cutoff(N, sched.sigma, cap)
    trace.final = _final(state)
    vnorm = float(np.linalg.norm(state.v))
    if not 0.5 <= vnorm <= 2.0:
        raise DivergenceError(f"|v*| = {vnorm:.3g} left [1/2, 2]", trace)
    return KamResult(H_total, state.v.copy(), trace, converged, state, reports, deltas)


def _final(state: ActionState) -> dict:
    n = state.norms(1)
    return {"eps0": n["eps0"], "eta0": n["eta0"], "eta1": n["eta1"], "eps1": n["eps1"],
            "vnorm": float(np.linalg.norm(state.v)), "v": state.v.tolist()}


# ----------------------------------------------------------------------------
# post-processing

def conjugacy_residuals(H: TorusMap, pair, v_star, M: int | None = None) -> tuple[float, float]:
    """Grid sups of |H(Atil x) - A H(x)| (mod 1) and |DH . vtil - v* o H|.

    The flow equation is checked in the form DH . vtil = v* (a constant), i.e.
    (DH . vtil) o H^-1 = v* evaluated at x instead of H^-1 y.
    """
    from .diffeo import torus_dist
    from .spectral_field import partials

    A = pair.Atil.linear
    d = H.d
    M = M or grid_size(max(H.cutoff, pair.cutoff), 2.0)
    x = grid_points(d, M)
    lhs = H(pair.Atil(x))
    rhs = H(x) @ A.T
    map_res = float(torus_dist(lhs, rhs).max())
    vt, *dh = evaluate_many([pair.vtil] + partials(H.periodic), x)
    J = np.stack(dh, axis=-1)
    flow = vt + np.einsum("pij,pj->pi", J, vt)
    flow_res = float(np.linalg.norm(flow - np.asarray(v_star), axis=1).max())
    return map_res, flow_res


def verify_decay(trace, sched: KamSchedule | None = None, d: int = 2) -> dict:
    """Empirical decay exponent of eps0 + eta0 against N_n and the C^r growth check."""
    sched = sched or KamSchedule()
    recs = list(trace)
    sizes = [rec["eps0"] + rec["eta0"] for rec in recs]
    Ns = [rec["N"] for rec in recs]
    final = getattr(trace, "final", None)
    if final is not None and recs:
        sizes.append(final["eps0"] + final["eta0"])
        Ns.append(next_cutoff(recs[-1]["N"], sched.sigma, sched.cutoff_cap))
    report = {"steps": len(recs), "exponent": None, "ratios": [], "growth_ok": True, "conforming": True}
    if not recs or all(s == 0 for s in sizes):
        return report
    ratios = []
    for a, b in zip(sizes, sizes[1:]):
        if 0 < a < 1 and 0 < b < 1:
            ratios.append(math.log(b) / math.log(a))
    report["ratios"] = ratios
    pos = [(n, s) for n, s in zip(Ns, sizes) if s > 0]
    if len(pos) >= 2 and len({n for n, _ in pos}) >= 2:
        x = np.log([n for n, _ in pos])
        y = np.log([s for _, s in pos])
        slope = float(np.polyfit(x, y, 1)[0])
        report["exponent"] = -slope
    else:
        # cutoff saturated: compare successive sizes directly
        report["exponent"] = math.inf if ratios and min(ratios) > 1 else 0.0
    k = sched.k_for(d)
    c0 = recs[0]["epsR"] / recs[0]["N"] ** k if recs[0]["N"] else 0.0
    report["growth_ok"] = all(rec["epsR"] <= c0 * rec["N"] ** k * (1 + 1e-9) + 1e-300 for rec in recs)
    report["conforming"] = bool(report["exponent"] is not None and report["exponent"] >= 1
                                and report["growth_ok"])
    return report


def recover(pair, eig: EigenData, sched: KamSchedule | None = None, sink=None, diagnostics: bool = False):
    """Normalize an input pair, run the iteration and express v* in the input's time units."""
    from .action_factory import normalize_input

    state, scale = normalize_input(pair, eig)
    result = run(state, sched, sink, diagnostics)
    return result, scale, result.v_star / scale
