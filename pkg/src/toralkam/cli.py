"""Command-line harness: run, selftest, gen, verify."""

from __future__ import annotations

import json
import math
import os
import sys
import warnings

import click
import numpy as np

from . import serialization
from .action_factory import group_relation_residual, make_conjugated_perturbation, normalize_input
from .config import ConfigError, RunConfig, load_config
from .errors import (
    ConvergenceError,
    DivergenceError,
    InputError,
    KamError,
    NonInvertibleError,
    ResonanceError,
    StepRejected,
)
from .kam_engine import conjugacy_residuals, run, verify_decay
from .torus_algebra import ToralAutomorphism, eigen_decompose, estimate_diophantine

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
DEGENERATE_FLOOR = 1e-8


def _fail(message: str, code: int = EXIT_INPUT):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def validate_matrix(matrix, eigenvalue, K: int):
    """Eigen-splitting, Diophantine certificate, then determinant and irreducibility."""
    eig = eigen_decompose(matrix, eigenvalue)
    d = eig.d
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cert = estimate_diophantine(eig.v_unit, d - 1, K, floor=DEGENERATE_FLOOR)
    if cert.degenerate:
        k = np.array(cert.argmin_k, dtype=float)
        raise ResonanceError(cert.argmin_k, 2 * np.pi * abs(k @ eig.v_unit), 2 * np.pi * DEGENERATE_FLOOR)
    A = ToralAutomorphism.validated(matrix)
    return A, eig, cert


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group()
def main():
    """Constructive linearization of perturbed Z x_lam R actions on tori."""


@main.command("run")
@click.argument("config_path", type=click.Path(dir_okay=False))
def cmd_run(config_path):
    """Normalize the configured input, iterate and verify; write trace, conjugacy and summary."""
    try:
        cfg = load_config(config_path)
        if cfg.profile == "theoretical":
            raise InputError("the theoretical profile only feeds parameter algebra; use profile = \"practical\"")
        A, eig, cert = validate_matrix(cfg.matrix, cfg.eigenvalue, cfg.cutoff_cap)
        if cfg.input_pair:
            pair = serialization.load(cfg.input_pair)
            if not np.array_equal(pair.Atil.linear, A.entries):
                raise InputError("input pair's linear part differs from the configured matrix")
        else:
            pair, _ = make_conjugated_perturbation(A.entries, eig.v_unit, cfg.seed, cfg.max_mode, cfg.amplitude,
                                                   cfg.decay, cfg.cutoff_cap, cfg.time_scale)
        relation = group_relation_residual(pair, A.entries, eig.lam)
        if relation > cfg.relation_tol:
            raise InputError(f"input violates the group relation: residual {relation:.2e} > {cfg.relation_tol:.0e}")
        state, scale = normalize_input(pair, eig)
    except ResonanceError as exc:
        _fail(f"resonance: {exc}")
    except (ConfigError, InputError, KamError) as exc:
        _fail(str(exc))

    out = cfg.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    sched = cfg.schedule()
    summary = {"converged": False, "steps": 0, "scale": scale, "relation_residual": relation,
               "diophantine_C": cert.C}
    code = EXIT_OK
    with open(os.path.join(out, "trace.jsonl"), "w", encoding="utf-8") as sink:
        try:
            result = run(state, sched, sink)
        except (StepRejected, DivergenceError, ConvergenceError, NonInvertibleError) as exc:
            summary["error"] = f"{type(exc).__name__}: {exc}"
            trace = getattr(exc, "trace", None)
            summary["final"] = getattr(trace, "final", None)
            _write_json(os.path.join(out, "summary.json"), summary)
            click.echo(f"not converged: {exc}", err=True)
            sys.exit(EXIT_NONCONVERGED)
    serialization.save(result.H, os.path.join(out, "conjugacy.txt"))
    map_res, flow_res = conjugacy_residuals(result.H, state.pair, result.v_star)
    decay = verify_decay(result.trace, sched, eig.d)
    summary.update({
        "converged": bool(result.converged),
        "steps": len(result.trace),
        "final": result.trace.final,
        "v_star": result.v_star.tolist(),
        "v_star_input_units": (result.v_star / scale).tolist(),
        "map_residual": map_res,
        "flow_residual": flow_res,
        "decay": {k: v for k, v in decay.items()},
        "delta": {str(k): v for k, v in result.deltas.items()},
    })
    _write_json(os.path.join(out, "summary.json"), summary)
    if not result.converged:
        code = EXIT_NONCONVERGED
    size = result.trace.final["eps0"] + result.trace.final["eta0"]
    click.echo(f"{'converged' if result.converged else 'not converged'} after {len(result.trace)} steps: "
               f"eps0+eta0 = {size:.3e}, v* = {np.array2string(result.v_star, precision=12)}")
    sys.exit(code)


@main.command("selftest")
def cmd_selftest():
    """Run the embedded invariant suites and print a pass/fail table."""
    from .selftest import run_all

    results = run_all()
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        click.echo(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    sys.exit(EXIT_OK if all(ok for _, ok, _ in results) else EXIT_INPUT)


@main.command("gen")
@click.option("--matrix", default="[[2,1],[1,1]]", help="JSON integer matrix.")
@click.option("--eigenvalue", default="largest", help="'largest', 'smallest' or a number.")
@click.option("--seed", default=1, type=int)
@click.option("--max-mode", default=3, type=int)
@click.option("--amplitude", default=1e-3, type=float)
@click.option("--decay", default=1.0, type=float)
@click.option("--time-scale", default=1.0, type=float)
@click.option("--cutoff", default=64, type=int)
@click.option("--out", "out_dir", default=None, help="Output directory (default: env override or 'toralkam_gen').")
def cmd_gen(matrix, eigenvalue, seed, max_mode, amplitude, decay, time_scale, cutoff, out_dir):
    """Write a conjugated perturbation pair, the ground-truth G and a manifest."""
    try:
        mat = json.loads(matrix)
        try:
            eigenvalue = float(eigenvalue)
        except ValueError:
            pass
        A, eig, _ = validate_matrix(mat, eigenvalue, cutoff)
        pair, G = make_conjugated_perturbation(A.entries, eig.v_unit, seed, max_mode, amplitude, decay,
                                               cutoff, time_scale)
    except json.JSONDecodeError as exc:
        _fail(f"--matrix is not valid JSON ({exc.msg})")
    except KamError as exc:
        _fail(str(exc))
    out = out_dir or os.environ.get("TORALKAM_OUTPUT_DIR") or "toralkam_gen"
    os.makedirs(out, exist_ok=True)
    serialization.save(pair, os.path.join(out, "pair.txt"))
    serialization.save(G, os.path.join(out, "G.txt"))
    manifest = {"matrix": A.entries.tolist(), "eigenvalue": eig.lam, "seed": seed, "max_mode": max_mode,
                "amplitude": amplitude, "decay": decay, "time_scale": time_scale, "cutoff": cutoff,
                "relation_residual": group_relation_residual(pair, A.entries, eig.lam)}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    click.echo(f"wrote {out}/pair.txt, G.txt, manifest.json (relation residual {manifest['relation_residual']:.2e})")


@main.command("verify")
@click.argument("pair_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("conjugacy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", default=1e-7, type=float, help="Pass threshold for both residuals.")
def cmd_verify(pair_path, conjugacy_path, tol):
    """Check the conjugacy equations for a pair and a conjugacy H."""
    try:
        pair = serialization.load(pair_path)
        H = serialization.load(conjugacy_path)
        eig = eigen_decompose(pair.Atil.linear, pair.lam)
        state, scale = normalize_input(pair, eig)
    except KamError as exc:
        _fail(str(exc))
    except OSError as exc:
        _fail(str(exc))
    # v* is the mean of DH . vtil once the equations hold
    from .spectral_field import partials, evaluate_many, grid_points, grid_size

    d = H.d
    x = grid_points(d, grid_size(max(H.cutoff, state.pair.cutoff), 2.0))
    vt, *dh = evaluate_many([state.pair.vtil] + partials(H.periodic), x)
    flow = vt + np.einsum("pij,pj->pi", np.stack(dh, axis=-1), vt)
    v_star = np.array([math.fsum(col) for col in flow.T]) / len(flow)
    map_res, flow_res = conjugacy_residuals(H, state.pair, v_star)
    ok = map_res < tol and flow_res < tol
    click.echo(json.dumps({"map_residual": map_res, "flow_residual": flow_res, "scale": scale,
                           "v_star": v_star.tolist(), "ok": ok}))
    sys.exit(EXIT_OK if ok else EXIT_NONCONVERGED)


if __name__ == "__main__":  # pragma: no cover
    main()
