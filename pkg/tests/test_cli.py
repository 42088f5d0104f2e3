import json

import numpy as np
import pytest
from click.testing import CliRunner

from toralkam import serialization
from toralkam.action_factory import ActionPair, group_relation_residual, random_field
from toralkam.cli import main
from toralkam.config import OUTPUT_ENV


@pytest.fixture
def cli(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    return CliRunner()


def write_cfg(path, **entries):
    lines = [f"{k} = {json.dumps(v)}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_selftest(cli):
    res = cli.invoke(main, ["selftest"])
    assert res.exit_code == 0, res.output
    assert res.output.count("PASS") == 5 and "FAIL" not in res.output
    assert "d=3: tau=2 r=168 k=24" in res.output
    assert "d=4" in res.output


def test_gen_is_deterministic(cli, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        res = cli.invoke(main, ["gen", "--seed", "3", "--cutoff", "32", "--out", str(out)])
        assert res.exit_code == 0, res.output
    for name in ("pair.txt", "G.txt", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    pair = serialization.load(a / "pair.txt")
    assert abs(manifest["relation_residual"] - group_relation_residual(pair)) < 1e-12


def test_gen_zero_amplitude_is_affine(cli, tmp_path):
    res = cli.invoke(main, ["gen", "--amplitude", "0", "--cutoff", "32", "--out", str(tmp_path)])
    assert res.exit_code == 0
    pair = serialization.load(tmp_path / "pair.txt")
    assert pair.Atil.periodic.is_zero()
    assert np.abs(pair.vtil.without_mean().coeffs).max() == 0


def test_gen_rejects_bad_input(cli, tmp_path):
    res = cli.invoke(main, ["gen", "--amplitude", "0.5", "--decay", "0", "--out", str(tmp_path)])
    assert res.exit_code == 1 and "too large" in res.output
    res = cli.invoke(main, ["gen", "--matrix", "[[2,1],[1,1]", "--out", str(tmp_path)])
    assert res.exit_code == 1 and "JSON" in res.output


def test_gen_respects_output_env(cli, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    res = cli.invoke(main, ["gen", "--cutoff", "32"])
    assert res.exit_code == 0
    assert (tmp_path / "env" / "pair.txt").exists()


def test_run_verify_round_trip(cli, tmp_path):
    gen_dir, out = tmp_path / "gen", tmp_path / "out"
    assert cli.invoke(main, ["gen", "--seed", "1", "--out", str(gen_dir)]).exit_code == 0
    cfg = write_cfg(tmp_path / "golden.cfg", matrix=[[2, 1], [1, 1]], input_pair=str(gen_dir / "pair.txt"),
                    output_dir=str(out))
    res = cli.invoke(main, ["run", cfg])
    assert res.exit_code == 0, res.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["steps"] <= 6
    assert summary["final"]["eps0"] + summary["final"]["eta0"] < 1e-9
    assert summary["map_residual"] < 1e-7 and summary["flow_residual"] < 1e-7
    trace = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
    assert len(trace) == summary["steps"]
    assert list(trace[0]) == ["step", "N", "eps0", "epsR", "eta0", "eta1", "etaR", "vnorm",
                              "min_divisor", "h_c1", "alias_tail", "wall_ms", "flags"]
    res = cli.invoke(main, ["verify", str(gen_dir / "pair.txt"), str(out / "conjugacy.txt")])
    assert res.exit_code == 0, res.output
    report = json.loads(res.output)
    assert report["ok"] and report["map_residual"] < 1e-7 and report["flow_residual"] < 1e-7
    np.testing.assert_allclose(report["v_star"], summary["v_star"], atol=1e-12)


def test_verify_fails_wrong_conjugacy(cli, tmp_path):
    assert cli.invoke(main, ["gen", "--cutoff", "32", "--out", str(tmp_path)]).exit_code == 0
    res = cli.invoke(main, ["verify", str(tmp_path / "pair.txt"), str(tmp_path / "G.txt")])
    assert res.exit_code == 2
    assert not json.loads(res.output)["ok"]


def _trace_without_wall(path):
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    for rec in recs:
        rec.pop("wall_ms")
    return recs


def test_run_is_deterministic_and_reports_nonconvergence(cli, tmp_path):
    traces = []
    for name in ("a", "b"):
        cfg = write_cfg(tmp_path / f"{name}.cfg", amplitude=1e-4, cutoff_cap=32, max_steps=1,
                        output_dir=str(tmp_path / name))
        res = cli.invoke(main, ["run", cfg])
        assert res.exit_code == 2, res.output  # one step cannot reach 1e-9
        assert "not converged" in res.output
        traces.append(_trace_without_wall(tmp_path / name / "trace.jsonl"))
    assert traces[0] == traces[1] and len(traces[0]) == 1


def test_run_zero_perturbation(cli, tmp_path):
    cfg = write_cfg(tmp_path / "zero.cfg", amplitude=0.0, cutoff_cap=32, output_dir=str(tmp_path / "o"))
    res = cli.invoke(main, ["run", cfg])
    assert res.exit_code == 0, res.output
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["steps"] == 0 and summary["converged"]


@pytest.mark.parametrize("entries,needle", [
    ({"matrix": [[1, 1], [0, -1]], "eigenvalue": 1}, "resonance"),
    ({"matrix": [[3, 1], [1, 1]]}, "det"),
    ({"matrix": [[2, 1], [1, 1]], "profile": "theoretical"}, "theoretical"),
    ({"cutoff_cap": 8}, "cutoff_cap"),
])
def test_run_input_errors(cli, tmp_path, entries, needle):
    cfg = write_cfg(tmp_path / "bad.cfg", output_dir=str(tmp_path / "o"), **entries)
    res = cli.invoke(main, ["run", cfg])
    assert res.exit_code == 1
    assert needle in res.output


def test_run_unknown_key_is_line_anchored(cli, tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 1\nbogus = 2\n")
    res = cli.invoke(main, ["run", str(path)])
    assert res.exit_code == 1
    assert f"{path}:2: unknown key 'bogus'" in res.output


def test_run_rejects_relation_violating_pair(cli, tmp_path):
    assert cli.invoke(main, ["gen", "--cutoff", "32", "--out", str(tmp_path)]).exit_code == 0
    pair = serialization.load(tmp_path / "pair.txt")
    noise = random_field(2, 9, 3, 1e-3, 0.0).without_mean().with_cutoff(32)
    serialization.save(ActionPair(pair.Atil, pair.vtil + noise, pair.lam), tmp_path / "bad.txt")
    cfg = write_cfg(tmp_path / "r.cfg", input_pair=str(tmp_path / "bad.txt"), cutoff_cap=32,
                    output_dir=str(tmp_path / "o"))
    res = cli.invoke(main, ["run", cfg])
    assert res.exit_code == 1
    assert "group relation" in res.output
