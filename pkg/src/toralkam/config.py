"""Run configuration: ``key = <JSON value>`` lines, '#' comments, strict schema."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .errors import InputError

OUTPUT_ENV = "TORALKAM_OUTPUT_DIR"


class ConfigError(InputError):
    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


def _int_in(lo, hi):
    def check(x):
        if isinstance(x, bool) or not isinstance(x, int):
            return "must be an integer"
        if lo is not None and x < lo or hi is not None and x > hi:
            return f"must lie in [{lo}, {hi}]"
        return None
    return check


def _real_in(lo, hi, open_lo=False, open_hi=False):
    def check(x):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            return "must be a number"
        if lo is not None and (x <= lo if open_lo else x < lo):
            return f"must be {'>' if open_lo else '>='} {lo}"
        if hi is not None and (x >= hi if open_hi else x > hi):
            return f"must be {'<' if open_hi else '<='} {hi}"
        return None
    return check


def _matrix(x):
    if not isinstance(x, list) or not x or not all(isinstance(r, list) for r in x):
        return "must be a list of rows"
    if any(len(r) != len(x) for r in x):
        return "must be square"
    if not all(isinstance(e, int) and not isinstance(e, bool) for r in x for e in r):
        return "entries must be integers"
    return None


def _eigen(x):
    if x in ("largest", "smallest") or (isinstance(x, (int, float)) and not isinstance(x, bool)):
        return None
    return "must be 'largest', 'smallest' or a number"


def _string(x):
    return None if isinstance(x, str) else "must be a string"


def _profile(x):
    return None if x in ("practical", "theoretical") else "must be 'practical' or 'theoretical'"


def _optional(check):
    return lambda x: None if x is None else check(x)


SCHEMA = {
    "matrix": _matrix,
    "eigenvalue": _eigen,
    "profile": _profile,
    "seed": _int_in(0, None),
    "max_mode": _int_in(0, 16),
    "amplitude": _real_in(0, None),
    "decay": _real_in(0, None),
    "time_scale": _real_in(0, None, open_lo=True),
    "input_pair": _optional(_string),
    "N0": _int_in(4, 16),
    "sigma": _real_in(0, 1, open_lo=True, open_hi=True),
    "r": _int_in(4, 10),
    "k": _optional(_int_in(1, None)),
    "delta": _optional(_real_in(0, None, open_lo=True)),
    "max_steps": _int_in(0, 50),
    "target_tol": _real_in(0, None, open_lo=True),
    "cutoff_cap": _int_in(32, 128),
    "output_dir": _string,
    "relation_tol": _real_in(0, None, open_lo=True),
}


@dataclass
class RunConfig:
    matrix: list = field(default_factory=lambda: [[2, 1], [1, 1]])
    eigenvalue: object = "largest"
    profile: str = "practical"
    seed: int = 1
    max_mode: int = 3
    amplitude: float = 1e-3
    decay: float = 1.0
    time_scale: float = 1.0
    input_pair: str | None = None
    N0: int = 8
    sigma: float = 0.5
    r: int = 4
    k: int | None = None
    delta: float | None = None
    max_steps: int = 6
    target_tol: float = 1e-9
    cutoff_cap: int = 64
    output_dir: str = "toralkam_out"
    relation_tol: float = 1e-8

    def schedule(self):
        from .kam_engine import KamSchedule

        return KamSchedule(N0=self.N0, sigma=self.sigma, r=self.r, k=self.k, delta=self.delta,
                           max_steps=self.max_steps, target_tol=self.target_tol,
                           cutoff_cap=self.cutoff_cap, profile=self.profile)

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV) or self.output_dir


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(where, "expected 'key = value'")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(where, f"unknown key {key!r}")
        if key in values:
            raise ConfigError(where, f"duplicate key {key!r}")
        try:
            value = json.loads(rhs.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(where, f"value for {key!r} is not valid JSON ({exc.msg})") from None
        problem = SCHEMA[key](value)
        if problem:
            raise ConfigError(where, f"{key} {problem}")
        values[key] = value
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
