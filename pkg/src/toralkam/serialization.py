"""Plain-text tables for fields, torus maps and action pairs.

A field block looks like::

    field d=2 cutoff=8 rows=3
    0 0 0.1 0.0 -0.2 0.0
    1 0 ...

one row per stored frequency n with (Re, Im) per component.  Floats are
written with ``repr`` so reading them back is exact.
"""

from __future__ import annotations

import numpy as np

from .diffeo import TorusMap
from .errors import InputError
from .spectral_field import SpectralField, locate, mode_table


def _header(line: str, kind: str) -> dict:
    parts = line.split()
    if not parts or parts[0] != kind:
        raise InputError(f"expected a '{kind}' header, got {line!r}")
    try:
        return {k: v for k, v in (p.split("=", 1) for p in parts[1:])}
    except ValueError as exc:
        raise InputError(f"malformed header {line!r}") from exc


def field_lines(f: SpectralField) -> list[str]:
    rows = [i for i in range(len(f.coeffs)) if i == 0 or np.any(f.coeffs[i] != 0)]
    out = [f"field d={f.d} cutoff={f.cutoff} rows={len(rows)}"]
    for i in rows:
        n = " ".join(str(int(x)) for x in f.modes[i])
        vals = " ".join(f"{float(c.real)!r} {float(c.imag)!r}" for c in f.coeffs[i])
        out.append(f"{n} {vals}")
    return out


def parse_field(lines: list[str], start: int = 0) -> tuple[SpectralField, int]:
    head = _header(lines[start], "field")
    d, cutoff, nrows = int(head["d"]), int(head["cutoff"]), int(head["rows"])
    coeffs = np.zeros((len(mode_table(d, cutoff)), d), dtype=complex)
    body = lines[start + 1:start + 1 + nrows]
    if len(body) != nrows:
        raise InputError(f"field block promises {nrows} rows, found {len(body)}")
    for k, line in enumerate(body, start=start + 2):
        parts = line.split()
        if len(parts) != 3 * d:
            raise InputError(f"line {k}: expected {3 * d} columns, got {len(parts)}")
        try:
            n = np.array([int(x) for x in parts[:d]], dtype=np.int64)
            vals = np.array([float(x) for x in parts[d:]])
        except ValueError as exc:
            raise InputError(f"line {k}: {exc}") from None
        row, flip = locate(n[None, :], cutoff)
        if row[0] < 0:
            raise InputError(f"line {k}: frequency {tuple(n)} outside cutoff {cutoff}")
        c = vals[0::2] + 1j * vals[1::2]
        coeffs[row[0]] = np.conj(c) if flip[0] else c
    return SpectralField(coeffs, cutoff), start + 1 + nrows


def map_lines(F: TorusMap) -> list[str]:
    lin = " ".join(str(int(x)) for x in F.linear.ravel())
    return [f"map d={F.d}", f"linear {lin}"] + field_lines(F.periodic)


def parse_map(lines: list[str], start: int = 0) -> tuple[TorusMap, int]:
    d = int(_header(lines[start], "map")["d"])
    parts = lines[start + 1].split()
    if not parts or parts[0] != "linear" or len(parts) != d * d + 1:
        raise InputError(f"line {start + 2}: expected 'linear' with {d * d} entries")
    L = np.array([int(x) for x in parts[1:]], dtype=np.int64).reshape(d, d)
    g, nxt = parse_field(lines, start + 2)
    return TorusMap(L, g), nxt


def pair_lines(pair) -> list[str]:
    return [f"pair lam={float(pair.lam)!r}"] + map_lines(pair.Atil) + field_lines(pair.vtil)


def parse_pair(lines: list[str], start: int = 0):
    from .action_factory import ActionPair

    lam = float(_header(lines[start], "pair")["lam"])
    Atil, nxt = parse_map(lines, start + 1)
    vtil, nxt = parse_field(lines, nxt)
    return ActionPair(Atil, vtil, lam), nxt


def _clean(text: str) -> list[str]:
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def dumps(obj) -> str:
    from .action_factory import ActionPair

    if isinstance(obj, SpectralField):
        lines = field_lines(obj)
    elif isinstance(obj, TorusMap):
        lines = map_lines(obj)
    elif isinstance(obj, ActionPair):
        lines = pair_lines(obj)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return "\n".join(lines) + "\n"


def loads(text: str):
    lines = _clean(text)
    if not lines:
        raise InputError("empty input")
    kind = lines[0].split()[0]
    parser = {"field": parse_field, "map": parse_map, "pair": parse_pair}.get(kind)
    if parser is None:
        raise InputError(f"unknown block type {kind!r}")
    obj, _ = parser(lines)
    return obj


def save(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
