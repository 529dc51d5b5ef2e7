"""Flat key-value text format used for scenario and experiment files.

Grammar (one assignment per line):

    # comment, blank lines ignored
    key = scalar
    key = v1 v2 v3            # 1-D array, whitespace separated
    key = a b ; c d ; e f     # 2-D array, ';' separates rows

Values are kept as raw token lists here; callers apply typing via the
converters below so schema errors can name the offending field. Floats are
written with repr() so a save/load round-trip is bit-exact.
"""

from __future__ import annotations

import numpy as np


class KVError(ValueError):
    """Malformed key-value text (carries the field name when known)."""


def parse_text(text: str) -> dict[str, list[list[str]]]:
    """Parse to {key: rows}, each row a list of raw tokens."""
    out: dict[str, list[list[str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KVError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise KVError(f"line {lineno}: empty key")
        if key in out:
            raise KVError(f"line {lineno}: duplicate key {key!r}")
        rows = [row.split() for row in value.split(";")]
        rows = [r for r in rows if r]
        out[key] = rows
    return out


def _tokens(key: str, rows: list[list[str]]) -> list[str]:
    if len(rows) != 1:
        raise KVError(f"{key}: expected a single row, got {len(rows)}")
    return rows[0]


def _one(key: str, rows: list[list[str]]) -> str:
    toks = _tokens(key, rows)
    if len(toks) != 1:
        raise KVError(f"{key}: expected a single value, got {len(toks)}")
    return toks[0]


def as_float(key: str, rows: list[list[str]]) -> float:
    try:
        return float(_one(key, rows))
    except ValueError as exc:
        raise KVError(f"{key}: not a number: {exc}") from None


def as_int(key: str, rows: list[list[str]]) -> int:
    tok = _one(key, rows)
    try:
        return int(tok)
    except ValueError:
        raise KVError(f"{key}: not an integer: {tok!r}") from None


def as_str(key: str, rows: list[list[str]]) -> str:
    return _one(key, rows)


def as_strs(key: str, rows: list[list[str]]) -> list[str]:
    return list(_tokens(key, rows))


def as_floats(key: str, rows: list[list[str]]) -> np.ndarray:
    try:
        return np.array([float(t) for t in _tokens(key, rows)], dtype=np.float64)
    except ValueError as exc:
        raise KVError(f"{key}: not a number list: {exc}") from None


def as_ints(key: str, rows: list[list[str]]) -> np.ndarray:
    try:
        return np.array([int(t) for t in _tokens(key, rows)], dtype=np.int64)
    except ValueError as exc:
        raise KVError(f"{key}: not an integer list: {exc}") from None


def as_matrix(key: str, rows: list[list[str]]) -> np.ndarray:
    if not rows:
        raise KVError(f"{key}: empty matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise KVError(f"{key}: ragged rows")
    try:
        return np.array([[float(t) for t in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise KVError(f"{key}: not numeric: {exc}") from None


def _fmt_scalar(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_value(v) -> str:
    """Render a python/numpy value in the grammar above."""
    arr = np.asarray(v)
    if arr.ndim == 0:
        return _fmt_scalar(v if not isinstance(v, np.generic) else arr.item())
    if arr.ndim == 1:
        return " ".join(_fmt_scalar(x) for x in arr.tolist())
    if arr.ndim == 2:
        return " ; ".join(" ".join(_fmt_scalar(x) for x in row) for row in arr.tolist())
    raise KVError(f"cannot format array of ndim {arr.ndim}")


def format_text(items: dict[str, object], header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {format_value(v)}" for k, v in items.items()]
    return "\n".join(lines) + "\n"
