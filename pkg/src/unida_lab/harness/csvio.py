"""CSV schemas for step logs and evaluation rows.

Every file starts with a ``# unida-lab <kind> v<version>`` comment line, then
a header row. Floats are written with 17 significant digits, so reading a file
back reproduces every logged value exactly.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

SCHEMA_VERSION = 1
STEP_COLUMNS = ("step", "L_s", "L_adv", "L_ssl", "noise_src", "noise_tgt", "noise_pool")
EVAL_COLUMNS = (
    "config_hash",
    "seed",
    "spcr",
    "flip_rate",
    "alpha",
    "acc_common",
    "acc_private",
    "h_score",
    "misclass_sp",
)
# sweep bookkeeping appended after the fixed evaluation columns
SWEEP_COLUMNS = EVAL_COLUMNS + ("arm", "n_target_private", "noise_src", "noise_tgt", "noise_pool")
_INT_COLUMNS = {"step", "seed", "n_target_private", "label"}
_STR_COLUMNS = {"config_hash", "arm", "domain"}


class SchemaError(ValueError):
    """A CSV file does not match the expected columns."""


def _cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _comment(kind: str) -> str:
    return f"# unida-lab {kind} v{SCHEMA_VERSION}\n"


def dumps_rows(rows, columns, kind: str) -> str:
    buf = io.StringIO()
    buf.write(_comment(kind))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        missing = [c for c in columns if c not in row]
        if missing:
            raise SchemaError(f"row is missing columns {missing}")
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def write_rows(path, rows, columns, kind: str) -> None:
    Path(path).write_text(dumps_rows(rows, columns, kind), encoding="utf-8")


def _convert(column: str, text: str):
    if column in _STR_COLUMNS:
        return text
    if column in _INT_COLUMNS:
        return int(text)
    return float(text)


def loads_rows(text: str, columns=None) -> tuple[str, list[dict]]:
    """Parse a file written by :func:`dumps_rows`. Returns ``(kind, rows)``.

    With ``columns`` given, the header must contain them; otherwise the
    columns are checked against the known schema for the file's kind.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# unida-lab "):
        raise SchemaError("missing '# unida-lab <kind> v<version>' header comment")
    parts = lines[0].split()
    if len(parts) != 4 or parts[3] != f"v{SCHEMA_VERSION}":
        raise SchemaError(f"unsupported schema line {lines[0]!r}")
    kind = parts[2]
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration as exc:
        raise SchemaError("missing header row") from exc
    expected = columns if columns is not None else _KINDS.get(kind)
    if expected is not None:
        missing = [c for c in expected if c not in header]
        if missing:
            raise SchemaError(f"{kind} file lacks columns {missing}; header has {header}")
    rows = []
    for lineno, rec in enumerate(reader, 3):
        if len(rec) != len(header):
            raise SchemaError(f"line {lineno}: {len(rec)} cells for {len(header)} columns")
        try:
            rows.append({c: _convert(c, v) for c, v in zip(header, rec)})
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from exc
    return kind, rows


def read_rows(path, columns=None) -> tuple[str, list[dict]]:
    return loads_rows(Path(path).read_text(encoding="utf-8"), columns)


def sort_rows(rows, keys=("arm", "spcr", "n_target_private", "flip_rate", "alpha", "seed")) -> list[dict]:
    """Canonical order, so sweep output does not depend on cell execution order."""

    def key(row):
        out = []
        for k in keys:
            v = row.get(k, "")
            out.append((0, v) if not isinstance(v, float) or not math.isnan(v) else (1, 0))
        return out

    return sorted(rows, key=key)


_KINDS = {"step-log": STEP_COLUMNS, "eval": EVAL_COLUMNS, "sweep": SWEEP_COLUMNS}
