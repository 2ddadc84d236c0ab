"""Loading and validation for the documented thermlab CSV schemas.

Each figure kind consumes exactly one CSV layout, reproduced here verbatim
from the runner's documentation.  Loading is strict: a missing column or a
cell that fails to parse as a number raises SchemaMismatch naming the
offending column, so a figure is never drawn from a file the runner did not
produce.  Extra columns are tolerated and ignored.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
TEXT = "text"

# Column name -> cell kind, per figure kind.  The convergence kind reads the
# grid-size sweep, whose metric column is literally named "error"; sweeps over
# other axes use a different metric name and are rejected by design.
SCHEMAS = {
    "cascade": {
        "n": NUMERIC,
        "a": NUMERIC,
        "b1": NUMERIC,
        "b2": NUMERIC,
        "M11": NUMERIC,
        "M12": NUMERIC,
        "M22": NUMERIC,
        "trace_residual": NUMERIC,
        "sup_error": NUMERIC,
        "increment": NUMERIC,
    },
    "modulus": {"r": NUMERIC, "oscillation": NUMERIC, "ratio": NUMERIC},
    "stability": {"scale": NUMERIC, "distance": NUMERIC},
    "convergence": {
        "value": NUMERIC,
        "converged": TEXT,
        "outer_iterations": NUMERIC,
        "final_diff": NUMERIC,
        "error": NUMERIC,
        "note": TEXT,
    },
}


class SchemaMismatch(Exception):
    """An input CSV does not match the documented schema for its kind."""


@dataclass(frozen=True)
class Table:
    """One validated CSV: numeric columns as arrays, text columns as lists."""

    path: Path
    label: str
    columns: dict
    text: dict

    def __len__(self) -> int:
        if self.columns:
            return len(next(iter(self.columns.values())))
        return 0


def load_table(path, kind: str, label: str | None = None) -> Table:
    """Read one CSV and validate it against the schema for ``kind``."""
    if kind not in SCHEMAS:
        raise ValueError(f"unknown figure kind {kind!r}")
    schema = SCHEMAS[kind]
    path = Path(path)
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch(f"{path.name}: file is empty, expected a header row")
    header = rows[0]
    for name in schema:
        if name not in header:
            raise SchemaMismatch(
                f"{path.name}: missing column {name!r} required by kind {kind!r}"
            )
    index = {name: header.index(name) for name in schema}
    body = rows[1:]
    if not body:
        raise ValueError(f"{path.name} has a header but no data rows")

    columns = {}
    text = {}
    for name, cell_kind in schema.items():
        col = index[name]
        raw = []
        for lineno, row in enumerate(body, start=2):
            if col >= len(row):
                raise SchemaMismatch(
                    f"{path.name}: line {lineno} has no value for column {name!r}"
                )
            raw.append(row[col])
        if cell_kind == TEXT:
            text[name] = raw
            continue
        parsed = np.empty(len(raw))
        for i, cell in enumerate(raw):
            try:
                parsed[i] = float(cell)
            except ValueError:
                raise SchemaMismatch(
                    f"{path.name}: column {name!r} has non-numeric value "
                    f"{cell!r} (line {i + 2})"
                ) from None
        columns[name] = parsed
    return Table(path=path, label=label or path.stem, columns=columns, text=text)


def load_annotations(path) -> dict:
    """Read a verdicts JSON file; the values annotate figures verbatim."""
    with open(Path(path), encoding="ascii") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SchemaMismatch(f"{Path(path).name}: expected a JSON object at top level")
    return data
