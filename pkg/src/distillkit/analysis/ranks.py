"""Average-rank aggregation over benchmark result tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from distillkit.errors import TableFormatError

HIGHER = "higher_better"
LOWER = "lower_better"
_DIRECTION_CODES = {"+": HIGHER, "-": LOWER, "up": HIGHER, "down": LOWER, HIGHER: HIGHER, LOWER: LOWER}


@dataclass
class ResultsTable:
    models: list
    metrics: list
    directions: list
    values: np.ndarray  # (models, metrics)
    notes: dict = None  # non-metric columns, name -> list of strings

    def __post_init__(self):
        if len(self.directions) != len(self.metrics):
            raise TableFormatError("every metric column needs a direction")
        bad = [d for d in self.directions if d not in (HIGHER, LOWER)]
        if bad:
            raise TableFormatError(f"unknown directions {bad}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.models), len(self.metrics)):
            raise TableFormatError(f"values shape {self.values.shape} does not match "
                                   f"{len(self.models)} models x {len(self.metrics)} metrics")


def fractional_ranks(values, direction):
    """Rank 1 = best; tied entries share the mean of the positions they span."""
    keys = [Fraction(v) for v in values]
    if direction == HIGHER:
        keys = [-k for k in keys]
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    ranks = [Fraction(0)] * len(keys)
    pos = 0
    while pos < len(order):
        end = pos
        while end + 1 < len(order) and keys[order[end + 1]] == keys[order[pos]]:
            end += 1
        shared = Fraction(pos + 1 + end + 1, 2)
        for k in range(pos, end + 1):
            ranks[order[k]] = shared
        pos = end + 1
    return ranks


def round_half_away(x, digits=1):
    q = Fraction(x) * 10 ** digits
    n = math.floor(abs(q) + Fraction(1, 2))
    return math.copysign(n, q) / 10 ** digits if q else 0.0


def exact_average_ranks(table):
    if len(table.models) < 2:
        raise TableFormatError("ranking needs at least two models")
    per_column = [fractional_ranks(table.values[:, j], table.directions[j]) for j in range(len(table.metrics))]
    n_cols = len(per_column)
    return {m: sum(col[i] for col in per_column) / n_cols for i, m in enumerate(table.models)}


def aggregate_ranks(table, digits=1):
    """Per-model mean of per-column ranks, rounded half away from zero."""
    return {m: round_half_away(r, digits) for m, r in exact_average_ranks(table).items()}


def _rows(text):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.reader(io.StringIO("\n".join(lines))))


def parse_results_csv(text, source="<csv>"):
    """CSV with a header row, then a ``direction`` row of ``+``/``-`` per metric column.

    Columns whose direction cell is empty are carried along as notes and not
    ranked. Lines starting with ``#`` are comments.
    """
    rows = _rows(text)
    if len(rows) < 2:
        raise TableFormatError(f"{source}: need a header row and a direction row")
    header, direction = rows[0], rows[1]
    if not direction or direction[0].strip().lower() != "direction":
        raise TableFormatError(f"{source}: second row must be the 'direction' row")
    metrics, dirs, metric_cols, note_cols = [], [], [], []
    for j, name in enumerate(header[1:], start=1):
        code = direction[j].strip() if j < len(direction) else ""
        if not code:
            note_cols.append((j, name))
            continue
        if code not in _DIRECTION_CODES:
            raise TableFormatError(f"{source}: column {name!r} has unknown direction {code!r}")
        metrics.append(name)
        dirs.append(_DIRECTION_CODES[code])
        metric_cols.append(j)
    if not metrics:
        raise TableFormatError(f"{source}: no metric columns")
    models, values = [], []
    notes = {name: [] for _, name in note_cols}
    for row in rows[2:]:
        model = row[0].strip()
        vals = []
        for j, name in zip(metric_cols, metrics):
            cell = row[j].strip() if j < len(row) else ""
            try:
                v = float(cell)
            except ValueError:
                raise TableFormatError(f"{source}: row {model!r}, column {name!r}: {cell!r} is not numeric") from None
            if not math.isfinite(v):
                raise TableFormatError(f"{source}: row {model!r}, column {name!r}: {cell!r} is not finite")
            vals.append(v)
        models.append(model)
        values.append(vals)
        for j, name in note_cols:
            notes[name].append(row[j].strip() if j < len(row) else "")
    return ResultsTable(models, metrics, dirs, np.array(values).reshape(len(models), len(metrics)), notes)


def read_results_csv(path):
    with open(path, encoding="utf-8") as fh:
        return parse_results_csv(fh.read(), source=str(path))


def rank_report(table, digits=1):
    ranks = aggregate_ranks(table, digits)
    width = max(len(m) for m in ranks)
    return "\n".join(f"{m:<{width}}  {r:.{digits}f}" for m, r in ranks.items())
