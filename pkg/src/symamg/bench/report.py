"""Report rows and their CSV / text-table / JSON renderings."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

FORMATS = ("csv", "table", "json")


@dataclass
class ReportRow:
    preconditioner: str
    method: str
    s: int | None
    n_b: int
    n: int
    coarsening_ratio: float | None
    avg_nnzr: float | None
    iterations: int
    converged: bool
    t_setup_seconds: float
    t_sol_seconds: float
    speedup_vs_baseline: float


COLUMNS = [f.name for f in fields(ReportRow)]
_INT = {"s", "n_b", "n", "iterations"}
_FLOAT = {"coarsening_ratio", "avg_nnzr", "t_setup_seconds", "t_sol_seconds", "speedup_vs_baseline"}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _typed(key, text):
    if text == "":
        return None
    if key in _INT:
        return int(text)
    if key in _FLOAT:
        return float(text)
    if key == "converged":
        return text == "true"
    return text


def _fmt(key, v):
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "NO"
    if key in ("coarsening_ratio",):
        return f"{v:.3f}"
    if key in ("avg_nnzr", "speedup_vs_baseline"):
        return f"{v:.2f}"
    if key.startswith("t_"):
        return f"{v:.3f}"
    return str(v)


def emit_report(rows, fmt="csv") -> str:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if fmt == "json":
        return json.dumps([asdict(r) for r in rows], indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_cell(getattr(r, c)) for c in COLUMNS])
        return buf.getvalue()
    table = [COLUMNS] + [[_fmt(c, getattr(r, c)) for c in COLUMNS] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(COLUMNS))]
    out = []
    for j, line in enumerate(table):
        out.append("  ".join(cell.ljust(w) if (i == 0 or not j) else cell.rjust(w)
                             for i, (cell, w) in enumerate(zip(line, widths))).rstrip())
        if j == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def parse_csv(text):
    """Inverse of ``emit_report(rows, "csv")``."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is not None and reader.fieldnames != COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [ReportRow(**{k: _typed(k, v) for k, v in rec.items()}) for rec in reader]
