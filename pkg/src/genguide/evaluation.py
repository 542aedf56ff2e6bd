"""Metric tables, violation ECDFs and trace post-processing."""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import MalformedRecord, MonotonicityViolation
from .scorers import NoeReport

NOE_COLUMNS = ("loss", "percent_violation", "mean_violation", "median_violation")


@dataclass(frozen=True)
class EcdfCurve:
    """Right-continuous empirical CDF of group violations, zeros included."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("ECDF needs at least one value")
        object.__setattr__(self, "values", tuple(sorted(float(v) for v in self.values)))

    def at(self, x: float) -> float:
        return bisect.bisect_right(self.values, x) / len(self.values)

    @property
    def thresholds(self) -> tuple[float, ...]:
        return tuple(sorted({0.0, *self.values}))

    @property
    def points(self) -> tuple[tuple[float, float], ...]:
        return tuple((x, self.at(x)) for x in self.thresholds)


def ecdf_from_report(report: NoeReport) -> EcdfCurve:
    return EcdfCurve(report.violations)


def ecdf_table(curves: Mapping[str, EcdfCurve]) -> list[tuple[str, float, float]]:
    """Every curve evaluated on the union of all thresholds."""
    grid = sorted({x for c in curves.values() for x in c.thresholds})
    return [(name, x, c.at(x)) for name, c in curves.items() for x in grid]


def format_ecdf_csv(rows: Sequence[tuple[str, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["structure", "threshold_angstrom", "fraction"])
    for name, x, f in rows:
        w.writerow([name, repr(x), repr(f)])
    return buf.getvalue()


def noe_row(report: NoeReport) -> dict[str, float]:
    return dict(zip(NOE_COLUMNS, report.metrics))


def format_table(rows: Sequence[Mapping[str, object]], columns: Sequence[str]) -> str:
    """Fixed-width text table; floats with four decimals."""
    cells = [[str(c) for c in columns]]
    for row in rows:
        cells.append([f"{row[c]:.4f}" if isinstance(row[c], float) else str(row[c]) for c in columns])
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells) + "\n"


def format_csv(rows: Sequence[Mapping[str, object]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


def trace_plotdata(trace_csv: str) -> str:
    """Best/mean series from a trace CSV; refuses a non-monotone best series."""
    reader = csv.DictReader(io.StringIO(trace_csv))
    need = {"cycle", "index", "best_loss", "mean_loss"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise MalformedRecord(f"trace needs columns {sorted(need)}", 1)
    rows = list(reader)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["cycle", "best", "mean", "index"])
    previous = None
    for lineno, row in enumerate(rows, start=2):
        best = float(row["best_loss"])
        if previous is not None and best > previous:
            raise MonotonicityViolation(
                f"best loss rose from {previous!r} to {best!r} at cycle {row['cycle']} (line {lineno})"
            )
        previous = best
        w.writerow([row["cycle"], row["best_loss"], row["mean_loss"], row["index"]])
    return out.getvalue()
