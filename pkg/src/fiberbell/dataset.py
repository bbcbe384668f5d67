"""Sweep datasets: one CSV row of integer tallies per measurement point."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

from .counting import CountRecord

__all__ = [
    "HEADER",
    "DatasetError",
    "SweepDatasetRow",
    "read_dataset",
    "write_dataset",
    "format_float",
    "rows_from_results",
    "dumps",
]

HEADER = ("point_id", "theta_s_deg", "theta_i_deg", "per_db", "handedness", "long_axis", "pulses", "n_s", "n_i", "n_co", "n_ac")
_TALLIES = ("n_s", "n_i", "n_co", "n_ac")


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def format_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


@dataclass(frozen=True)
class SweepDatasetRow:
    point_id: int
    theta_s_deg: float
    theta_i_deg: float
    per_db: float
    handedness: str
    long_axis: int
    pulses: int
    n_s: int
    n_i: int
    n_co: int
    n_ac: int

    def record(self) -> CountRecord:
        return CountRecord(
            self.pulses,
            self.n_s,
            self.n_i,
            self.n_co,
            self.n_ac,
            settings={
                "point_id": self.point_id,
                "theta_s_deg": self.theta_s_deg,
                "theta_i_deg": self.theta_i_deg,
                "per_db": self.per_db,
                "handedness": self.handedness,
                "long_axis": self.long_axis,
            },
        )

    def cells(self) -> list[str]:
        return [
            str(self.point_id),
            format_float(self.theta_s_deg),
            format_float(self.theta_i_deg),
            format_float(self.per_db),
            self.handedness,
            f"{self.long_axis:+d}",
            str(self.pulses),
            *(str(getattr(self, k)) for k in _TALLIES),
        ]


def rows_from_results(results) -> list[SweepDatasetRow]:
    """Dataset rows from simulated ``TallyResult`` objects, numbered in order."""
    rows = []
    for k, res in enumerate(results):
        rec = res.record
        s = rec.settings
        rows.append(
            SweepDatasetRow(
                k, s["theta_s_deg"], s["theta_i_deg"], s["per_db"], s["handedness"], s["long_axis"],
                rec.pulses, rec.n_s, rec.n_i, rec.n_co, rec.n_ac,
            )
        )
    return rows


def _int_cell(text: str, name: str, line: int) -> int:
    t = text.strip()
    if not t.lstrip("+-").isdigit():
        raise DatasetError(f"{name} must be an integer, got {text!r}", line)
    return int(t)


def _float_cell(text: str, name: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"{name} must be a number, got {text!r}", line) from None


def _parse_row(cells: list[str], line: int) -> SweepDatasetRow:
    if len(cells) != len(HEADER):
        raise DatasetError(f"expected {len(HEADER)} columns, got {len(cells)}", line)
    d = dict(zip(HEADER, cells))
    point_id = _int_cell(d["point_id"], "point_id", line)
    ts = _float_cell(d["theta_s_deg"], "theta_s_deg", line)
    ti = _float_cell(d["theta_i_deg"], "theta_i_deg", line)
    per = _float_cell(d["per_db"], "per_db", line)
    if math.isnan(per) or per < 0:
        raise DatasetError(f"per_db must be >= 0 or inf, got {d['per_db']!r}", line)
    hand = d["handedness"].strip()
    if hand not in ("right", "left"):
        raise DatasetError(f"handedness must be right or left, got {hand!r}", line)
    axis = d["long_axis"].strip()
    if axis not in ("+45", "45", "-45"):
        raise DatasetError(f"long_axis must be +45 or -45, got {axis!r}", line)
    pulses = _int_cell(d["pulses"], "pulses", line)
    if pulses <= 0:
        raise DatasetError("pulses must be positive", line)
    tallies = {k: _int_cell(d[k], k, line) for k in _TALLIES}
    for k, v in tallies.items():
        if v < 0:
            raise DatasetError(f"{k} must be non-negative", line)
        if v > pulses:
            raise DatasetError(f"{k}={v} exceeds pulses={pulses}", line)
    return SweepDatasetRow(point_id, ts, ti, per, hand, -45 if axis == "-45" else 45, pulses, **tallies)


def read_dataset(path_or_file) -> list[SweepDatasetRow]:
    """Read a CSV dataset with the exact ``HEADER``."""
    if hasattr(path_or_file, "read"):
        return _read(path_or_file)
    with open(path_or_file, newline="", encoding="utf-8") as fh:
        return _read(fh)


def _read(fh) -> list[SweepDatasetRow]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty dataset: header row is mandatory") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise DatasetError(f"header mismatch: expected {','.join(HEADER)}", 1)
    rows = []
    for cells in reader:
        if not cells:
            continue
        rows.append(_parse_row(cells, reader.line_num))
    return rows


def write_dataset(path_or_file, rows, fmt: str = "csv") -> None:
    """Write rows as CSV (default) or JSON lines."""
    if hasattr(path_or_file, "write"):
        _write(path_or_file, rows, fmt)
        return
    with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
        _write(fh, rows, fmt)


def _write(fh, rows, fmt: str) -> None:
    if fmt == "csv":
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for row in rows:
            w.writerow(row.cells())
    elif fmt == "json-lines":
        for row in rows:
            obj = {k: v for k, v in zip(HEADER, row.cells())}
            for k in ("point_id", "pulses", *_TALLIES):
                obj[k] = int(obj[k])
            for k in ("theta_s_deg", "theta_i_deg", "per_db"):
                v = float(obj[k])
                if math.isfinite(v):
                    obj[k] = v
            fh.write(json.dumps(obj) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def dumps(rows, fmt: str = "csv") -> str:
    buf = io.StringIO()
    _write(buf, rows, fmt)
    return buf.getvalue()
