"""CSV and JSON input/output.

Dialect: comma separated, UTF-8, a header row, the first column holding
row identifiers, '.' as decimal separator.  Numbers are written with 17
significant digits so that every double survives a round trip.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError


def fmt(x) -> str:
    return format(float(x), ".17g")


def _parse(cell: str, path, line: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise InputError(f"column {column!r}: not a number: {cell!r}",
                         path, line) from None
    if not math.isfinite(v):
        raise InputError(f"column {column!r}: non-finite value {cell!r}",
                         path, line)
    return v


def read_matrix(path):
    """Read a labelled numeric table.

    Returns
    -------
    row_ids : list of str
    columns : list of str
    data : ndarray, shape (len(row_ids), len(columns))
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read file ({exc.strerror})", path) from None
    except UnicodeDecodeError:
        raise InputError("file is not valid UTF-8", path) from None
    if not rows:
        raise InputError("file is empty", path, 1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise InputError("header needs an identifier column and at least "
                         "one data column", path, 1)
    columns = header[1:]
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"expected {len(header)} fields, found {len(row)}",
                             path, lineno)
        ids.append(row[0].strip())
        data.append([_parse(c, path, lineno, col)
                     for c, col in zip(row[1:], columns)])
    if not data:
        raise InputError("no data rows", path)
    return ids, columns, np.asarray(data, dtype=float)


def read_weights(path) -> np.ndarray:
    """One weight per line; blank lines are ignored."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read file ({exc.strerror})", path) from None
    vals = []
    for lineno, text in enumerate(lines, start=1):
        text = text.strip()
        if not text:
            continue
        vals.append(_parse(text, path, lineno, "weight"))
    if not vals:
        raise InputError("no weights found", path)
    return np.asarray(vals)


def write_matrix(path, row_ids, columns, data, index_name="id") -> None:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name, *columns])
        for rid, row in zip(row_ids, data):
            w.writerow([rid, *(fmt(v) for v in row)])


COMPONENT_FIELDS = ("side", "kind", "rank", "label", "value")


def component_records(basis, side_labels, loading_labels):
    """Long-format records for the scores and loadings of a basis."""
    out = []
    for c in basis.components:
        for lab, v in zip(side_labels, c.scores):
            out.append((basis.side, "score", c.rank, lab, v))
        for lab, v in zip(loading_labels, c.loading):
            out.append((basis.side, "loading", c.rank, lab, v))
    return out


def write_components(path, records) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPONENT_FIELDS)
        for side, kind, rank, label, v in records:
            w.writerow([side, kind, rank, label, fmt(v)])


def read_components(path) -> dict:
    """Inverse of :func:`write_components`.

    Returns ``{(side, kind, rank): (labels, values)}``.
    """
    path = Path(path)
    out: dict = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COMPONENT_FIELDS:
            raise InputError("not a component table", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(COMPONENT_FIELDS):
                raise InputError("wrong field count", path, lineno)
            side, kind, rank, label, value = row
            try:
                key = (side, kind, int(rank))
            except ValueError:
                raise InputError(f"bad rank {rank!r}", path, lineno) from None
            labels, vals = out.setdefault(key, ([], []))
            labels.append(label)
            vals.append(_parse(value, path, lineno, "value"))
    return {k: (labs, np.asarray(v)) for k, (labs, v) in out.items()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_records(path, rows: list) -> None:
    """Write dict rows as CSV; floats with 17 significant digits."""
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    fields = list(rows[0])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r[f]) for f in fields])


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else fmt(v)
    return str(v)
