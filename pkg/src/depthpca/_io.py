"""CSV and JSON plumbing for the command line front end.

CSV dialect: comma separated, one header row, UTF-8, decimal point, no
missing values.  Numbers are written with 17 significant digits so that
parsing them back reproduces every float exactly.
"""

import csv
import json
import math
import os

import numpy as np

from .depth import mad
from .errors import InvalidInput


def fmt(x):
    """17-significant-digit text for a float; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def read_table(path, exclude=()):
    """Parse a numeric CSV; returns ``(headers, values)`` after dropping ``exclude``.

    ``exclude`` entries are column names, or 1-based positions when they
    are integers that do not name a column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInput(f"{path}: empty file")
    headers = [h.strip() for h in rows[0]]
    if len(set(headers)) != len(headers):
        raise InvalidInput(f"{path}: duplicate column names")
    drop = set()
    for token in exclude:
        token = str(token).strip()
        if token in headers:
            drop.add(headers.index(token))
        elif token.isdigit() and 1 <= int(token) <= len(headers):
            drop.add(int(token) - 1)
        else:
            raise InvalidInput(f"{path}: cannot exclude unknown column {token!r}")
    keep = [j for j in range(len(headers)) if j not in drop]
    if not keep:
        raise InvalidInput(f"{path}: no columns left after exclusion")
    body = [r for r in rows[1:] if r]
    if not body:
        raise InvalidInput(f"{path}: no data rows")
    values = np.empty((len(body), len(keep)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(headers):
            raise InvalidInput(f"{path}: line {i} has {len(r)} fields, expected {len(headers)}")
        for jj, j in enumerate(keep):
            cell = r[j].strip()
            try:
                v = float(cell)
            except ValueError:
                raise InvalidInput(f"{path}: line {i}, column {headers[j]!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InvalidInput(f"{path}: line {i}, column {headers[j]!r}: missing or non-finite value")
            values[i - 2, jj] = v
    return [headers[j] for j in keep], values


def mad_scale_columns(headers, values):
    """Divide each column by its raw MAD; a zero MAD is an error naming the column."""
    scales = mad(values, axis=0, scale=1.0)
    for h, s in zip(headers, scales):
        if not s > 0:
            raise InvalidInput(f"column {h!r} has MAD = 0; exclude it with --exclude-cols")
    return values / scales, scales


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def jsonable(obj):
    """Nested structure with arrays as lists and non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


def write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"{path}: invalid JSON ({exc.msg})") from None
