"""Field files, CSV tables and point lists.

Field file layout: one ASCII header line

    ACSFIELD v1 m=<m> extents=<e1,...,em> h=<h> origin=<o1,...,om> boundary=<b>

followed by little-endian float64 values, grid points in lexicographic
order, each matrix row-major.  Every writer goes through a temporary file
and ``os.replace`` so a failed run never leaves a truncated artifact.
"""

import csv
import io as _io
import os
import tempfile

import numpy as np

from ._validation import InvalidInputError
from .field import AcsField, Grid

MAGIC = "ACSFIELD v1"


def fmt(x):
    """17 significant digits; round-trips any float64."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a sibling temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_header(grid):
    return (f"{MAGIC} m={grid.m} extents={','.join(str(e) for e in grid.extents)} "
            f"h={fmt(grid.h)} origin={','.join(fmt(o) for o in grid.origin)} "
            f"boundary={grid.boundary}\n")


def field_bytes(J):
    vals = np.ascontiguousarray(J.values, dtype="<f8")
    return field_header(J.grid).encode("ascii") + vals.tobytes()


def write_field(path, J):
    atomic_write(path, field_bytes(J))


def _parse_header(line):
    if not line.startswith(MAGIC + " "):
        raise InvalidInputError("not an ACSFIELD v1 file")
    kv = {}
    for tok in line[len(MAGIC):].split():
        if "=" not in tok:
            raise InvalidInputError(f"malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    need = {"m", "extents", "h", "origin", "boundary"}
    if set(kv) != need:
        raise InvalidInputError(f"header keys {sorted(kv)} != {sorted(need)}")
    try:
        m = int(kv["m"])
        extents = tuple(int(e) for e in kv["extents"].split(","))
        h = float(kv["h"])
        origin = tuple(float(o) for o in kv["origin"].split(","))
    except ValueError as exc:
        raise InvalidInputError(f"malformed header: {exc}") from exc
    return Grid(m, extents, h, origin, kv["boundary"])


def read_field(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InvalidInputError("missing header line")
    try:
        header = raw[:nl].decode("ascii")
    except UnicodeDecodeError as exc:
        raise InvalidInputError("header is not ASCII") from exc
    grid = _parse_header(header)
    body = raw[nl + 1:]
    count = grid.n_points * grid.m * grid.m
    if len(body) != 8 * count:
        raise InvalidInputError(f"expected {8 * count} data bytes, found {len(body)}")
    vals = np.frombuffer(body, dtype="<f8").astype(float)
    vals = vals.reshape(grid.extents + (grid.m, grid.m))
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("field file contains non-finite values")
    return AcsField(grid, vals)


def csv_text(columns, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v
                    for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows):
    atomic_write(path, csv_text(columns, rows))


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        cols = next(r)
        return cols, [row for row in r]


def write_points(path, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lines = [" ".join(fmt(c) for c in p) for p in pts] if pts.size else []
    atomic_write(path, "".join(line + "\n" for line in lines))


def read_points(path, m=None):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(t) for t in line.split()])
    arr = np.array(rows, dtype=float)
    if not rows:
        return np.zeros((0, m or 0))
    return arr


def write_summary(path, items):
    """``key: value`` lines in insertion order."""
    text = "".join(f"{k}: {fmt(v) if isinstance(v, (float, np.floating)) else v}\n"
                   for k, v in items.items())
    atomic_write(path, text)
