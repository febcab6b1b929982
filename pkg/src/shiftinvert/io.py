"""Readers for Matrix Market coordinate files and dense CSV matrices."""

import math

import numpy as np
import scipy.sparse as sp

from .errors import ParseError
from .linalg import RowMatrix


def _parse_float(token, line_no, path, where):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"cannot parse {token!r} as a number {where}", line_no, path) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r} {where}", line_no, path)
    return value


def read_matrix_market(path):
    """Read a ``coordinate real general`` Matrix Market file into a RowMatrix.

    Entries are 1-based. Duplicate coordinates are summed.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file, expected a %%MatrixMarket header", 1, path)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise ParseError(f"malformed header {lines[0]!r}", 1, path)
    obj, fmt, field, symmetry = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise ParseError(f"only 'matrix coordinate' is supported, got {obj!r} {fmt!r}", 1, path)
    if field not in ("real", "integer", "double"):
        raise ParseError(f"unsupported field {field!r}", 1, path)
    if symmetry != "general":
        raise ParseError(f"unsupported symmetry {symmetry!r}", 1, path)

    pos = 1
    while pos < len(lines) and (not lines[pos].strip() or lines[pos].lstrip().startswith("%")):
        pos += 1
    if pos == len(lines):
        raise ParseError("missing size line", pos + 1, path)
    size = lines[pos].split()
    try:
        n, d, nnz = (int(s) for s in size)
    except ValueError:
        raise ParseError(f"size line must hold three integers, got {lines[pos]!r}", pos + 1, path) from None
    if n < 0 or d < 0 or nnz < 0:
        raise ParseError("negative size", pos + 1, path)

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    k = 0
    for line_no in range(pos + 2, len(lines) + 1):
        text = lines[line_no - 1].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'row col value', got {text!r}", line_no, path)
        if k >= nnz:
            raise ParseError(f"more entries than the declared {nnz}", line_no, path)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer coordinate in {text!r}", line_no, path) from None
        if not (1 <= i <= n and 1 <= j <= d):
            raise ParseError(f"coordinate ({i}, {j}) outside {n} x {d}", line_no, path)
        vals[k] = _parse_float(parts[2], line_no, path, f"at row {i}, column {j}")
        rows[k] = i - 1
        cols[k] = j - 1
        k += 1
    if k != nnz:
        raise ParseError(f"declared {nnz} entries but found {k}", len(lines), path)
    return RowMatrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, d)).tocsr())


def read_dense_csv(path, delimiter=","):
    """Read one matrix row per line. Blank lines and ``#`` comments are skipped."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(delimiter)
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(f"row has {len(parts)} columns, expected {width}", line_no, path)
            r = len(rows) + 1
            rows.append(
                [_parse_float(tok.strip(), line_no, path, f"at row {r}, column {c + 1}") for c, tok in enumerate(parts)]
            )
    if not rows:
        raise ParseError("no data rows", None, path)
    return RowMatrix.from_dense(np.array(rows))


def write_matrix_market(path, m):
    """Write a RowMatrix as ``coordinate real general``."""
    coo = m.csr.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{m.n} {m.d} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
