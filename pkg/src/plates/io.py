"""File formats: symmetric matrices, mode tables, coefficient blobs, reports.

All text writers use LF endings and ``%.17g`` floats so that a write/read
round trip is bit-exact.  Provenance goes into ``#`` comment lines at the
top of each file; readers skip them.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SYM_HEADER",
    "COEFF_MAGIC",
    "FormatError",
    "config_hash",
    "provenance_lines",
    "write_sym_matrix",
    "read_sym_matrix",
    "write_modes_csv",
    "read_modes_csv",
    "write_coefficients",
    "read_coefficients",
    "write_nodal_csv",
    "write_flux_csv",
    "write_vtk",
]

SYM_HEADER = "plates-sym v1"
# binary coefficient file:
#   8 bytes  magic b"PLATESCF"
#   u32 LE   format version (1)
#   u64 LE   rows, u64 LE cols
#   u32 LE   length of the UTF-8 JSON metadata block, then the block
#   rows*cols float64 LE, row-major
COEFF_MAGIC = b"PLATESCF"
_COEFF_HEAD = struct.Struct("<8sIQQI")


class FormatError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


def _fmt(x):
    return f"{float(x):.17g}"


def config_hash(config):
    """Short hash of a resolved configuration (a flat dict)."""
    text = "\n".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def provenance_lines(provenance):
    """``# key=value`` lines in key order; None skips the header."""
    if not provenance:
        return []
    return [f"# {k}={provenance[k]}" for k in provenance]


def _write_lines(path, lines):
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def _data_lines(path):
    for lineno, raw in enumerate(Path(path).read_text().split("\n"), 1):
        s = raw.strip()
        if s and not s.startswith("#"):
            yield lineno, s


# ---- symmetric coordinate format ---------------------------------------------

def write_sym_matrix(A, path, provenance=None):
    """Upper triangle (i <= j) in ``plates-sym v1``, sorted by (i, j)."""
    U = sp.triu(sp.csr_matrix(A)).tocoo()
    order = np.lexsort((U.col, U.row))
    r, c, v = U.row[order], U.col[order], U.data[order]
    lines = [SYM_HEADER] + provenance_lines(provenance)
    lines.append(f"{A.shape[0]} {len(v)}")
    lines += [f"{i} {j} {_fmt(x)}" for i, j, x in zip(r, c, v)]
    _write_lines(path, lines)


def read_sym_matrix(path):
    """Inverse of :func:`write_sym_matrix`; returns the full symmetric CSR matrix."""
    it = _data_lines(path)
    try:
        ln, head = next(it)
    except StopIteration:
        raise FormatError("empty file") from None
    if head != SYM_HEADER:
        raise FormatError(f"expected header {SYM_HEADER!r}", ln)
    try:
        ln, s = next(it)
        n, nnz = (int(x) for x in s.split())
    except (StopIteration, ValueError):
        raise FormatError("expected 'n nnz'") from None
    r = np.empty(nnz, dtype=np.int64)
    c = np.empty(nnz, dtype=np.int64)
    v = np.empty(nnz)
    k = 0
    for ln, s in it:
        parts = s.split()
        if len(parts) != 3 or k >= nnz:
            raise FormatError("bad entry line", ln)
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i <= j < n):
            raise FormatError(f"index ({i}, {j}) outside the upper triangle of size {n}", ln)
        r[k], c[k], v[k] = i, j, float(parts[2])
        k += 1
    if k != nnz:
        raise FormatError(f"expected {nnz} entries, found {k}")
    off = r != c
    rows = np.concatenate([r, c[off]])
    cols = np.concatenate([c, r[off]])
    vals = np.concatenate([v, v[off]])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sort_indices()
    return A


# ---- modes -------------------------------------------------------------------

def write_modes_csv(path, modes, provenance=None, target=None):
    """Columns ``f_r,residual,coeff_0..coeff_{n-1}``; one row per mode.

    ``target`` (a list of target frequencies, one per mode) adds a leading
    ``f`` column.
    """
    if not modes:
        n = 0
    else:
        n = len(modes[0].coeffs)
    cols = (["f"] if target is not None else []) + ["f_r", "residual"] + [f"coeff_{i}" for i in range(n)]
    lines = provenance_lines(provenance) + [",".join(cols)]
    for k, m in enumerate(modes):
        head = [_fmt(target[k])] if target is not None else []
        lines.append(",".join(head + [_fmt(m.f_r), _fmt(m.residual)] + [_fmt(x) for x in m.coeffs]))
    _write_lines(path, lines)


def read_modes_csv(path):
    """Returns ``(columns, array)``."""
    it = _data_lines(path)
    _, head = next(it)
    cols = head.split(",")
    rows = [[float(x) for x in s.split(",")] for _, s in it]
    return cols, np.array(rows).reshape(len(rows), len(cols))


def write_coefficients(path, array, meta=None):
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(array, dtype="<f8")))
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_COEFF_HEAD.pack(COEFF_MAGIC, 1, a.shape[0], a.shape[1], len(blob)))
        fh.write(blob)
        fh.write(a.tobytes())


def read_coefficients(path):
    """Returns ``(array (rows, cols), meta dict)``."""
    data = Path(path).read_bytes()
    if len(data) < _COEFF_HEAD.size:
        raise FormatError("truncated coefficient file")
    magic, version, rows, cols, mlen = _COEFF_HEAD.unpack_from(data)
    if magic != COEFF_MAGIC or version != 1:
        raise FormatError("not a plates coefficient file (v1)")
    start = _COEFF_HEAD.size + mlen
    meta = json.loads(data[_COEFF_HEAD.size:start].decode())
    if len(data) != start + 8 * rows * cols:
        raise FormatError("coefficient payload size does not match the header")
    a = np.frombuffer(data, dtype="<f8", offset=start).reshape(rows, cols).copy()
    return a, meta


# ---- reports -----------------------------------------------------------------

def write_nodal_csv(path, nodal, provenance=None):
    lines = provenance_lines(provenance) + ["x,y,z,nodal,min_overall_norm"]
    for p, flag, mn in zip(nodal.points, nodal.nodal, nodal.min_norm):
        lines.append(f"{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{int(flag)},{_fmt(mn)}")
    _write_lines(path, lines)


def write_flux_csv(path, rows, provenance=None):
    """``rows``: iterables ``(f, f_r, system, flux, t_j_index)``."""
    lines = provenance_lines(provenance) + ["f,f_r,system,flux,t_j_index"]
    for f, fr, system, flux, j in rows:
        lines.append(f"{_fmt(f)},{_fmt(fr)},{system},{_fmt(flux)},{int(j)}")
    _write_lines(path, lines)


def write_vtk(path, K, point_data=None, title="plates"):
    """Legacy ASCII VTK unstructured grid of the tetrahedra with scalar point data."""
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {K.n_vertices} double"]
    lines += [" ".join(_fmt(c) for c in xyz) for xyz in K.coords]
    lines.append(f"CELLS {K.n_tets} {5 * K.n_tets}")
    lines += ["4 " + " ".join(str(int(i)) for i in t) for t in K.tets]
    lines.append(f"CELL_TYPES {K.n_tets}")
    lines += ["10"] * K.n_tets
    if point_data:
        lines.append(f"POINT_DATA {K.n_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (K.n_vertices,):
                raise ValueError(f"point data {name!r} has shape {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(x) for x in values]
    _write_lines(path, lines)
