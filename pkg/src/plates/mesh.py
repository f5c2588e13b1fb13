"""Tetrahedral simplicial complexes: slab generation, barycentric subdivision,
incidence matrices and a small text file format.

Every simplex is stored as a row of vertex indices in ascending order; that
row order *is* the orientation of the simplex.  For a barycentric subdivision
the vertices are numbered by decreasing dimension of the parent simplex, so
ascending index order is exactly the canonical order of K'.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MeshError",
    "MeshFormatError",
    "SimplicialComplex3",
    "from_tets",
    "generate_slab_mesh",
    "barycentric_subdivide",
    "euler_characteristic",
    "boundary_euler",
    "load_mesh",
    "save_mesh",
]

MESH_HEADER = "plates-mesh v1"

# local sub-simplices of a sorted tetrahedron / triangle, in sorted order
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
TET_FACES = np.array([(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)])
TRI_EDGES = np.array([(0, 1), (0, 2), (1, 2)])


class MeshError(ValueError):
    """Invalid complex: closure, manifoldness or dimension problems."""


class MeshFormatError(MeshError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def _unique_rows(rows):
    """Unique sorted rows plus the inverse map (deterministic lexicographic order)."""
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def _signed_volumes(coords, tets):
    p = coords[tets]
    return np.linalg.det(p[:, 1:, :] - p[:, :1, :]) / 6.0


def _incidence(lower, upper, upper_sub, signs):
    """Sparse signed incidence: rows index ``lower`` simplices, columns ``upper``."""
    n_up, k = upper_sub.shape
    cols = np.repeat(np.arange(n_up), k)
    vals = np.tile(signs, n_up)
    return sp.csr_matrix(
        (vals.astype(np.int64), (upper_sub.reshape(-1), cols)),
        shape=(lower, n_up),
    )


@dataclass
class SimplicialComplex3:
    """A closed 3-dimensional simplicial complex embedded in R^3.

    ``edges``, ``faces`` and ``tets`` hold ascending vertex indices.  The
    ``*_edges``/``*_faces`` arrays give, for each higher simplex, the global
    indices of its sub-simplices in the local order of :data:`TET_EDGES`,
    :data:`TET_FACES` and :data:`TRI_EDGES`.
    """

    coords: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    tets: np.ndarray
    tet_edges: np.ndarray
    tet_faces: np.ndarray
    face_edges: np.ndarray
    face_tets: np.ndarray  # (F, 2), -1 where absent
    boundary_vertices: np.ndarray
    boundary_edges: np.ndarray
    boundary_faces: np.ndarray
    tet_sign: np.ndarray
    parent_dim: Optional[np.ndarray] = None
    parent_index: Optional[np.ndarray] = None
    parent: Optional["SimplicialComplex3"] = field(default=None, repr=False)

    # ---- counts --------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.coords)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_tets(self):
        return len(self.tets)

    def counts(self):
        return {
            "vertices": self.n_vertices,
            "edges": self.n_edges,
            "faces": self.n_faces,
            "tets": self.n_tets,
            "boundary_vertices": int(self.boundary_vertices.sum()),
            "boundary_edges": int(self.boundary_edges.sum()),
            "boundary_faces": int(self.boundary_faces.sum()),
        }

    def simplices(self, d):
        if d == 0:
            return np.arange(self.n_vertices).reshape(-1, 1)
        return (self.edges, self.faces, self.tets)[d - 1]

    # ---- geometry ------------------------------------------------------
    def tet_volumes(self):
        """Unsigned volumes of the tetrahedra."""
        return np.abs(_signed_volumes(self.coords, self.tets))

    def volume(self):
        return float(self.tet_volumes().sum())

    def barycenters(self, d):
        return self.coords[self.simplices(d)].mean(axis=1)

    def exterior_normals(self, faces=None):
        """Outward unit normals and areas of boundary faces.

        The normal points away from the unique incident tetrahedron, so it
        does not depend on the face's own vertex order.
        """
        if faces is None:
            faces = np.flatnonzero(self.boundary_faces)
        faces = np.asarray(faces)
        if not np.all(self.boundary_faces[faces]):
            raise MeshError("exterior normal requested for an interior face")
        tri = self.coords[self.faces[faces]]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        area2 = np.linalg.norm(n, axis=1)
        n = n / area2[:, None]
        tet = self.face_tets[faces, 0]
        opposite = self.coords[self.tets[tet]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, tri[:, 0] - opposite) < 0
        n[flip] *= -1
        return n, 0.5 * area2

    # ---- combinatorics -------------------------------------------------
    def incidence(self):
        """Signed incidence matrices ``(b_pe, b_ef, b_ft)`` as integer CSR."""
        b_pe = _incidence(self.n_vertices, self.edges, self.edges, np.array([-1, 1]))
        b_ef = _incidence(self.n_edges, self.faces, self.face_edges, np.array([1, -1, 1]))
        b_ft = _incidence(self.n_faces, self.tets, self.tet_faces[:, ::-1], np.array([1, -1, 1, -1]))
        return b_pe, b_ef, b_ft

    def vertex_tets(self):
        """CSR adjacency vertex -> incident tetrahedra (sorted by tet index)."""
        t = np.repeat(np.arange(self.n_tets), 4)
        m = sp.csr_matrix((np.ones(len(t), dtype=np.int8), (self.tets.reshape(-1), t)),
                          shape=(self.n_vertices, self.n_tets))
        m.sort_indices()
        return m

    def digest(self):
        """Short content hash of coordinates and tetrahedra."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.coords, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.tets, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


def from_tets(coords, tets, check=True):
    """Build the full closed complex generated by a list of tetrahedra."""
    coords = np.asarray(coords, dtype=np.float64)
    tets = np.asarray(tets, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise MeshError("coordinates must be an (N, 3) array")
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshError("tetrahedra must be an (M, 4) array")
    if len(tets) == 0:
        raise MeshError("complex has no tetrahedra")
    if tets.min() < 0 or tets.max() >= len(coords):
        raise MeshError("closure violation: a tetrahedron references a missing vertex")
    tets = np.sort(tets, axis=1)
    if np.any(np.diff(tets, axis=1) == 0):
        raise MeshError("tetrahedron with repeated vertices")

    faces_all = tets[:, TET_FACES].reshape(-1, 3)
    faces, inv_f = _unique_rows(faces_all)
    tet_faces = inv_f.reshape(-1, 4)
    edges_all = faces[:, TRI_EDGES].reshape(-1, 2)
    edges, inv_e = _unique_rows(edges_all)
    face_edges = inv_e.reshape(-1, 3)
    tet_edges = _lookup_rows(edges, tets[:, TET_EDGES].reshape(-1, 2)).reshape(-1, 6)

    nf = len(faces)
    counts = np.bincount(tet_faces.reshape(-1), minlength=nf)
    if check and counts.max() > 2:
        bad = int(np.argmax(counts))
        raise MeshError(f"non-manifold: face {bad} bounds {counts[bad]} tetrahedra")
    order = np.argsort(tet_faces.reshape(-1), kind="stable")
    owner = np.repeat(np.arange(len(tets)), 4)[order]
    face_tets = np.full((nf, 2), -1, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    face_tets[:, 0] = owner[starts]
    two = counts == 2
    face_tets[two, 1] = owner[starts[two] + 1]

    bface = counts == 1
    bedge = np.zeros(len(edges), dtype=bool)
    bedge[face_edges[bface].reshape(-1)] = True
    bvert = np.zeros(len(coords), dtype=bool)
    bvert[faces[bface].reshape(-1)] = True

    vol = _signed_volumes(coords, tets)
    if check and np.any(np.abs(vol) <= 1e-14 * np.abs(vol).max()):
        raise MeshError("degenerate (zero-volume) tetrahedron")

    return SimplicialComplex3(
        coords=coords, edges=edges, faces=faces, tets=tets,
        tet_edges=tet_edges, tet_faces=tet_faces, face_edges=face_edges,
        face_tets=face_tets, boundary_vertices=bvert, boundary_edges=bedge,
        boundary_faces=bface, tet_sign=np.sign(vol).astype(np.int8),
    )


def _lookup_rows(table, rows):
    """Indices of ``rows`` in the lexicographically sorted unique ``table``."""
    width = table.shape[1]
    base = int(max(table.max(), rows.max())) + 1
    key_t = np.zeros(len(table), dtype=np.int64)
    key_r = np.zeros(len(rows), dtype=np.int64)
    for j in range(width):
        key_t = key_t * base + table[:, j]
        key_r = key_r * base + rows[:, j]
    idx = np.searchsorted(key_t, key_r)
    if np.any(idx >= len(table)) or np.any(key_t[np.minimum(idx, len(table) - 1)] != key_r):
        raise MeshError("closure violation: sub-simplex not present in complex")
    return idx


# corners of the unit cube, indexed by (i, j, k) bits
_CUBE = np.array([(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)])


def _cube_split(parity):
    """Five tetrahedra of a cube; the central one uses corners of given parity."""
    par = _CUBE.sum(axis=1) % 2
    central = np.flatnonzero(par == parity)
    tets = [central]
    for c in np.flatnonzero(par != parity):
        nbrs = [j for j in central if np.abs(_CUBE[j] - _CUBE[c]).sum() == 1]
        tets.append(np.array([c] + nbrs))
    return np.array(tets)


def generate_slab_mesh(extent, block, parity=0, origin=(0.0, 0.0, 0.0)):
    """Box ``extent`` split into blocks of size ``block``, five tets per block.

    Adjacent blocks use mirrored splits (the central tetrahedron of each block
    is spanned by the grid vertices whose index sum has the given ``parity``),
    so face diagonals match across blocks.
    """
    extent = np.asarray(extent, dtype=np.float64)
    block = np.asarray(block, dtype=np.float64)
    if extent.shape != (3,) or block.shape != (3,):
        raise MeshError("extent and block must be 3-vectors")
    if np.any(block <= 0) or np.any(extent <= 0):
        raise MeshError("extent and block dimensions must be positive")
    ratio = extent / block
    n = np.rint(ratio).astype(np.int64)
    if np.any(np.abs(ratio - n) > 1e-9 * np.maximum(1.0, ratio)) or np.any(n < 1):
        raise MeshError(
            f"dimension mismatch: extent {tuple(extent)} is not an integer multiple "
            f"of block {tuple(block)}"
        )
    nx, ny, nz = n
    gi, gj, gk = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    grid = np.stack([gi.ravel(), gj.ravel(), gk.ravel()], axis=1)
    coords = np.asarray(origin, dtype=np.float64) + grid * block

    def vid(ijk):
        return (ijk[..., 0] * (ny + 1) + ijk[..., 1]) * (nz + 1) + ijk[..., 2]

    bi, bj, bk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    blocks = np.stack([bi.ravel(), bj.ravel(), bk.ravel()], axis=1)
    tets = []
    for local_parity in (0, 1):
        # global parity of corner c of block b is (sum(b) + sum(c)) % 2
        sel = blocks[(blocks.sum(axis=1) + local_parity) % 2 == parity]
        split = _cube_split(local_parity)
        corners = sel[:, None, None, :] + _CUBE[split][None, :, :, :]
        tets.append((sel, vid(corners)))
    # keep block-major ordering
    order_blocks = np.concatenate([t[0] for t in tets])
    all_tets = np.concatenate([t[1] for t in tets])
    key = vid(order_blocks)
    perm = np.argsort(key, kind="stable")
    all_tets = all_tets[perm].reshape(-1, 4)
    return from_tets(coords, all_tets)


def barycentric_subdivide(K: SimplicialComplex3) -> SimplicialComplex3:
    """First barycentric subdivision K' with the canonical vertex order.

    New vertices are numbered tets first, then faces, edges and vertices of K,
    each group in K's own index order, so every flag ``t > f > e > v`` is an
    ascending tuple.
    """
    T, F, E, V = K.n_tets, K.n_faces, K.n_edges, K.n_vertices
    off_t, off_f, off_e, off_v = 0, T, T + F, T + F + E
    coords = np.concatenate([
        K.barycenters(3), K.barycenters(2), K.barycenters(1), K.coords,
    ])
    parent_dim = np.concatenate([
        np.full(T, 3), np.full(F, 2), np.full(E, 1), np.full(V, 0),
    ]).astype(np.int8)
    parent_index = np.concatenate([np.arange(T), np.arange(F), np.arange(E), np.arange(V)])

    # one flag t > f > e > v per (local face, local edge, endpoint)
    t = np.repeat(np.arange(T), 24)
    f = np.repeat(K.tet_faces, 6, axis=1).reshape(-1)
    e = K.face_edges[f, np.tile([0, 0, 1, 1, 2, 2], T * 4)]
    v = K.edges[e, np.tile([0, 1], T * 12)]
    new_tets = np.stack([off_t + t, off_f + f, off_e + e, off_v + v], axis=1)

    Kp = from_tets(coords, new_tets)
    Kp.parent_dim = parent_dim
    Kp.parent_index = parent_index
    Kp.parent = K
    return Kp


def euler_characteristic(K):
    return K.n_vertices - K.n_edges + K.n_faces - K.n_tets


def boundary_euler(K):
    return int(K.boundary_vertices.sum() - K.boundary_edges.sum() + K.boundary_faces.sum())


# ---- file format ----------------------------------------------------------

def save_mesh(K, path):
    """Write vertices and tetrahedra in the ``plates-mesh v1`` text format."""
    lines = [MESH_HEADER, f"vertices {K.n_vertices}"]
    lines += [" ".join(f"{c:.17g}" for c in xyz) for xyz in K.coords]
    lines.append(f"tets {K.n_tets}")
    lines += [" ".join(str(int(i)) for i in t) for t in K.tets]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def load_mesh(path, check=True):
    """Read a ``plates-mesh v1`` file; edges and faces are derived."""
    text = Path(path).read_text()
    lines = text.split("\n")
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            s = lines[pos - 1].strip()
            if s and not s.startswith("#"):
                return s, pos
        raise MeshFormatError("unexpected end of file", pos)

    head, ln = next_line()
    if head != MESH_HEADER:
        raise MeshFormatError(f"expected header {MESH_HEADER!r}, got {head!r}", ln)

    def section(name, width, cast):
        s, ln = next_line()
        parts = s.split()
        if len(parts) != 2 or parts[0] != name or not parts[1].isdigit():
            raise MeshFormatError(f"expected '{name} <count>'", ln)
        n = int(parts[1])
        rows = []
        for _ in range(n):
            s, ln = next_line()
            parts = s.split()
            if len(parts) != width:
                raise MeshFormatError(f"expected {width} values in {name} section", ln)
            try:
                rows.append([cast(x) for x in parts])
            except ValueError:
                raise MeshFormatError(f"malformed number in {name} section", ln) from None
        return np.array(rows, dtype=np.float64 if cast is float else np.int64).reshape(n, width), ln

    coords, _ = section("vertices", 3, float)
    tets, ln = section("tets", 4, int)
    if len(tets) and (tets.min() < 0 or tets.max() >= len(coords)):
        raise MeshFormatError("closure violation: tetrahedron references a missing vertex", ln)
    return from_tets(coords, tets, check=check)
