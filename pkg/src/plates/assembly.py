"""Gram and stiffness matrices over the edge+face Whitney basis of K'.

Coefficient vectors use the natural field order of :class:`WhitneyBasis`
(all edges by index, then all faces by index).  ``BasisIndex.block_order``
gives the permutation to the (interior edges, boundary edges, interior
faces, boundary faces) layout when a blocked view is wanted.

Sign convention: the equations of motion read ``rho I c'' = K c + load``,
so K is (mostly) negative and undamped modes have ``K c = mu rho I c`` with
``mu = -(2 pi f)^2``.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .material import ElasticTensor
from .mesh import TET_EDGES, TET_FACES, TRI_EDGES, MeshError, SimplicialComplex3
from .whitney import TET_MASS, WhitneyBasis

__all__ = [
    "BasisIndex",
    "gauge_edges",
    "SparseSymSystem",
    "BoundaryConditions",
    "assemble_gram",
    "assemble_stiffness",
    "assemble_coarse",
    "boundary_condition_system",
    "assemble_fine",
    "load_vector",
    "tet_quadrature",
    "sparsity",
    "resolve_lambda",
    "RANK_TOL",
]

RANK_TOL = 1e-10
CHUNK = 8192


def gauge_edges(K: SimplicialComplex3):
    """Three edge fields whose removal makes the edge+face family independent.

    Constant vector fields lie in both the edge span and the face span, so
    the full family has a three dimensional redundancy and a singular Gram
    matrix.  Dropping three edges with non-coplanar directions removes it
    without changing the spanned space.  The edges from the first vertex of
    tet 0 are used; in a barycentric subdivision that vertex is a tet
    barycenter, so the three edges are interior.
    """
    e = K.tet_edges[0, :3]
    d = K.coords[K.edges[e, 1]] - K.coords[K.edges[e, 0]]
    if abs(np.linalg.det(d)) <= 1e-12 * np.prod(np.linalg.norm(d, axis=1)):
        raise MeshError("degenerate first tetrahedron")
    return np.sort(e)


def _selection(n, drop):
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    kept = np.flatnonzero(keep)
    return sp.csr_matrix((np.ones(len(kept)), (kept, np.arange(len(kept)))), shape=(n, len(kept)))


@dataclass
class BasisIndex:
    """Global enumeration of the vector basis and its partitions.

    ``P`` maps coefficients of this basis to coefficients over the full
    edge+face family (``c_full = P c``).  ``gauge`` lists the dropped edge
    fields, ``dependent`` the fields eliminated by the boundary conditions
    (fine system only).
    """

    n_edges: int
    n_faces: int
    boundary_edges: np.ndarray
    boundary_faces: np.ndarray
    kind: str = "coarse"
    P: sp.csr_matrix | None = None
    dependent: np.ndarray | None = None
    gauge: np.ndarray | None = None

    @classmethod
    def coarse(cls, K: SimplicialComplex3, gauge=True):
        b = cls(K.n_edges, K.n_faces, K.boundary_edges.copy(), K.boundary_faces.copy())
        if gauge:
            b.gauge = gauge_edges(K)
            b.P = _selection(b.n_coarse, b.gauge)
        return b

    @property
    def n_coarse(self):
        """Size of the full edge+face family."""
        return self.n_edges + self.n_faces

    @property
    def size(self):
        return self.n_coarse if self.P is None else self.P.shape[1]

    def tags(self):
        """Per field of the full family: 'e_int', 'e_bd', 'f_int', 'f_bd'.

        The fine system splits boundary faces into 'f_bdI' (kept) and
        'f_bdB' (eliminated); eliminated sub-edges become 'e_bdB' and gauge
        edges 'gauge'.
        """
        t = np.empty(self.n_coarse, dtype=object)
        t[: self.n_edges] = np.where(self.boundary_edges, "e_bd", "e_int")
        t[self.n_edges:] = np.where(self.boundary_faces, "f_bd", "f_int")
        if self.dependent is not None:
            fb = np.flatnonzero(t == "f_bd")
            t[fb] = "f_bdI"
            dep = self.dependent
            t[dep] = np.where(dep >= self.n_edges, "f_bdB", "e_bdB")
        if self.gauge is not None:
            t[self.gauge] = "gauge"
        return t

    def block_order(self):
        t = self.tags()
        order = []
        for name in ("e_int", "e_bd", "f_int", "f_bd", "f_bdI"):
            order.append(np.flatnonzero(t == name))
        return np.concatenate(order)

    def kept(self):
        """Indices into the full family that are free coordinates of this basis."""
        mask = np.ones(self.n_coarse, dtype=bool)
        for drop in (self.dependent, self.gauge):
            if drop is not None:
                mask[drop] = False
        return np.flatnonzero(mask)

    def expand(self, c):
        """Full-family coefficients of a coefficient vector of this basis."""
        c = np.asarray(c)
        if c.shape[0] != self.size:
            raise ValueError(f"dimension mismatch: expected {self.size}, got {c.shape[0]}")
        return c if self.P is None else self.P @ c

    def restrict(self, v):
        """``P^T v`` for a vector (e.g. a load) over the full family."""
        v = np.asarray(v)
        if v.shape[0] != self.n_coarse:
            raise ValueError(f"dimension mismatch: expected {self.n_coarse}, got {v.shape[0]}")
        return v if self.P is None else self.P.T @ v


@dataclass
class SparseSymSystem:
    I: sp.csr_matrix
    K: sp.csr_matrix
    basis: BasisIndex
    meta: dict = field(default_factory=dict)
    whitney: WhitneyBasis | None = field(default=None, repr=False)
    bc: "BoundaryConditions | None" = field(default=None, repr=False)

    @property
    def n(self):
        return self.I.shape[0]

    def digest(self):
        h = hashlib.sha256()
        for A in (self.I, self.K):
            A = A.tocsr()
            A.sort_indices()
            for arr in (A.indptr, A.indices, A.data):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass
class BoundaryConditions:
    """Row-reduced boundary system ``c_dep = C c`` and its bookkeeping."""

    C: sp.csr_matrix  # rows: dependent faces, columns: all coarse fields
    dependent: np.ndarray  # coarse indices of eliminated faces (the dB set)
    rank: np.ndarray  # per boundary face of K: rank (2 or 1) of the 2x18 block
    face_rank: np.ndarray  # numerical rank of the 2x6 face subblock at the block's scale
    parent_faces: np.ndarray  # K face index per block
    singular_values: np.ndarray  # (n_blocks, 2) of the face subblocks
    blocks: list = field(default_factory=list, repr=False)

    @property
    def r_n(self):
        return int(np.sum(self.rank == 1))

    @property
    def rank_mismatch(self):
        """Blocks whose face subblock has lower rank than the whole block."""
        return int(np.sum(self.face_rank < self.rank))

    def counts(self):
        return dict(blocks=len(self.rank), rank_two=int(np.sum(self.rank == 2)),
                    rank_one=self.r_n, face_rank=np.bincount(self.face_rank, minlength=3).tolist())

    def projector(self, n_coarse, gauge=None):
        """Sparse ``P`` with ``c_full = P c_fine``; gauge fields are held at zero."""
        keep = np.ones(n_coarse, dtype=bool)
        keep[self.dependent] = False
        if gauge is not None:
            if np.any(~keep[gauge]):
                raise MeshError("gauge edge eliminated by the boundary system")
            keep[gauge] = False
        kept = np.flatnonzero(keep)
        col_of = -np.ones(n_coarse, dtype=np.int64)
        col_of[kept] = np.arange(len(kept))
        C = self.C.tocoo()
        if gauge is not None:
            g = np.isin(C.col, gauge)
            C = sp.coo_matrix((C.data[~g], (C.row[~g], C.col[~g])), shape=C.shape)
        if np.any(col_of[C.col] < 0):
            raise MeshError("boundary system couples two eliminated faces")
        rows = np.concatenate([kept, self.dependent[C.row]])
        cols = np.concatenate([np.arange(len(kept)), col_of[C.col]])
        vals = np.concatenate([np.ones(len(kept)), C.data])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n_coarse, len(kept)))


def resolve_lambda(material: ElasticTensor, lam):
    """``lam`` may be a number, 'one' or 'mean-l'."""
    if isinstance(lam, str):
        if lam == "one":
            return 1.0
        if lam == "mean-l":
            return float(np.mean(material.l_constants()))
        raise ValueError(f"unknown lambda preset {lam!r}")
    return float(lam)


def _scatter(dofs, local, n, threads=1):
    """Sum local (T, k, k) blocks into an n x n CSR matrix, fixed order."""
    T, k = dofs.shape
    rows = np.repeat(dofs, k, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, k)).reshape(-1)
    A = sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _chunked(fn, T, threads=1):
    """Evaluate ``fn(slice)`` over tet chunks and concatenate in order."""
    slices = [slice(i, min(i + CHUNK, T)) for i in range(0, T, CHUNK)]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, slices))
    else:
        parts = [fn(s) for s in slices]
    return np.concatenate(parts, axis=0)


def _sym(L):
    return 0.5 * (L + np.swapaxes(L, -1, -2))


def assemble_gram(W: WhitneyBasis, threads=1):
    """I_st = <W_s, W_t> over the whole coarse basis, exact quadrature."""
    def part(s):
        L = W.vol[s, None, None] * np.einsum(
            "tsmx,mn,trnx->tsr", W.V[s], TET_MASS, W.V[s], optimize=True)
        return _sym(L)
    local = _chunked(part, W.K.n_tets, threads)
    return _scatter(W.dofs, local, W.n_fields)


def _volume_face_local(W: WhitneyBasis, material, lam_l, l, s):
    G = W.G[s, 6:]
    div = W.div[s, 6:]
    wdiv = np.einsum("tsii,i->ts", G, np.asarray(l))
    el = np.einsum("tsai,aibj,trbj->tsr", G, material.tensor, G, optimize=True)
    L = (-el - lam_l * div[:, :, None] * div[:, None, :]
         + 0.5 * (wdiv[:, :, None] * div[:, None, :] + div[:, :, None] * wdiv[:, None, :]))
    return _sym(W.vol[s, None, None] * L)


def _boundary_stiffness(W: WhitneyBasis, material: ElasticTensor):
    """Boundary parts of K: (e_bd, tau) couplings and the diagonal B(tau, tau)."""
    faces, tet, slot, N, area = W.boundary_data()
    verts = TET_FACES[slot]  # local vertices of tau
    # the three local edges of tau
    edge_slots = np.array([[list(map(tuple, TET_EDGES)).index((f[a], f[b])) for a, b in TRI_EDGES]
                           for f in TET_FACES])[slot]
    Gf = W.G[tet, 6 + slot]  # (n, 3, 3)
    C = material.tensor
    sigN = np.einsum("aibj,nbj,ni->na", C, Gf, N)
    sNN = np.einsum("na,na->n", sigN, N)
    cN = np.einsum("ni,ni->n", material.boundary_traction(N), N)
    NGN = np.einsum("na,nai,ni->n", N, Gf, N)

    def tri_integral(loc_slot):
        Vs = W.V[tet, loc_slot]  # (n, 4, 3)
        Vs = np.take_along_axis(Vs, verts[:, :, None], axis=1)
        return (area / 3.0)[:, None] * Vs.sum(axis=1)

    int_f = tri_integral(6 + slot)
    rows, cols, vals = [], [], []
    for j in range(3):
        eslot = edge_slots[:, j]
        int_e = tri_integral(eslot)
        Ge = W.G[tet, eslot]
        NGeN = np.einsum("na,nai,ni->n", N, Ge, N)
        v = (0.5 * np.einsum("na,na->n", sigN, int_e)
             - 0.5 * sNN * np.einsum("na,na->n", int_e, N)
             - 0.5 * cN * (NGN * np.einsum("na,na->n", int_e, N) + NGeN * np.einsum("na,na->n", int_f, N)))
        e = W.K.tet_edges[tet, eslot]
        f = W.n_edges + faces
        rows += [e, f]
        cols += [f, e]
        vals += [v, v]
    bff = (np.einsum("na,na->n", sigN, int_f)
           - (sNN + cN * NGN) * np.einsum("na,na->n", int_f, N))
    rows.append(W.n_edges + faces)
    cols.append(W.n_edges + faces)
    vals.append(bff)
    n = W.n_fields
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def assemble_stiffness(W: WhitneyBasis, material: ElasticTensor, lam=1.0, threads=1):
    """Coarse stiffness K.

    Volume part (face pairs only; edge fields have antisymmetric gradients
    and no divergence, so every edge row of it vanishes):
        -<grad W_s : C : grad W_t> - lam <div, div> + 1/2(<wdiv_s, div_t> + swap)
    with ``wdiv = sum_i l_i d_i W^i``.  Boundary part on the boundary faces of K'.
    """
    lam_l = resolve_lambda(material, lam)
    l = material.l_constants()
    local = _chunked(lambda s: _volume_face_local(W, material, lam_l, l, s), W.K.n_tets, threads)
    Kvol = _scatter(W.dofs[:, 6:], local, W.n_fields)
    K = (Kvol + _boundary_stiffness(W, material)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def sparsity(A):
    """Fraction of structurally zero entries."""
    n, m = A.shape
    return 1.0 - A.nnz / float(n * m)


def _congruence(P, A):
    B = (P.T.tocsr() @ A @ P).tocsr()
    B = (0.5 * (B + B.T)).tocsr()
    B.sum_duplicates()
    B.sort_indices()
    return B


def assemble_coarse(K: SimplicialComplex3, material: ElasticTensor, lam=1.0, threads=1,
                    whitney: WhitneyBasis | None = None, gauge=True):
    """Coarse system.  ``gauge=False`` keeps all edge and face fields (singular I)."""
    W = whitney if whitney is not None else WhitneyBasis(K)
    I = assemble_gram(W, threads)
    Km = assemble_stiffness(W, material, lam, threads)
    basis = BasisIndex.coarse(K, gauge=gauge)
    if basis.P is not None:
        I, Km = _congruence(basis.P, I), _congruence(basis.P, Km)
    meta = dict(system="coarse", lambda_L=resolve_lambda(material, lam),
                l_constants=list(material.l_constants()), material=material.name,
                material_hash=material.digest(), mesh_hash=K.digest(), n=I.shape[0],
                gauge=basis.gauge is not None)
    return SparseSymSystem(I=I, K=Km, basis=basis, meta=meta, whitney=W)


# ---- boundary condition system ---------------------------------------------

def _frames(Kc: SimplicialComplex3, kfaces, N):
    """T1 along the longest edge of each K face, T2 = N x T1."""
    tri = Kc.coords[Kc.faces[kfaces]]
    ev = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0], tri[:, 2] - tri[:, 1]], axis=1)
    lengths = np.linalg.norm(ev, axis=2)
    # ties resolved by the first longest edge in TRI_EDGES order
    j = np.argmax(lengths >= lengths.max(axis=1, keepdims=True) * (1 - 1e-12), axis=1)
    T1 = ev[np.arange(len(kfaces)), j]
    T1 = T1 - np.einsum("ni,ni->n", T1, N)[:, None] * N
    T1 /= np.linalg.norm(T1, axis=1)[:, None]
    T2 = np.cross(N, T1)
    return T1, T2


def boundary_condition_system(W: WhitneyBasis, material: ElasticTensor, include_stress=True,
                              rank_tol=RANK_TOL):
    """Discrete tangential traction conditions, one 2x18 block per boundary face of K.

    Row ``a`` of the block of a K face, column ``s`` (12 sub-edges, 6 sub-faces):
        sum_tau area_tau T_a . (grad W_s^T W'(1)N + [s face] sigma(grad W_s) N)
    The rank of each block is decided on its singular values
    (``sigma_2 <= rank_tol sigma_1`` means rank one; the null row is dropped).
    Pivots are taken among the sub-faces whenever the face subblock is
    numerically nonzero at the scale of the block.  Where it is not (on a flat
    boundary face whose normal is a principal axis of the material, the face
    columns vanish identically), the pivots move to the six sub-edges that
    lie inside the K face.  Either way the elimination stays local to the block.
    """
    Kp = W.K
    Kc = Kp.parent
    if Kc is None or Kp.parent_dim is None:
        raise MeshError("boundary system needs a barycentric subdivision with parent links")
    faces, tet, slot, N, area = W.boundary_data()
    first = Kp.faces[faces, 0]
    if np.any(Kp.parent_dim[first] != 2):
        raise MeshError("unexpected vertex order on a boundary face of K'")
    kface = Kp.parent_index[first]
    order = np.lexsort((faces, kface))
    faces, tet, slot, N, area, kface = (a[order] for a in (faces, tet, slot, N, area, kface))
    kfaces = kface[::6]
    if not np.all(kface.reshape(-1, 6) == kfaces[:, None]):
        raise MeshError("each boundary face of K must carry six sub-faces")
    nb = len(kfaces)
    T1, T2 = _frames(Kc, kfaces, N[::6])
    Tm = np.stack([T1, T2], axis=1)  # (nb, 2, 3)
    Tm_tau = np.repeat(Tm, 6, axis=0)

    WN = material.boundary_traction(N)  # (n, 3)
    C = material.tensor
    edge_slots = np.array([[list(map(tuple, TET_EDGES)).index((f[a], f[b])) for a, b in TRI_EDGES]
                           for f in TET_FACES])[slot]
    # edge columns: 3 per tau
    e_ids = np.take_along_axis(Kp.tet_edges[tet], edge_slots, axis=1)  # (n, 3)
    Ge = np.take_along_axis(W.G[tet], edge_slots[:, :, None, None], axis=1)  # (n,3,3,3)
    # T_a . (G^T WN) = sum_{alpha,i} T_a^i G[alpha, i] WN^alpha
    e_val = area[:, None, None] * np.einsum("nkai,na,nji->nkj", Ge, WN, Tm_tau)  # (n, 3 edges, 2 rows)
    Gf = W.G[tet, 6 + slot]
    f_val = np.einsum("nai,na,nji->nj", Gf, WN, Tm_tau)
    if include_stress:
        sigN = np.einsum("aibj,nbj,ni->na", C, Gf, N)
        f_val = f_val + np.einsum("nja,na->nj", Tm_tau, sigN)
    f_val = area[:, None] * f_val  # (n, 2)

    private_edge = Kp.parent_dim[Kp.edges[:, 0]] == 2  # [f, e] and [f, v] sub-edges
    rank = np.empty(nb, dtype=np.int64)
    face_rank = np.empty(nb, dtype=np.int64)
    svals = np.empty((nb, 2))
    rows, cols, vals = [], [], []
    dependent = []
    blocks = []
    n_edges = W.n_edges
    for b in range(nb):
        sl = slice(6 * b, 6 * b + 6)
        fcols = n_edges + faces[sl]
        ecols, inv = np.unique(e_ids[sl].reshape(-1), return_inverse=True)
        Se = np.zeros((2, len(ecols)))
        np.add.at(Se.T, inv, e_val[sl].reshape(-1, 2))
        Sf = f_val[sl].T.copy()  # (2, 6)
        S = np.hstack([Se, Sf])
        U, full, _ = np.linalg.svd(S)
        if full[0] == 0.0:
            raise MeshError(f"boundary face {kfaces[b]} of K: zero condition block (coercivity violated)")
        scale = rank_tol * full[0]
        sf = np.linalg.svd(Sf, compute_uv=False)
        svals[b] = sf
        r = 2 if full[1] > scale else 1
        rank[b] = r
        face_rank[b] = int(np.sum(sf > scale))
        blocks.append((kfaces[b], ecols, fcols, Se, Sf))

        allcols = np.concatenate([ecols, fcols])
        is_face = np.r_[np.zeros(len(ecols), bool), np.ones(6, bool)]
        is_priv = np.r_[private_edge[ecols], np.ones(6, bool)]
        if r == 2:
            R = S
            faces_j = np.flatnonzero(is_face)
            priv_e = np.flatnonzero(is_priv & ~is_face)
            tiers = [list(combinations(faces_j, 2)),
                     [(j, k) for j in faces_j for k in priv_e],
                     list(combinations(priv_e, 2))]
            piv = None
            for tier in tiers:
                dets = np.array([abs(np.linalg.det(R[:, list(p)])) for p in tier])
                if len(dets) and dets.max() > scale * full[0]:
                    piv = list(tier[int(np.argmax(dets))])
                    break
            if piv is None:
                raise MeshError(f"boundary face {kfaces[b]} of K: no admissible pivots")
        else:
            R = U[:, :1].T @ S
            cand = np.abs(R[0]) * is_priv
            fc = np.where(is_face, cand, 0.0)
            j = int(np.argmax(fc)) if fc.max() > scale else int(np.argmax(cand))
            piv = [j]
        rest = [j for j in range(len(allcols)) if j not in piv]
        coef = -np.linalg.solve(R[:, piv], R[:, rest])
        other = allcols[rest]
        for i in range(len(piv)):
            dependent.append(allcols[piv[i]])
            rows.append(np.full(len(other), len(dependent) - 1))
            cols.append(other)
            vals.append(coef[i])
    dependent = np.asarray(dependent, dtype=np.int64)
    Cm = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(len(dependent), W.n_fields))
    return BoundaryConditions(C=Cm, dependent=dependent, rank=rank, face_rank=face_rank,
                              parent_faces=kfaces, singular_values=svals, blocks=blocks)


def assemble_fine(coarse: SparseSymSystem, bc: BoundaryConditions):
    """Congruence ``P^T I P``, ``P^T K P`` onto the constrained subspace."""
    b = coarse.basis
    n = b.n_coarse
    if coarse.I.shape != (b.size, b.size) or bc.C.shape[1] != n:
        raise ValueError("dimension mismatch between coarse system and boundary system")
    P = bc.projector(n, b.gauge)
    # coarse matrices live on the coarse basis; move P onto it
    Q = P if b.P is None else (b.P.T @ P).tocsr()
    I_f = _congruence(Q, coarse.I)
    K_f = _congruence(Q, coarse.K)
    basis = BasisIndex(b.n_edges, b.n_faces, b.boundary_edges, b.boundary_faces,
                       kind="fine", P=P, dependent=bc.dependent, gauge=b.gauge)
    meta = dict(coarse.meta, system="fine", n=P.shape[1], r_n=bc.r_n,
                bc_counts=bc.counts())
    return SparseSymSystem(I=I_f, K=K_f, basis=basis, meta=meta,
                           whitney=coarse.whitney, bc=bc)


# ---- load vectors ----------------------------------------------------------

def tet_quadrature(n=4):
    """Conical-product rule on a tetrahedron: barycentric points, weights summing to 1.

    Exact for polynomials of degree ``2n - 1``.
    """
    def rule(alpha):
        x, w = roots_jacobi(n, alpha, 0)
        return (x + 1.0) / 2.0, w / w.sum()

    u, wu = rule(2)
    v, wv = rule(1)
    s, ws = rule(0)
    U, V, S = np.meshgrid(u, v, s, indexing="ij")
    w = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).reshape(-1)
    # x = u, y = (1-u) v, z = (1-u)(1-v) s with Jacobian (1-u)^2 (1-v)
    x = U.reshape(-1)
    y = ((1.0 - U) * V).reshape(-1)
    z = ((1.0 - U) * (1.0 - V) * S).reshape(-1)
    bary = np.stack([1.0 - x - y - z, x, y, z], axis=1)
    return bary, w


def load_vector(W: WhitneyBasis, F, order=4, basis: BasisIndex | None = None):
    """<F, W_s> for a vector field ``F(points) -> (n, 3)``; fixed-order tet quadrature.

    Returns values over the full family, or ``P^T`` of them when a basis is given.
    """
    bary, wq = tet_quadrature(order)
    K = W.K
    out = np.zeros(W.n_fields)
    for i in range(0, K.n_tets, CHUNK):
        s = slice(i, min(i + CHUNK, K.n_tets))
        p = K.coords[K.tets[s]]  # (t, 4, 3)
        pts = np.einsum("qm,tmi->tqi", bary, p).reshape(-1, 3)
        Fv = np.asarray(F(pts), dtype=np.float64).reshape(p.shape[0], len(wq), 3)
        # int F . W_s = vol sum_q w_q sum_m lam_m(q) F(q) . V_s[m]
        FL = np.einsum("q,qm,tqi->tmi", wq, bary, Fv)
        loc = W.vol[s, None] * np.einsum("tmi,tsmi->ts", FL, W.V[s])
        np.add.at(out, W.dofs[s].reshape(-1), loc.reshape(-1))
    if basis is not None:
        return basis.restrict(out)
    return out
