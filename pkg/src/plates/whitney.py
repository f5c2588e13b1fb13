"""Whitney scalar and vector fields on a tetrahedral complex.

Every vector field of the edge/face families is affine on each tetrahedron and
is stored there as ``W = sum_m lambda_m V[m]`` with ``lambda_m`` the barycentric
coordinates of the tet and ``V`` a (4, 3) array.  Products of two such fields
are integrated exactly with

    int_t lambda_m lambda_n dV = vol (1 + delta_mn) / 20,
    int_tau lambda_m lambda_n dA = area (1 + delta_mn) / 12.

The global vector-field numbering puts the edges first and the faces after
them, so a coefficient vector has length ``E + F``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import TET_EDGES, TET_FACES, MeshError, SimplicialComplex3

__all__ = [
    "WhitneyField",
    "WhitneyBasis",
    "eval_field",
    "integrate_pairing",
    "boundary_pairing",
    "apply_chain",
    "TET_MASS",
    "TRI_MASS",
]

TET_MASS = (np.ones((4, 4)) + np.eye(4)) / 20.0
TRI_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0

# local index (0..3) of the vertex opposite each tet face
_OPPOSITE = np.array([3, 2, 1, 0])


@dataclass(frozen=True)
class WhitneyField:
    """A single basis field: ``kind`` in {'vertex', 'edge', 'face', 'tet'}."""

    kind: str
    index: int


class WhitneyBasis:
    """Per-tetrahedron affine data of all Whitney fields of a complex."""

    def __init__(self, K: SimplicialComplex3):
        self.K = K
        T = K.n_tets
        p = K.coords[K.tets]  # (T, 4, 3)
        J = p[:, 1:, :] - p[:, :1, :]  # rows are edge vectors from vertex 0
        Jinv = np.linalg.inv(J)  # columns are gradients of lambda_1..3
        g = np.empty((T, 4, 3))
        g[:, 1:, :] = np.transpose(Jinv, (0, 2, 1))
        g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
        self.grads = g
        self.vol = np.abs(np.linalg.det(J)) / 6.0
        self.sign = np.sign(np.linalg.det(J))

        V = np.zeros((T, 10, 4, 3))
        for k, (a, b) in enumerate(TET_EDGES):
            V[:, k, a] = g[:, b]
            V[:, k, b] = -g[:, a]
        for k, (a, b, c) in enumerate(TET_FACES):
            V[:, 6 + k, a] = 2.0 * np.cross(g[:, b], g[:, c])
            V[:, 6 + k, b] = 2.0 * np.cross(g[:, c], g[:, a])
            V[:, 6 + k, c] = 2.0 * np.cross(g[:, a], g[:, b])
        self.V = V
        # G[t, s, alpha, i] = d_i W_s^alpha, constant per tet
        self.G = np.einsum("tsma,tmi->tsai", V, g)
        self.div = np.einsum("tsaa->ts", self.G)
        self.dofs = np.hstack([K.tet_edges, K.n_edges + K.tet_faces])
        self._tree = None

    # ---- sizes ---------------------------------------------------------
    @property
    def n_edges(self):
        return self.K.n_edges

    @property
    def n_faces(self):
        return self.K.n_faces

    @property
    def n_fields(self):
        return self.K.n_edges + self.K.n_faces

    def field_index(self, field: WhitneyField):
        if field.kind == "edge":
            return field.index
        if field.kind == "face":
            return self.n_edges + field.index
        raise ValueError(f"{field.kind} fields are not part of the vector basis")

    def as_coefficients(self, a):
        """Coefficient vector over edges+faces for a field or a vector."""
        if isinstance(a, WhitneyField):
            c = np.zeros(self.n_fields)
            c[self.field_index(a)] = 1.0
            return c
        c = np.asarray(a, dtype=np.float64)
        if c.shape != (self.n_fields,):
            raise ValueError(f"dimension mismatch: expected {self.n_fields} coefficients, got {c.shape}")
        return c

    def local(self, coeffs):
        """Per-tet affine data ``(T, 4, 3)`` of a coefficient vector."""
        c = self.as_coefficients(coeffs)
        return np.einsum("ts,tsmi->tmi", c[self.dofs], self.V)

    # ---- local matrices ------------------------------------------------
    def mass_local(self):
        return self.vol[:, None, None] * np.einsum(
            "tsmx,mn,trnx->tsr", self.V, TET_MASS, self.V, optimize=True)

    def integral_local(self):
        """int_t W_s dV for every local field, shape (T, 10, 3)."""
        return 0.25 * self.vol[:, None, None] * self.V.sum(axis=2)

    # ---- point location ------------------------------------------------
    def barycentric(self, tets, points):
        p0 = self.K.coords[self.K.tets[tets, 0]]
        lam = np.empty((len(tets), 4))
        lam[:, 1:] = np.einsum("tmi,ti->tm", self.grads[tets, 1:], points - p0)
        lam[:, 0] = 1.0 - lam[:, 1:].sum(axis=1)
        return lam

    def locate(self, points, tol=1e-10):
        """Lowest-indexed tet containing each point; raises if outside."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self._tree is None:
            self._tree = cKDTree(self.K.coords[self.K.tets].mean(axis=1))
        k = min(48, self.K.n_tets)
        _, cand = self._tree.query(points, k=k)
        cand = np.asarray(cand).reshape(len(points), k)
        cand = np.sort(cand, axis=1)
        out = np.full(len(points), -1, dtype=np.int64)
        for j in range(k):
            todo = out < 0
            if not todo.any():
                break
            t = cand[todo, j]
            lam = self.barycentric(t, points[todo])
            ok = lam.min(axis=1) >= -tol
            idx = np.flatnonzero(todo)[ok]
            out[idx] = t[ok]
        for i in np.flatnonzero(out < 0):
            lam = self.barycentric(np.arange(self.K.n_tets), np.repeat(points[i:i + 1], self.K.n_tets, 0))
            hit = np.flatnonzero(lam.min(axis=1) >= -tol)
            if len(hit) == 0:
                raise MeshError(f"point {points[i]} lies outside the polytope")
            out[i] = hit[0]
        return out

    # ---- boundary triangles --------------------------------------------
    def boundary_data(self, faces=None):
        """For boundary faces: owning tet, local face slot, normals, areas."""
        K = self.K
        if faces is None:
            faces = np.flatnonzero(K.boundary_faces)
        faces = np.asarray(faces)
        N, area = K.exterior_normals(faces)
        tet = K.face_tets[faces, 0]
        slot = np.argmax(K.tet_faces[tet] == faces[:, None], axis=1)
        return faces, tet, slot, N, area

    def trace_local(self, tet, slot):
        """Affine data of the 10 local fields restricted to the face ``slot``:
        shape (n, 10, 3, 3), indexed by the 3 face vertices."""
        verts = TET_FACES[slot]  # (n, 3) local vertex ids
        return np.take_along_axis(self.V[tet], verts[:, None, :, None], axis=2)


# ---- whole-field operations -------------------------------------------------

def eval_field(basis: WhitneyBasis, field, points):
    """Evaluate a basis field or coefficient vector at points.

    ``vertex`` fields return scalars, ``tet`` fields return ``6 chi_t``,
    vector fields return 3-vectors.  Points on shared simplex boundaries use
    the lowest-indexed incident tetrahedron.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tets = basis.locate(points)
    lam = basis.barycentric(tets, points)
    K = basis.K
    if isinstance(field, WhitneyField) and field.kind == "vertex":
        hit = K.tets[tets] == field.index
        return np.where(hit, lam, 0.0).sum(axis=1)
    if isinstance(field, WhitneyField) and field.kind == "tet":
        return np.where(tets == field.index, 6.0, 0.0)
    c = basis.as_coefficients(field)
    loc = np.einsum("ps,psmi->pmi", c[basis.dofs[tets]], basis.V[tets])
    return np.einsum("pm,pmi->pi", lam, loc)


def _tet_bilinear(basis, kind, material=None, lam_l=1.0, l_constants=None):
    """Local (T, 10, 10) matrices of a volume bilinear form."""
    vol = basis.vol[:, None, None]
    if kind == "dot":
        return basis.mass_local()
    if kind == "grad-grad":
        C = material.tensor
        return vol * np.einsum("tsai,aibj,trbj->tsr", basis.G, C, basis.G, optimize=True)
    if kind == "div-div":
        return vol * basis.div[:, :, None] * basis.div[:, None, :]
    if kind == "weighted-div":
        l = np.asarray(l_constants if l_constants is not None else material.l_constants())
        w = np.einsum("tsii,i->ts", basis.G, l)
        return vol * 0.5 * (w[:, :, None] * basis.div[:, None, :] + basis.div[:, :, None] * w[:, None, :])
    raise ValueError(f"unknown bilinear form {kind!r}")


def integrate_pairing(basis: WhitneyBasis, a, b, bilinear="dot", material=None, l_constants=None):
    """Exact integral over the polytope of a bilinear pairing of two fields.

    ``bilinear`` is one of ``dot``, ``grad-grad`` (contracted with the moduli
    tensor), ``div-div`` or ``weighted-div`` (symmetrized l-weighted form).
    """
    ca, cb = basis.as_coefficients(a), basis.as_coefficients(b)
    loc = _tet_bilinear(basis, bilinear, material, l_constants=l_constants)
    return float(np.einsum("ts,tsr,tr->", ca[basis.dofs], loc, cb[basis.dofs]))


def boundary_pairing(basis: WhitneyBasis, a, b=None, kind="dot", material=None, faces=None):
    """Exact integral over boundary faces of a pairing of two fields.

    kinds:
      ``dot``        int W_a . W_b
      ``normal``     int (W_a . N)(W_b . N)
      ``flux``       int W_a . N               (``b`` ignored)
      ``stress``     int sigma(grad W_a) N . W_b
    Requesting an interior face raises :class:`MeshError`.
    """
    K = basis.K
    faces, tet, slot, N, area = basis.boundary_data(faces)
    La = np.einsum("ts,tsmi->tmi", basis.as_coefficients(a)[basis.dofs[tet]], basis.V[tet])
    verts = TET_FACES[slot]
    La = np.take_along_axis(La, verts[:, :, None], axis=1)  # (n, 3, 3)
    if kind == "flux":
        return float(np.einsum("n,nmi,ni->", area / 3.0, La, N))
    Lb = np.einsum("ts,tsmi->tmi", basis.as_coefficients(b)[basis.dofs[tet]], basis.V[tet])
    Lb = np.take_along_axis(Lb, verts[:, :, None], axis=1)
    if kind == "dot":
        return float(np.einsum("n,mk,nmi,nki->", area, TRI_MASS, La, Lb))
    if kind == "normal":
        return float(np.einsum("n,mk,nmi,ni,nkj,nj->", area, TRI_MASS, La, N, Lb, N))
    if kind == "stress":
        Ga = np.einsum("tmi,tmj->tij", basis.local(a)[tet], basis.grads[tet])
        sN = np.einsum("aibj,nbj,ni->na", material.tensor, Ga, N)
        return float(np.einsum("n,na,nka->", area / 3.0, sN, Lb))
    raise ValueError(f"unknown boundary pairing {kind!r}")


def apply_chain(K: SimplicialComplex3, op, coeffs, incidence=None):
    """Discrete grad (Fun->Grad), curl (Grad->Div) or div (Div->Char).

    ``div`` returns the 3-cochain ``sum_f c_f b_ft``; the pointwise divergence
    on tet ``t`` is that value times ``sign_t / vol_t``.
    """
    b_pe, b_ef, b_ft = incidence if incidence is not None else K.incidence()
    mats = {"grad": b_pe, "curl": b_ef, "div": b_ft}
    if op not in mats:
        raise ValueError(f"unknown chain operator {op!r}")
    B = mats[op]
    c = np.asarray(coeffs)
    if c.shape != (B.shape[0],):
        raise ValueError(f"dimension mismatch: {op} expects {B.shape[0]} coefficients, got {c.shape}")
    return B.T @ c


def chain_matrix(K: SimplicialComplex3, op):
    b_pe, b_ef, b_ft = K.incidence()
    return sp.csr_matrix({"grad": b_pe, "curl": b_ef, "div": b_ft}[op].T)
