"""Independent reference implementations used by the tests.

Fields are rebuilt here from their defining formulas in terms of global
vertex indices (not from the package's local tables), and integrals are
estimated with scrambled Sobol points mapped onto simplices.
"""
import numpy as np
from scipy.stats import qmc


def bary_frame(coords):
    """Barycentric coordinates of a tet: returns (A, grads) with lambda = A @ [1, x]."""
    M = np.hstack([np.ones((4, 1)), coords])
    A = np.linalg.inv(M).T  # rows: lambda_m = A[m] . [1, x]
    return A, A[:, 1:]


class FieldOracle:
    """Edge and face fields of a complex, evaluated tet by tet from scratch."""

    def __init__(self, K):
        self.K = K
        self.edge_id = {tuple(e): i for i, e in enumerate(K.edges.tolist())}
        self.face_id = {tuple(f): i for i, f in enumerate(K.faces.tolist())}
        self.nE = K.n_edges

    def tet_fields(self, t):
        """[(global index, kind, value(bary)->(n,3), grad (3,3) with G[a, i] = d_i W^a)]."""
        verts = self.K.tets[t]
        A, g = bary_frame(self.K.coords[verts])
        gv = {v: g[m] for m, v in enumerate(verts)}
        mloc = {v: m for m, v in enumerate(verts)}
        out = []
        for a in range(4):
            for b in range(a + 1, 4):
                p, q = sorted((verts[a], verts[b]))
                idx = self.edge_id[(p, q)]

                def val(lam, p=p, q=q):
                    return lam[:, [mloc[p]]] * gv[q] - lam[:, [mloc[q]]] * gv[p]
                G = np.outer(gv[q], gv[p]) - np.outer(gv[p], gv[q])
                out.append((idx, "edge", val, G))
        for skip in range(4):
            p, q, r = sorted(v for m, v in enumerate(verts) if m != skip)
            idx = self.nE + self.face_id[(p, q, r)]
            cqr, crp, cpq = np.cross(gv[q], gv[r]), np.cross(gv[r], gv[p]), np.cross(gv[p], gv[q])

            def val(lam, p=p, q=q, r=r, cqr=cqr, crp=crp, cpq=cpq):
                return 2.0 * (lam[:, [mloc[p]]] * cqr + lam[:, [mloc[q]]] * crp + lam[:, [mloc[r]]] * cpq)
            G = 2.0 * (np.outer(cqr, gv[p]) + np.outer(crp, gv[q]) + np.outer(cpq, gv[r]))
            out.append((idx, "face", val, G))
        return out

    def combo(self, t, c, lam, select=None):
        """Value (n, 3) and gradient (3, 3) of sum c_s W_s on tet t; ``select(idx, kind)`` filters."""
        val = np.zeros((len(lam), 3))
        G = np.zeros((3, 3))
        for idx, kind, f, g in self.tet_fields(t):
            if select is not None and not select(idx, kind):
                continue
            if c[idx] != 0.0:
                val += c[idx] * f(lam)
                G += c[idx] * g
        return val, G


def sobol_simplex(dim, m, seed):
    """2^m scrambled Sobol points in barycentric coordinates of a ``dim``-simplex."""
    u = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)
    u = np.sort(u, axis=1)
    lam = np.diff(np.hstack([np.zeros((len(u), 1)), u, np.ones((len(u), 1))]), axis=1)
    return lam


def tet_volume(coords):
    return abs(np.linalg.det(coords[1:] - coords[0])) / 6.0


def boundary_triangles(K):
    """(face index, owning tet, local barycentric map, outward normal, area) per boundary face."""
    out = []
    for f in np.flatnonzero(K.boundary_faces):
        t = K.face_tets[f, 0]
        tri = K.coords[K.faces[f]]
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        area = 0.5 * np.linalg.norm(n)
        n = n / np.linalg.norm(n)
        if np.dot(n, tri[0] - K.coords[K.tets[t]].mean(axis=0)) < 0:
            n = -n
        out.append((f, t, tri, n, area))
    return out


def tri_to_tet_bary(K, t, tri_pts_xyz):
    A, _ = bary_frame(K.coords[K.tets[t]])
    X = np.hstack([np.ones((len(tri_pts_xyz), 1)), tri_pts_xyz])
    return X @ A.T


def quadratic_forms_oracle(K, material, lam, U, m=14):
    """<I U, U> and <K U, U> from pointwise integrands."""
    ora = FieldOracle(K)
    C = material.tensor
    l = np.asarray(material.l_constants())
    lam_tet = sobol_simplex(3, m, 1)
    gram = stiff = 0.0
    for t in range(K.n_tets):
        vol = tet_volume(K.coords[K.tets[t]])
        val, G = ora.combo(t, U, lam_tet)
        gram += vol * np.mean(np.sum(val * val, axis=1))
        div = np.trace(G)
        wdiv = np.sum(l * np.diag(G))
        stiff += vol * (-np.einsum("ai,aibj,bj->", G, C, G) - lam * div ** 2 + wdiv * div)
    lam_tri = sobol_simplex(2, m, 2)
    nE = K.n_edges
    for f, t, tri, N, area in boundary_triangles(K):
        bary = tri_to_tet_bary(K, t, lam_tri @ tri)
        own = nE + f
        tau_edges = set(K.face_edges[f].tolist())
        Ue, Ge = ora.combo(t, U, bary, select=lambda i, k: k == "edge" and i in tau_edges)
        Uf, Gf = ora.combo(t, U, bary, select=lambda i, k: i == own)
        sigN = np.einsum("aibj,bj,i->a", C, Gf, N)
        sNN = sigN @ N
        cN = material.boundary_traction(N) @ N
        NGN, NGeN = N @ Gf @ N, N @ Ge @ N
        cross = (Ue @ sigN - sNN * (Ue @ N) - cN * (NGN * (Ue @ N) + NGeN * (Uf @ N)))
        diag = Uf @ sigN - (sNN + cN * NGN) * (Uf @ N)
        stiff += area * np.mean(cross + diag)
    return gram, stiff
