import numpy as np
import pytest

from _oracles import FieldOracle, bary_frame, sobol_simplex
from plates.assembly import tet_quadrature
from plates.mesh import MeshError, from_tets
from plates.whitney import (TET_MASS, TRI_MASS, WhitneyBasis, WhitneyField, apply_chain,
                            boundary_pairing, chain_matrix, eval_field, integrate_pairing)

REF = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def random_interior_points(K, n, seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, K.n_tets, n)
    lam = rng.dirichlet(np.ones(4), n)
    return np.einsum("pm,pmi->pi", lam, K.coords[K.tets[t]])


def test_vertex_field_is_kronecker(cube_K, cube_W):
    for p in (0, 5, cube_K.n_vertices - 1):
        vals = eval_field(cube_W, WhitneyField("vertex", p), cube_K.coords)
        expect = np.zeros(cube_K.n_vertices)
        expect[p] = 1.0
        assert np.allclose(vals, expect, atol=1e-12)


def test_partitions_of_unity(cube_K, cube_W):
    pts = random_interior_points(cube_K, 100, 1)
    total = sum(eval_field(cube_W, WhitneyField("vertex", p), pts) for p in range(cube_K.n_vertices))
    assert np.max(np.abs(total - 1.0)) <= 1e-12
    tets = sum(eval_field(cube_W, WhitneyField("tet", t), pts) / 6.0 for t in range(cube_K.n_tets))
    assert np.max(np.abs(tets - 1.0)) <= 1e-12


def test_edge_duality(cube_K, cube_W):
    K, W = cube_K, cube_W
    g, w = np.polynomial.legendre.leggauss(3)
    s, w = 0.5 * (g + 1), 0.5 * w
    rng = np.random.default_rng(0)
    for e in rng.choice(K.n_edges, 12, replace=False):
        a, b = K.coords[K.edges[e]]
        # the tangential trace is continuous along the edge
        pts = a + s[:, None] * (b - a)
        c = np.zeros(W.n_fields)
        c[e] = 1.0
        vals = eval_field(W, c, pts)
        assert abs(w @ (vals @ (b - a)) - 1.0) <= 1e-12
        for e2 in rng.choice(K.n_edges, 5, replace=False):
            if e2 == e:
                continue
            a2, b2 = K.coords[K.edges[e2]]
            pts2 = a2 + s[:, None] * (b2 - a2)
            c = np.zeros(W.n_fields)
            c[e] = 1.0
            v2 = eval_field(W, c, pts2)
            assert abs(w @ (v2 @ (b2 - a2))) <= 1e-12


def test_face_duality(cube_K, cube_W):
    K, W = cube_K, cube_W
    rng = np.random.default_rng(1)
    for f in rng.choice(K.n_faces, 12, replace=False):
        tri = K.coords[K.faces[f]]
        n = 0.5 * np.cross(tri[1] - tri[0], tri[2] - tri[0])
        for f2 in [f] + list(rng.choice(K.n_faces, 4, replace=False)):
            c = np.zeros(W.n_fields)
            c[K.n_edges + f2] = 1.0
            # the normal trace is linear and continuous inside the face: centroid rule is exact
            flux = eval_field(W, c, tri.mean(axis=0))[0] @ n
            assert abs(flux - (1.0 if f2 == f else 0.0)) <= 1e-12


def test_gradient_and_curl_identities(cube_K, cube_W):
    """sum_e b_pe W_e = grad x_p and curl W_e = sum_f b_ef W_f, pointwise."""
    K, W = cube_K, cube_W
    b_pe, b_ef, _ = K.incidence()
    pts = random_interior_points(K, 50, 2)
    tets = W.locate(pts)
    for p in range(0, K.n_vertices, 7):
        c = np.zeros(W.n_fields)
        c[: K.n_edges] = b_pe[p].toarray().ravel()
        got = eval_field(W, c, pts)
        m = K.tets[tets] == p
        expect = np.einsum("pm,pmi->pi", m, W.grads[tets])
        assert np.allclose(got, expect, atol=1e-9 * np.abs(W.grads).max())
    ora = FieldOracle(K)
    for t in range(0, K.n_tets, 13):
        for idx, kind, _, G in ora.tet_fields(t):
            if kind != "edge":
                continue
            curl = np.array([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])
            c = np.zeros(W.n_fields)
            c[K.n_edges:] = b_ef[idx].toarray().ravel()
            loc = W.local(c)[t]
            assert np.allclose(loc, curl[None], atol=1e-9 * np.abs(curl).max())


def test_chain_complex_exact(cube_K):
    K = cube_K
    ones = np.ones(K.n_vertices)
    assert np.all(apply_chain(K, "grad", ones) == 0)
    rng = np.random.default_rng(3)
    u = rng.integers(-5, 6, K.n_vertices).astype(float)
    assert np.all(apply_chain(K, "curl", apply_chain(K, "grad", u)) == 0)
    e = rng.integers(-5, 6, K.n_edges).astype(float)
    assert np.all(apply_chain(K, "div", apply_chain(K, "curl", e)) == 0)
    with pytest.raises(ValueError):
        apply_chain(K, "grad", np.ones(3))


def test_homology_dimensions_single_cube(cube_K):
    K = cube_K
    r_grad = np.linalg.matrix_rank(chain_matrix(K, "grad").toarray())
    r_curl = np.linalg.matrix_rank(chain_matrix(K, "curl").toarray())
    r_div = np.linalg.matrix_rank(chain_matrix(K, "div").toarray())
    assert r_grad == K.n_vertices - 1  # dim Grad0 = V - 1
    assert K.n_edges - r_curl == r_grad  # H^1 = 0
    assert K.n_faces - r_div == r_curl  # H^2 = 0
    assert r_div == K.n_tets  # H^3 = 0


def test_exact_quadrature_formulas():
    bary, w = tet_quadrature(4)
    assert abs(np.sum(w * bary[:, 0] ** 2) - 1 / 10) <= 1e-15
    assert np.allclose(TET_MASS.sum(), 1.0) and np.allclose(np.diag(TET_MASS), 0.1)
    assert np.allclose(TRI_MASS[0, 1], 1 / 12) and np.allclose(TRI_MASS.sum(), 1.0)


def test_edge_gram_reference_tet_monte_carlo():
    K = from_tets(REF, np.array([[0, 1, 2, 3]]))
    W = WhitneyBasis(K)
    ora = FieldOracle(K)
    lam = sobol_simplex(3, 20, 7)
    vol = 1 / 6
    for idx, kind, f, _ in ora.tet_fields(0):
        c = np.zeros(W.n_fields)
        c[idx] = 1.0
        exact = integrate_pairing(W, c, c)
        mc = vol * np.mean(np.sum(f(lam) ** 2, axis=1))
        assert abs(mc - exact) <= 1e-3 * exact


def test_disjoint_stars_give_zero(reduced_K):
    K = reduced_K
    W = WhitneyBasis(K)
    # two edges whose vertices share no tet
    vt = K.vertex_tets()
    e1 = 0
    star = set(np.concatenate([vt[v].indices for v in K.edges[e1]]))
    for e2 in range(K.n_edges):
        if not star & set(np.concatenate([vt[v].indices for v in K.edges[e2]])):
            break
    c1, c2 = np.zeros(W.n_fields), np.zeros(W.n_fields)
    c1[e1], c2[e2] = 1.0, 1.0
    assert integrate_pairing(W, c1, c2) == 0.0


def test_random_pairings_within_four_sigma(cube_K, cube_W, spruce):
    """Plain Monte Carlo with a standard error against the exact pairings."""
    K, W = cube_K, cube_W
    ora = FieldOracle(K)
    rng = np.random.default_rng(11)
    n = 4000
    for _ in range(20):
        t = rng.integers(K.n_tets)
        fields = ora.tet_fields(t)
        i, j = rng.choice(10, 2, replace=False)
        (ia, _, fa, _), (ib, _, fb, _) = fields[i], fields[j]
        lam = rng.dirichlet(np.ones(4), n)
        vol = abs(np.linalg.det(K.coords[K.tets[t]][1:] - K.coords[K.tets[t]][0])) / 6
        samples = vol * np.sum(fa(lam) * fb(lam), axis=1)
        ca, cb = np.zeros(W.n_fields), np.zeros(W.n_fields)
        ca[ia], cb[ib] = 1.0, 1.0
        loc = W.mass_local()[t]
        exact = loc[list(W.dofs[t]).index(ia), list(W.dofs[t]).index(ib)]
        se = samples.std() / np.sqrt(n)
        assert abs(samples.mean() - exact) <= 4 * se + 1e-15


def test_boundary_pairings(cube_K, cube_W, spruce):
    K, W = cube_K, cube_W
    bfaces = np.flatnonzero(K.boundary_faces)
    f0 = bfaces[0]
    # a face field whose support misses f0 has zero flux through it
    t0 = K.face_tets[f0, 0]
    far = next(f for f in range(K.n_faces) if not np.isin(K.face_tets[f], [t0]).any())
    c = np.zeros(W.n_fields)
    c[K.n_edges + far] = 1.0
    assert boundary_pairing(W, c, kind="flux", faces=[f0]) == 0.0
    # interior face requested
    inner = np.flatnonzero(~K.boundary_faces)[0]
    with pytest.raises(MeshError):
        boundary_pairing(W, c, kind="flux", faces=[inner])


def test_triangle_mass_formula():
    lam = sobol_simplex(2, 18, 5)
    # int_tau x_p x_q = A / 12 for p != q
    assert abs(np.mean(lam[:, 0] * lam[:, 1]) - TRI_MASS[0, 1]) <= 1e-6


def test_stress_pairing_monte_carlo(cube_K, cube_W, spruce):
    K, W = cube_K, cube_W
    ora = FieldOracle(K)
    f = np.flatnonzero(K.boundary_faces)[3]
    t = K.face_tets[f, 0]
    tri = K.coords[K.faces[f]]
    nrm = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    area = 0.5 * np.linalg.norm(nrm)
    nrm /= np.linalg.norm(nrm)
    if np.dot(nrm, tri[0] - K.coords[K.tets[t]].mean(axis=0)) < 0:
        nrm = -nrm
    fields = {idx: (kind, fn, G) for idx, kind, fn, G in ora.tet_fields(t)}
    face_idx = K.n_edges + f
    edge_idx = [i for i, (k, _, _) in fields.items() if k == "edge"]
    lam2 = sobol_simplex(2, 20, 9)
    xyz = lam2 @ tri
    A, _ = bary_frame(K.coords[K.tets[t]])
    lam = np.hstack([np.ones((len(xyz), 1)), xyz]) @ A.T
    sig = np.einsum("aibj,bj->ai", spruce.tensor, fields[face_idx][2])
    sN = sig @ nrm
    for e in edge_idx:
        mc = area * np.mean(fields[e][1](lam) @ sN)
        cf, ce = np.zeros(W.n_fields), np.zeros(W.n_fields)
        cf[face_idx], ce[e] = 1.0, 1.0
        exact = boundary_pairing(W, cf, ce, kind="stress", material=spruce, faces=[f])
        scale = area * np.abs(sN).max() * np.abs(fields[e][1](lam)).max()
        assert abs(mc - exact) <= 1e-6 * max(abs(exact), 1e-3 * scale)
