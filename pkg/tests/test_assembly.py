import numpy as np
import pytest

from _oracles import FieldOracle, quadratic_forms_oracle, sobol_simplex, tet_volume
from plates.assembly import (assemble_coarse, assemble_fine, boundary_condition_system, load_vector,
                             resolve_lambda, sparsity)


@pytest.fixture(scope="module")
def cube_full(cube_K, spruce):
    return assemble_coarse(cube_K, spruce, gauge=False)


@pytest.fixture(scope="module")
def cube_lam2(cube_K, spruce):
    return assemble_coarse(cube_K, spruce, lam=2.5, gauge=False)


def test_gram_spd_with_gauge(cube_K, spruce, reduced_coarse):
    sys_ = assemble_coarse(cube_K, spruce)
    # edge and face fields scale differently with h; compare after Jacobi scaling
    A = sys_.I.toarray()
    d = 1.0 / np.sqrt(np.diag(A))
    ev = np.linalg.eigvalsh(d[:, None] * A * d[None, :])
    assert ev[0] > 1e-4 * ev[-1]
    np.linalg.cholesky(reduced_coarse.I.toarray())


def test_gram_without_gauge_has_constant_null_space(cube_full):
    ev = np.linalg.eigvalsh(cube_full.I.toarray())
    assert np.sum(ev < 1e-10 * ev[-1]) == 3


def test_symmetry(cube_full, reduced_coarse, reduced_fine):
    for s in (cube_full, reduced_coarse, reduced_fine):
        for A in (s.I, s.K):
            assert abs(A - A.T).max() == 0.0


def test_stiffness_zero_blocks(cube_full):
    b = cube_full.basis
    K = cube_full.K.toarray()
    nE = b.n_edges
    assert np.all(K[:nE, :nE] == 0)
    inner = np.flatnonzero(~b.boundary_edges)
    assert np.all(K[inner] == 0)


@pytest.mark.parametrize("lam", [1.0, 2.5])
def test_quadratic_forms_monte_carlo(cube_K, spruce, cube_full, cube_lam2, lam):
    system = cube_full if lam == 1.0 else cube_lam2
    rng = np.random.default_rng(21)
    for _ in range(10):
        U = rng.standard_normal(system.n)
        g_ref, k_ref = quadratic_forms_oracle(cube_K, spruce, lam, U)
        g, k = U @ (system.I @ U), U @ (system.K @ U)
        assert abs(g - g_ref) <= 1e-4 * abs(g_ref)
        # the integrands mix terms of both signs; scale by the absolute stiffness
        scale = abs(U) @ (abs(system.K) @ abs(U))
        assert abs(k - k_ref) <= 1e-4 * scale


def test_lambda_presets(spruce):
    assert resolve_lambda(spruce, "one") == 1.0
    assert resolve_lambda(spruce, "mean-l") == pytest.approx(np.mean(spruce.l_constants()))
    with pytest.raises(ValueError):
        resolve_lambda(spruce, "two")


def block_residuals(bc, c_full):
    out = []
    for _, ecols, fcols, Se, Sf in bc.blocks:
        r = Se @ c_full[ecols] + Sf @ c_full[fcols]
        scale = np.abs(np.hstack([Se, Sf])).max() * np.abs(c_full).max()
        out.append(np.abs(r).max() / scale)
    return np.array(out)


def test_fine_fields_satisfy_conditions(reduced_fine):
    P = reduced_fine.basis.P
    rng = np.random.default_rng(3)
    for _ in range(5):
        c = P @ rng.standard_normal(reduced_fine.n)
        assert block_residuals(reduced_fine.bc, c).max() <= 1e-12


def test_fine_is_congruence_of_full_family(reduced_K, spruce, reduced_coarse, reduced_fine):
    full = assemble_coarse(reduced_K, spruce, whitney=reduced_coarse.whitney, gauge=False)
    P = reduced_fine.basis.P
    rng = np.random.default_rng(4)
    c = rng.standard_normal(reduced_fine.n)
    u = P @ c
    for A, B in ((reduced_fine.I, full.I), (reduced_fine.K, full.K)):
        assert abs(c @ (A @ c) - u @ (B @ u)) <= 1e-10 * (abs(u) @ (abs(B) @ abs(u)))


def test_fine_dimension_formula(reduced_Kc, reduced_K, reduced_coarse, reduced_fine):
    bc = reduced_fine.bc
    n_bd_K = int(reduced_Kc.boundary_faces.sum())
    n_int_faces = int((~reduced_K.boundary_faces).sum())
    expect = reduced_K.n_edges + n_int_faces + 4 * n_bd_K + bc.r_n
    assert reduced_fine.n + len(reduced_coarse.basis.gauge) == expect
    assert len(bc.rank) == n_bd_K


def test_boundary_system_without_subdivision(reduced_Kc, spruce):
    from plates.mesh import MeshError
    from plates.whitney import WhitneyBasis
    with pytest.raises(MeshError):
        boundary_condition_system(WhitneyBasis(reduced_Kc), spruce)


def test_load_vectors(cube_K, cube_full):
    W = cube_full.whitney
    assert np.all(load_vector(W, lambda x: np.zeros_like(x)) == 0)
    # a constant field is the edge combination of its line integrals
    F = np.array([0.3, -1.2, 2.0])
    cF = np.zeros(cube_full.n)
    e = cube_K.edges
    cF[: cube_K.n_edges] = (cube_K.coords[e[:, 1]] - cube_K.coords[e[:, 0]]) @ F
    got = load_vector(W, lambda x: np.broadcast_to(F, x.shape))
    assert np.allclose(got, cube_full.I @ cF, rtol=0, atol=1e-12 * np.abs(got).max())


def test_plane_wave_load_against_sampling(cube_K, cube_full):
    W = cube_full.whitney
    k = np.array([0.0, 2 * np.pi * 222.0 / 343.0, 0.0])

    def F(x):
        return np.outer(np.sin(x @ k), [1.0, 0.5, -0.25])

    got = load_vector(W, F)
    ora = FieldOracle(cube_K)
    lam = sobol_simplex(3, 14, 3)
    ref = np.zeros(W.n_fields)
    for t in range(cube_K.n_tets):
        pts = lam @ cube_K.coords[cube_K.tets[t]]
        vol = tet_volume(cube_K.coords[cube_K.tets[t]])
        for idx, _, f, _ in ora.tet_fields(t):
            ref[idx] += vol * np.mean(np.sum(F(pts) * f(lam), axis=1))
    assert np.allclose(got, ref, rtol=0, atol=1e-5 * np.abs(ref).max())


def test_threads_do_not_change_bits(reduced_K, spruce, reduced_coarse):
    a = assemble_coarse(reduced_K, spruce, threads=1, whitney=reduced_coarse.whitney)
    b = assemble_coarse(reduced_K, spruce, threads=4, whitney=reduced_coarse.whitney)
    assert a.digest() == b.digest() == reduced_coarse.digest()


def test_sparsity_and_fine_size(reduced_coarse, spruce):
    assert 0.99 < sparsity(reduced_coarse.I) < 1.0
    fine = assemble_fine(reduced_coarse, boundary_condition_system(reduced_coarse.whitney, spruce))
    assert fine.n < reduced_coarse.n
