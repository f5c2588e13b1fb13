"""First full Newton iterate (experimental).

Solves ``(g^2 rho I - A) d = <R(U(t), F(t)), W_s>`` on a time grid, with the
tangential conditions of the iterate enforced by the same local substitution
as the fine system (traction pairing without the stress term).

The iterate is written ``Z(t) = x + sum_s d_s(t) W_s``.  The frozen operator
annihilates the identity map (its second derivatives and the gradient of its
divergence vanish), so the ``g^2 rho x`` part of R is carried exactly by
``x`` and only the remainder is discretized:

    R - g^2 rho x = -grad q(u) - rho v + int_0^t F + g^2 rho int_0^t u

Then ``Z(0) = x`` whenever ``U(0) = V(0) = 0``.  ``q(u)`` solves
``Delta q = rho tr((grad u)^2)``, ``q = 0`` on the boundary, with P1
elements on K' (``q_model="poisson"``) or by the local surrogate below
(``q_model="surrogate"``, the default).

Surrogate: ``tr((grad u)^2) = div((grad u) u - u div u) + (div u)^2``.  In
the spirit of the weighted-divergence treatment of h, the inverse Laplacian
is cancelled against the divergence and the quadratic remainder in
``div u`` (small for nearly incompressible fields) is dropped:
``grad q ~ rho ((grad u) u - u div u)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (BasisIndex, _chunked, _scatter, _volume_face_local, assemble_gram,
                       boundary_condition_system)
from .material import ElasticTensor
from .mesh import TET_FACES
from .whitney import TET_MASS, TRI_MASS, WhitneyBasis

__all__ = [
    "IterateError",
    "IterateSolution",
    "assemble_iterate_operator",
    "poisson_q",
    "iterate_rhs",
    "lambda_max",
    "solve_iterate",
    "iterate_from_wave",
]


class IterateError(RuntimeError):
    pass


def _boundary_local(W: WhitneyBasis, material: ElasticTensor):
    """Per boundary triangle: D, S, P (10 x 10) over the local fields of its tet."""
    faces, tet, slot, N, area = W.boundary_data()
    verts = TET_FACES[slot]
    Vs = np.take_along_axis(W.V[tet], verts[:, None, :, None], axis=2)  # (n, 10, 3, 3)
    intW = (area / 3.0)[:, None, None] * Vs.sum(axis=2)  # (n, 10, 3)
    nW = np.einsum("nsi,ni->ns", intW, N)
    sigN = np.einsum("aibj,nsbj,ni->nsa", material.tensor, W.G[tet], N)
    WN = material.boundary_traction(N)
    D = W.div[tet][:, :, None] * nW[:, None, :]  # D[s, r] = <div W_s N, W_r>
    S = np.einsum("nsa,nra->nsr", sigN, intW)  # S[s, r] = <sigma(grad W_s) N, W_r>
    a = np.einsum("nsmi,ni->nsm", Vs, WN)  # W'N . W_s at the 3 vertices
    b = np.einsum("nsmi,ni->nsm", Vs, N)
    P = area[:, None, None] * np.einsum("nsm,mk,nrk->nsr", a, TRI_MASS, b)
    return tet, D, S, P


def assemble_iterate_operator(W: WhitneyBasis, material: ElasticTensor, threads=1):
    """The iterate matrix over the full edge+face family (lambda = 1).

    Volume part: the face-face stiffness of the coarse system.  Boundary
    part, per pair (row s, column r) by type (e/f, interior o / boundary b):
        e_o f_b : 1/2 (D[f,e] - P[e,f] - P[f,e])
        e_b e_b : -1/2 (P[e,e'] + P[e',e])
        e_b f   : 1/2 S[f,e] + 1/2 D[f,e] - 1/2 (P[e,f] + P[f,e])
        f_b f_b : S[f',f] + 1/2 (D[f',f] + D[f,f']) - 1/2 (P[f,f'] + P[f',f])
    with D, S, P the boundary pairings of ``_boundary_local``; products of
    boundary pairings are read as integrals of pointwise products.  All
    other edge blocks are zero.
    """
    l = material.l_constants()
    local = _chunked(lambda s: _volume_face_local(W, material, 1.0, l, s), W.K.n_tets, threads)
    A = _scatter(W.dofs[:, 6:], local, W.n_fields)

    tet, D, S, P = _boundary_local(W, material)
    dofs = W.dofs[tet]  # (n, 10)
    K = W.K
    bd = np.r_[K.boundary_edges, K.boundary_faces]
    isface = np.r_[np.zeros(K.n_edges, bool), np.ones(K.n_faces, bool)]
    f = isface[dofs]
    b = bd[dofs]
    Pt = np.swapaxes(P, 1, 2)
    Dt = np.swapaxes(D, 1, 2)
    St = np.swapaxes(S, 1, 2)
    Psym = P + Pt
    fs, fr = f[:, :, None], f[:, None, :]
    bs, br = b[:, :, None], b[:, None, :]
    L = np.zeros_like(P)
    # edge row, face column
    eo_fb = ~fs & ~bs & fr & br
    eb_f = ~fs & bs & fr
    L = np.where(eo_fb, 0.5 * (Dt - Psym), L)
    L = np.where(eb_f, 0.5 * St + 0.5 * Dt - 0.5 * Psym, L)
    # face row, edge column: transpose of the above
    fb_eo = fs & bs & ~fr & ~br
    f_eb = fs & ~fr & br
    L = np.where(fb_eo, 0.5 * (D - Psym), L)
    L = np.where(f_eb, 0.5 * S + 0.5 * D - 0.5 * Psym, L)
    L = np.where(~fs & bs & ~fr & br, -0.5 * Psym, L)
    L = np.where(fs & bs & fr & br, St + 0.5 * (Dt + D) - 0.5 * Psym, L)
    n = W.n_fields
    rows = np.repeat(dofs, 10, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 10)).reshape(-1)
    B = sp.coo_matrix((L.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    A = A + B
    A = (0.5 * (A + A.T)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def poisson_q(W: WhitneyBasis, source_per_tet, gram=None):
    """P1 solution of ``Delta q = s``, ``q = 0`` on the boundary; s constant per tet.

    The P1 stiffness is ``B I_ee B^T`` (gradients of hat functions are edge
    fields), so it reuses the edge-edge Gram block.
    """
    K = W.K
    I = assemble_gram(W) if gram is None else gram
    b_pe = K.incidence()[0].astype(np.float64)
    Iee = I[: K.n_edges, : K.n_edges]
    L = (b_pe @ Iee @ b_pe.T).tocsr()
    rhs = np.zeros(K.n_vertices)
    np.add.at(rhs, K.tets.reshape(-1), np.repeat(W.vol * np.asarray(source_per_tet) / 4.0, 4))
    free = np.flatnonzero(~K.boundary_vertices)
    q = np.zeros(K.n_vertices)
    if len(free):
        # weak form: -<grad q, grad phi> = <s, phi>
        q[free] = spla.spsolve(L[free][:, free].tocsc(), -rhs[free])
    return q


def _grad_q_pairing(W: WhitneyBasis, q):
    """``<-grad q, W_s>`` for P1 ``q`` (exact: grad q is constant per tet)."""
    gq = np.einsum("tmi,tm->ti", W.grads, q[W.K.tets])
    intW = W.vol[:, None, None] * W.V.mean(axis=2)  # (T, 10, 3)
    loc = -np.einsum("ti,tsi->ts", gq, intW)
    out = np.zeros(W.n_fields)
    np.add.at(out, W.dofs.reshape(-1), loc.reshape(-1))
    return out


def _surrogate_pairing(W: WhitneyBasis, rho, c_full):
    """``-rho <(grad U) U - U div U, W_s>``, exact (the integrand is quadratic)."""
    G = np.einsum("tsai,ts->tai", W.G, c_full[W.dofs])
    u = W.local(c_full)  # (T, 4, 3)
    div = np.einsum("taa->t", G)
    w = np.einsum("tai,tmi->tma", G, u) - div[:, None, None] * u
    loc = -rho * W.vol[:, None] * np.einsum("tma,mn,tsna->ts", w, TET_MASS, W.V, optimize=True)
    out = np.zeros(W.n_fields)
    np.add.at(out, W.dofs.reshape(-1), loc.reshape(-1))
    return out


def _trace_square(W: WhitneyBasis, c_full):
    """``tr((grad U)^2)`` per tet for full-family coefficients."""
    G = np.einsum("tsai,ts->tai", W.G, c_full[W.dofs])
    return np.einsum("tai,tia->t", G, G)


def _trapezoid_cumulative(times, values):
    out = np.zeros_like(values)
    if len(times) > 1:
        dt = np.diff(times)
        inc = 0.5 * dt[:, None] * (values[1:] + values[:-1])
        out[1:] = np.cumsum(inc, axis=0)
    return out


Q_MODELS = ("surrogate", "poisson", "none")


def iterate_rhs(W: WhitneyBasis, rho, gamma, times, U, V, F, gram=None, q_model="surrogate"):
    """Rows ``<R(t_i) - g^2 rho x, W_s>`` for full-family coefficient histories.

    ``U``, ``V``: (n_times, n_fields) coefficients of u and v; ``F``:
    (n_times, n_fields) load vectors ``<F(t_i), W_s>``.  Time integrals use
    the trapezoid rule on ``times`` (which should start at 0).
    """
    if q_model not in Q_MODELS:
        raise ValueError(f"unknown q model {q_model!r}")
    times = np.asarray(times, dtype=np.float64)
    U = np.atleast_2d(U)
    V = np.atleast_2d(V)
    F = np.atleast_2d(F)
    I = assemble_gram(W) if gram is None else gram
    intU = _trapezoid_cumulative(times, U)
    intF = _trapezoid_cumulative(times, F)
    out = np.empty_like(U)
    for i in range(len(times)):
        r = -rho * (I @ V[i]) + intF[i] + gamma ** 2 * rho * (I @ intU[i])
        if q_model == "surrogate":
            r = r + _surrogate_pairing(W, rho, U[i])
        elif q_model == "poisson":
            src = rho * _trace_square(W, U[i])
            if np.any(src):
                r = r + _grad_q_pairing(W, poisson_q(W, src, I))
        out[i] = r
    return out


def lambda_max(A, I, steps=40):
    """Largest eigenvalue of ``A x = l I x`` by Lanczos (deterministic start)."""
    n = A.shape[0]
    k = min(steps, n - 1)
    if n <= 50:
        import scipy.linalg as sl
        return float(sl.eigh(A.toarray(), I.toarray(), eigvals_only=True)[-1])
    Ilu = spla.splu(sp.csc_matrix(I))
    op = spla.LinearOperator((n, n), matvec=lambda x: Ilu.solve(A @ np.ravel(x)), dtype=np.float64)
    # I^-1 A is I-self-adjoint; Lanczos in the I inner product
    v = np.ones(n)
    v /= math.sqrt(v @ (I @ v))
    Q = []
    alpha, beta = [], []
    w_prev = np.zeros(n)
    b = 0.0
    for j in range(k):
        Q.append(v)
        w = op @ v - b * w_prev
        a = float(w @ (I @ v))
        w = w - a * v
        for qv in Q:  # full re-orthogonalization
            w = w - (w @ (I @ qv)) * qv
        alpha.append(a)
        b = math.sqrt(max(float(w @ (I @ w)), 0.0))
        if b == 0.0:
            break
        beta.append(b)
        w_prev, v = v, w / b
    m = len(alpha)
    T = np.diag(alpha) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
    return float(np.linalg.eigvalsh(T)[-1])


@dataclass
class IterateSolution:
    times: np.ndarray
    coeffs: np.ndarray = field(repr=False)  # (n_times, n_fields): Z(t) - x over the full family
    gamma: float
    lambda_max: float
    constraint_residual: float
    meta: dict = field(default_factory=dict)

    def displacement(self, i):
        return self.coeffs[i]


def solve_iterate(A, I, rho, rhs, bc, gauge=None, gamma=None, times=None, lam_max=None):
    """Solve ``(g^2 rho I - A) d = rhs_i`` on the constrained subspace for every row of rhs.

    ``bc`` is the row-reduced constraint system (from
    ``boundary_condition_system(..., include_stress=False)``).  ``gamma``
    defaults to ``g^2 rho = 10 lambda_max(A, I)``.
    """
    n = A.shape[0]
    rhs = np.atleast_2d(rhs)
    if rhs.shape[1] != n or I.shape != A.shape:
        raise ValueError("dimension mismatch")
    P = bc.projector(n, gauge)
    PT = P.T.tocsr()
    Ar = (PT @ A @ P).tocsr()
    Ir = (PT @ I @ P).tocsr()
    lm = lambda_max(Ar, Ir) if lam_max is None else lam_max
    if gamma is None:
        scale = 10.0 * lm if lm > 0 else 1.0
        gamma = math.sqrt(scale / rho)
    if gamma ** 2 * rho <= lm:
        raise IterateError(f"gamma too small: g^2 rho = {gamma ** 2 * rho:.6g} <= lambda_max = {lm:.6g}")
    S = (gamma ** 2 * rho * Ir - Ar).tocsc()
    lu = spla.splu(S)
    d = np.empty((rhs.shape[0], n))
    for i, r in enumerate(rhs):
        x = lu.solve(PT @ r)
        x = x + lu.solve(PT @ r - S @ x)
        d[i] = P @ x
    res = constraint_residual(bc, d)
    return IterateSolution(times=np.asarray(times if times is not None else np.arange(len(rhs))),
                           coeffs=d, gamma=float(gamma), lambda_max=float(lm),
                           constraint_residual=res)


def constraint_residual(bc, d):
    """Largest relative residual of the 2x18 constraint blocks over all solutions."""
    worst = 0.0
    d = np.atleast_2d(d)
    for _, ecols, fcols, Se, Sf in bc.blocks:
        S = np.hstack([Se, Sf])
        cols = np.concatenate([ecols, fcols])
        scale = np.abs(S).max()
        if scale == 0.0:
            continue
        for row in d:
            v = row[cols]
            den = scale * max(np.abs(v).max(), 1e-300)
            worst = max(worst, float(np.abs(S @ v).max() / den))
    return worst


def iterate_from_wave(system, wave, material, rho, times, C1=None, C2=None, q_model="surrogate", gamma=None):
    """Iterate driven by a resonance wave ``U(t)`` and its forcing loads.

    ``C1``, ``C2`` are the full-family sine and cosine load vectors of the
    forcing (``F(t) = C1 cos wt - s C2 sin wt``, s = +1 for the minus sign);
    omit them to drop the force term.
    """
    W = system.whitney
    basis: BasisIndex = system.basis
    times = np.asarray(times, dtype=np.float64)
    U = np.stack([basis.expand(wave.coefficients(t)) for t in times])
    V = np.stack([basis.expand(wave.velocity_coefficients(t)) for t in times])
    if C1 is None:
        F = np.zeros_like(U)
    else:
        s = 1.0 if wave.sign == "minus" else -1.0
        F = np.stack([np.cos(wave.omega * t) * C1 - s * np.sin(wave.omega * t) * C2 for t in times])
    gram = assemble_gram(W)
    A = assemble_iterate_operator(W, material)
    bc = boundary_condition_system(W, material, include_stress=False)
    probe = np.zeros((1, W.n_fields))
    pre = solve_iterate(A, gram, rho, probe, bc, basis.gauge, gamma=gamma)
    rhs = iterate_rhs(W, rho, pre.gamma, times, U, V, F, gram=gram, q_model=q_model)
    sol = solve_iterate(A, gram, rho, rhs, bc, basis.gauge, gamma=pre.gamma, times=times,
                        lam_max=pre.lambda_max)
    sol.meta = dict(q_model=q_model, q_approximate=q_model != "poisson",
                    identity="exact (Z = x + sum d_s W_s)", time_rule="trapezoid",
                    gamma_rule="g^2 rho = 10 lambda_max(A, I)")
    return sol
