"""Shift-invert Lanczos for ``K c = mu (rho I) c`` near a target frequency.

The shifted matrix ``K - sigma rho I`` is indefinite.  It is factored with
SuperLU (threshold partial pivoting, fill-reducing column ordering), and
every solve is checked by its normwise backward error and refined if needed.

Lanczos runs on ``OP = (K - sigma M)^-1 M`` in the M inner product, with
full re-orthogonalization against the current basis and against every
locked eigenvector.  Converged pairs are locked and the iteration restarts
from the best unconverged Ritz vector.  Once ``count`` pairs are locked, one
more run starts from a fresh vector orthogonal to them.  If that run turns
up nothing closer to the shift, the result is final.  This extra run catches
eigenvalues of high multiplicity, which a single Krylov sequence sees only
once.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "EigenError",
    "FactorizationError",
    "ConvergenceError",
    "ShiftedFactor",
    "ModeResult",
    "factorize_shifted",
    "solve",
    "modes_near",
    "shift_of",
    "RESIDUAL_TOL",
    "SOLVE_TOL",
]

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
SOLVE_TOL = 1e-12
SHIFT_PERTURBATION = 1e-8
TIE_TOL = 1e-6


class EigenError(RuntimeError):
    pass


class FactorizationError(EigenError):
    pass


class ConvergenceError(EigenError):
    def __init__(self, msg, best_residuals=()):
        super().__init__(msg)
        self.best_residuals = list(best_residuals)


def shift_of(f_target):
    return -(2.0 * math.pi * float(f_target)) ** 2


@dataclass
class ShiftedFactor:
    """LU factors of ``A = K - sigma M`` plus what is needed to check solves."""

    lu: object
    A: sp.csc_matrix
    sigma: float
    requested_sigma: float
    norm_A: float
    fill: int
    perturbed: bool = False
    max_backward_error: float = 0.0
    refinements: int = 0
    scale: np.ndarray | None = field(default=None, repr=False)
    _cond: float | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.A.shape[0]

    def condition(self):
        """1-norm condition estimate of ``D A D`` with ``D = diag(M)^-1/2``."""
        if self._cond is None:
            d = self.scale if self.scale is not None else np.ones(self.n)
            As = sp.diags(d) @ self.A @ sp.diags(d)
            inv = spla.LinearOperator(
                self.A.shape, dtype=np.float64,
                matvec=lambda x: d * self.lu.solve(d * np.ravel(x)),
                rmatvec=lambda x: d * self.lu.solve(d * np.ravel(x), trans="T"))
            self._cond = float(spla.onenormest(As) * spla.onenormest(inv))
        return self._cond

    def attainable(self):
        """Smallest shift-invert residual to expect in double precision."""
        return float(np.finfo(np.float64).eps * self.condition())


def _inf_norm(A):
    return float(abs(A).sum(axis=1).max()) if A.nnz else 0.0


def _factor(A, memory_budget):
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                       options=dict(SymmetricMode=True))
    except MemoryError:
        raise FactorizationError(
            "out of memory while factoring the shifted matrix; export the matrices "
            "('plates export') and use an out-of-core solver") from None
    fill = int(lu.L.nnz + lu.U.nnz)
    if memory_budget is not None and 12 * fill > memory_budget:
        raise FactorizationError(
            f"factor fill {fill} entries (~{12 * fill / 2**20:.0f} MiB) exceeds the memory "
            f"budget of {memory_budget / 2**20:.0f} MiB; export the matrices and use an "
            "out-of-core solver")
    return lu, fill


def backward_error(A, x, b, norm_A=None):
    """Normwise backward error ``|b - A x| / (|A| |x| + |b|)`` in the max norm."""
    r = b - A @ x
    nA = _inf_norm(A) if norm_A is None else norm_A
    den = nA * np.abs(x).max() + np.abs(b).max()
    return float(np.abs(r).max() / den) if den > 0 else 0.0


def factorize_shifted(K, M, sigma, memory_budget=None, retry=True):
    """Factor ``K - sigma M``; a singular shift is retried once at ``sigma (1 + 1e-8)``."""
    K = sp.csc_matrix(K)
    M = sp.csc_matrix(M)
    if K.shape != M.shape or K.shape[0] != K.shape[1]:
        raise ValueError("dimension mismatch between K and M")
    shifts = [sigma, sigma * (1.0 + SHIFT_PERTURBATION) if sigma != 0 else SHIFT_PERTURBATION]
    last = None
    for attempt, s in enumerate(shifts if retry else shifts[:1]):
        A = (K - s * M).tocsc()
        try:
            lu, fill = _factor(A, memory_budget)
        except RuntimeError as exc:  # SuperLU reports exact singularity this way
            if isinstance(exc, FactorizationError):
                raise
            last = exc
            continue
        md = np.abs(M.diagonal())
        scale = 1.0 / np.sqrt(np.where(md > 0, md, 1.0))
        h = ShiftedFactor(lu=lu, A=A, sigma=s, requested_sigma=sigma, norm_A=_inf_norm(A),
                          fill=fill, perturbed=attempt > 0, scale=scale)
        probe = A @ np.ones(A.shape[0])
        try:
            solve(h, probe)
        except FactorizationError as exc:
            last = exc
            continue
        if h.perturbed:
            log.warning("shift %.17g was singular, using %.17g", sigma, s)
        return h
    raise FactorizationError(f"shifted matrix is numerically singular at sigma={sigma:.17g}: {last}")


def solve(handle: ShiftedFactor, rhs, tol=SOLVE_TOL, max_refine=3):
    """Direct solve with iterative refinement, verified by the backward error."""
    b = np.asarray(rhs, dtype=np.float64)
    x = handle.lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise FactorizationError("non-finite solution (singular factor)")
    A = handle.A
    err = backward_error(A, x, b, handle.norm_A)
    k = 0
    while err > tol and k < max_refine:
        x = x + handle.lu.solve(b - A @ x)
        err = backward_error(A, x, b, handle.norm_A)
        k += 1
    handle.refinements += k
    handle.max_backward_error = max(handle.max_backward_error, err)
    if err > tol:
        raise FactorizationError(f"solve backward error {err:.3e} above {tol:.1e} after refinement")
    return x


@dataclass
class ModeResult:
    """One eigenpair ``K c = mu rho I c``, ``c^T rho I c = 1``.

    ``residual`` is ``|K c - mu rho I c| / |rho I c|`` (units of mu) and
    ``rel_residual`` is that divided by ``max(|mu|, |sigma|)``.  Convergence
    is judged on ``si_residual``, the residual of the shift-inverted problem
    ``|OP c - theta c|_M / |theta|``.  For eigenvalues far below the top of
    the spectrum the untransformed residual cannot drop under roughly
    ``eps |M^-1 K| / |sigma|``, whatever the solver.
    ``sign`` is 'negative' for oscillating modes and 'positive' or 'zero'
    otherwise; f_r is ``sqrt(|mu|) / 2 pi`` in every case.
    """

    f_r: float
    mu: float
    coeffs: np.ndarray = field(repr=False)
    residual: float
    rel_residual: float
    si_residual: float
    sigma: float
    norm_kind: str = "rhoI"
    sign: str = "negative"

    @property
    def omega_sq(self):
        """omega_r^2 = -mu (negative for mu > 0)."""
        return -self.mu


def _sign(mu):
    if mu < 0:
        return "negative"
    return "positive" if mu > 0 else "zero"


def _make_mode(K, M, c, sigma, si_residual=float("nan")):
    Mc = M @ c
    nrm = math.sqrt(float(c @ Mc))
    c = c / nrm
    Mc = Mc / nrm
    Kc = K @ c
    mu = float(c @ Kc)
    r = Kc - mu * Mc
    res = float(np.linalg.norm(r) / np.linalg.norm(Mc))
    rel = res / max(abs(mu), abs(sigma), np.finfo(float).tiny)
    f = math.sqrt(abs(mu)) / (2.0 * math.pi)
    return ModeResult(f_r=f, mu=mu, coeffs=c, residual=res, rel_residual=rel,
                      si_residual=si_residual, sigma=sigma, sign=_sign(mu))


class _Lanczos:
    def __init__(self, K, M, handle, sigma):
        self.K, self.M, self.h, self.sigma = K, M, handle, sigma
        self.n = K.shape[0]
        self.X = np.zeros((self.n, 0))  # locked, M-orthonormal
        self.MX = np.zeros((self.n, 0))

    def orth(self, w, Q=None, MQ=None):
        # two passes of classical Gram-Schmidt in the M inner product
        for _ in range(2):
            if self.X.shape[1]:
                w = w - self.X @ (self.MX.T @ w)
            if Q is not None and Q.shape[1]:
                w = w - Q @ (MQ.T @ w)
        return w

    def mnorm(self, w):
        return math.sqrt(max(float(w @ (self.M @ w)), 0.0))

    def run(self, v, steps):
        n = self.n
        Q = np.zeros((n, 0))
        MQ = np.zeros((n, 0))
        alpha, beta = [], []
        v = self.orth(v, Q, MQ)
        nv = self.mnorm(v)
        if nv == 0.0:
            return None
        v = v / nv
        for j in range(steps):
            Mv = self.M @ v
            Q = np.column_stack([Q, v])
            MQ = np.column_stack([MQ, Mv])
            w = solve(self.h, Mv)
            a = float(Mv @ w)
            alpha.append(a)
            w = self.orth(w, Q, MQ)
            b = self.mnorm(w)
            if j == steps - 1 or b <= 1e-14 * max(abs(a), 1e-300):
                break
            beta.append(b)
            v = w / b
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        theta, S = np.linalg.eigh(T)
        order = np.argsort(-np.abs(theta), kind="stable")
        return theta[order], Q @ S[:, order]

    def check(self, theta, y):
        """Shift-invert residual of a Ritz pair and the purified vector ``OP y``."""
        y = y / self.mnorm(y)
        z = solve(self.h, self.M @ y)
        return self.mnorm(z - theta * y) / abs(theta), z

    def lock(self, c):
        c = self.orth(c)
        c = c / self.mnorm(c)
        self.X = np.column_stack([self.X, c])
        self.MX = np.column_stack([self.MX, self.M @ c])
        return c


def modes_near(system, rho, f_target, count=6, tol=RESIDUAL_TOL, seed=0, max_restarts=None,
               steps=None, memory_budget=None, handle=None):
    """The ``count`` eigenpairs with mu closest to ``-(2 pi f_target)^2``.

    Returns ``(modes, info)`` with modes sorted by ``|mu - sigma|``; ``info``
    records the shift actually used, the number of Lanczos runs and solver
    statistics.
    """
    if f_target <= 0:
        raise ValueError("target frequency must be positive")
    K = sp.csr_matrix(system.K)
    M = (float(rho) * sp.csr_matrix(system.I)).tocsr()
    n = K.shape[0]
    count = int(min(count, n))
    sigma = shift_of(f_target)
    h = handle if handle is not None else factorize_shifted(K, M, sigma, memory_budget)
    lz = _Lanczos(K, M, h, h.sigma)
    rng = np.random.default_rng(seed)
    # a residual below eps * cond is out of reach; converge to whichever is larger
    tol_eff = max(tol, h.attainable())
    max_restarts = 10 * count if max_restarts is None else max_restarts
    steps = steps or max(40, 4 * count + 20)

    locked: list[ModeResult] = []
    start = np.ones(n)
    best: list[float] = []
    confirming = False
    runs = 0
    while True:
        if runs >= max_restarts:
            raise ConvergenceError(
                f"no convergence near {f_target} Hz after {runs} Lanczos runs", best)
        room = n - lz.X.shape[1]
        if room <= 0:
            break
        runs += 1
        out = lz.run(start, min(steps, room))
        if out is None:  # start vector inside the locked space
            start = rng.standard_normal(n)
            continue
        theta, Y = out
        found_closer = False
        best = []
        next_start = None
        for j in range(len(theta)):
            if theta[j] == 0.0:
                break
            si_res, z = lz.check(theta[j], Y[:, j])
            best.append(si_res)
            if si_res > tol_eff:
                next_start = Y[:, j]
                break
            mu_est = h.sigma + 1.0 / theta[j]
            if len(locked) >= count:
                worst = abs(locked[count - 1].mu - sigma)
                if abs(mu_est - sigma) >= worst * (1.0 - TIE_TOL):
                    break
                found_closer = True
            c = lz.lock(z)
            locked.append(_make_mode(K, M, c, sigma, si_res))
            locked.sort(key=lambda m: abs(m.mu - sigma))
            if len(locked) >= count and not confirming:
                break
        if len(locked) >= count:
            if confirming and not found_closer:
                break
            confirming = True
            next_start = None
        start = next_start if next_start is not None else rng.standard_normal(n)

    modes = locked[:count]
    info = dict(sigma=sigma, sigma_used=h.sigma, tol=tol, tol_effective=tol_eff, perturbed=h.perturbed, runs=runs,
                locked=len(locked), fill=h.fill, max_backward_error=h.max_backward_error,
                refinements=h.refinements)
    if h.perturbed:
        warnings.warn(f"shift perturbed to {h.sigma:.17g}", RuntimeWarning, stacklevel=2)
    return modes, info
