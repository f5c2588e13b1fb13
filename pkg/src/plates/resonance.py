"""External pressure-wave forcing, resonance waves, nodal maps and fluxes.

The forcing is ``F0 sin(k.(x - x_s) -+ w t)``, split as
``C1 cos(w t) -+ C2 sin(w t)`` on the basis.  With ``c_j`` solving
``-(w^2 rho I + K) c_j = C_j``, the resonance wave of a mode with
``w_r^2 = -mu`` is

    W(t) = 1/(w_r^2 - w^2) [c1 (cos w t - cos w_r t) +- c2 (w sin(w_r t)/w_r - sin w t)]

which vanishes with its time derivative at t = 0.  For mu >= 0 the
trigonometric functions of ``w_r t`` are continued analytically (cosh/sinh,
or their limits at mu = 0).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import load_vector
from .eigensolve import factorize_shifted, modes_near, shift_of, solve
from .mesh import SimplicialComplex3, TET_FACES
from .whitney import WhitneyBasis

__all__ = [
    "ForcingSpec",
    "forcing_load_vectors",
    "ResonanceWave",
    "resonance_wave",
    "SampleSet",
    "far_side_samples",
    "NodalMap",
    "classify_nodal",
    "flux_functional",
    "boundary_flux",
    "function_flux",
    "wave_flux",
    "sample_times",
    "NEAR_RESONANCE",
]

NEAR_RESONANCE = 1e-6


@dataclass(frozen=True)
class ForcingSpec:
    """Plane pressure wave; ``amplitude`` is F0 in N/m^3."""

    frequency: float
    amplitude: tuple = (0.0, 1.0, 0.0)
    direction: tuple = (0.0, 1.0, 0.0)
    source: tuple = (0.0, 0.0, 0.0)
    source_distance: float = 0.62
    wave_speed: float = 343.0
    sign: str = "minus"

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("propagation direction must be a unit 3-vector")
        if not self.frequency > 0 or not self.wave_speed > 0:
            raise ValueError("frequency and wave speed must be positive")
        if self.sign not in ("plus", "minus"):
            raise ValueError("sign must be 'plus' or 'minus'")

    @property
    def omega(self):
        return 2.0 * math.pi * self.frequency

    @property
    def k(self):
        return self.omega / self.wave_speed

    @property
    def wave_vector(self):
        return self.k * np.asarray(self.direction, dtype=np.float64)

    @classmethod
    def facing(cls, K: SimplicialComplex3, frequency, direction=(0.0, 1.0, 0.0),
               source_distance=0.62, wave_speed=343.0, amplitude=1.0, sign="minus"):
        """Source on the line through the middle of the body along ``direction``,
        ``source_distance`` before the face the wave hits first."""
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        lo, hi = K.coords.min(axis=0), K.coords.max(axis=0)
        center = 0.5 * (lo + hi)
        near = float(np.min((K.coords - center) @ d))
        src = center + (near - source_distance) * d
        return cls(frequency=float(frequency), amplitude=tuple(map(float, amplitude * d)),
                   direction=tuple(map(float, d)), source=tuple(map(float, src)),
                   source_distance=source_distance,
                   wave_speed=wave_speed, sign=sign)

    def phase(self, x):
        return (np.asarray(x) - np.asarray(self.source)) @ self.wave_vector

    def force(self, x, t):
        """The external force field at time ``t``."""
        s = -1.0 if self.sign == "minus" else 1.0
        return np.sin(self.phase(x) + s * self.omega * t)[:, None] * np.asarray(self.amplitude)


def forcing_load_vectors(spec: ForcingSpec, whitney: WhitneyBasis, basis=None, order=4):
    """``C1 = <F0 sin(k.x), W_s>`` and ``C2 = <F0 cos(k.x), W_s>``."""
    F0 = np.asarray(spec.amplitude, dtype=np.float64)
    C1 = load_vector(whitney, lambda x: np.sin(spec.phase(x))[:, None] * F0, order, basis)
    C2 = load_vector(whitney, lambda x: np.cos(spec.phase(x))[:, None] * F0, order, basis)
    return C1, C2


def _cs(w2, t):
    """cos(w t) and sin(w t)/w for w^2 = w2 of either sign."""
    t = np.asarray(t, dtype=np.float64)
    x = w2 * t * t
    if abs(w2) * max(float(np.max(t * t)), 1e-300) < 1e-6:
        # series; the truncation error is far below double precision here
        c = 1.0 - x / 2.0 + x * x / 24.0 - x ** 3 / 720.0
        s = t * (1.0 - x / 6.0 + x * x / 120.0 - x ** 3 / 5040.0)
        return c, s
    if w2 > 0:
        w = math.sqrt(w2)
        return np.cos(w * t), np.sin(w * t) / w
    w = math.sqrt(-w2)
    return np.cosh(w * t), np.sinh(w * t) / w


@dataclass
class ResonanceWave:
    """Sum over modes of the (resw) combination; coefficients over ``basis``."""

    omega: float
    omega_r_sq: list  # w_r^2 = -mu per mode
    c1: np.ndarray = field(repr=False)
    c2: np.ndarray = field(repr=False)
    sign: str = "minus"
    basis: object = field(default=None, repr=False)
    modes: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)

    @property
    def prefactors(self):
        return [1.0 / (w2 - self.omega ** 2) for w2 in self.omega_r_sq]

    def weights(self, t):
        """Scalars (a, b) with ``W(t) = a c1 + b c2`` (summed over the modes)."""
        w = self.omega
        s = 1.0 if self.sign == "minus" else -1.0
        t = np.asarray(t, dtype=np.float64)
        a = np.zeros_like(t)
        b = np.zeros_like(t)
        for w2, p in zip(self.omega_r_sq, self.prefactors):
            c, sr = _cs(w2, t)
            a = a + p * (np.cos(w * t) - c)
            b = b + p * s * (w * sr - np.sin(w * t))
        return a, b

    def weight_rates(self, t):
        """Time derivatives of ``weights``."""
        w = self.omega
        s = 1.0 if self.sign == "minus" else -1.0
        t = np.asarray(t, dtype=np.float64)
        a = np.zeros_like(t)
        b = np.zeros_like(t)
        for w2, p in zip(self.omega_r_sq, self.prefactors):
            c, sr = _cs(w2, t)
            a = a + p * (-w * np.sin(w * t) + w2 * sr)
            b = b + p * s * (w * c - w * np.cos(w * t))
        return a, b

    def coefficients(self, t):
        a, b = self.weights(t)
        return float(a) * self.c1 + float(b) * self.c2

    def velocity_coefficients(self, t):
        a, b = self.weight_rates(t)
        return float(a) * self.c1 + float(b) * self.c2

    def full_coefficients(self, t):
        c = self.coefficients(t)
        return c if self.basis is None else self.basis.expand(c)


def resonance_wave(system, rho, f, n_modes, C1, C2, sign="minus", modes=None, handle=None):
    """Resonance wave at ``f`` from the ``n_modes`` modes closest to it."""
    if n_modes not in (1, 6) and modes is None:
        warnings.warn("the construction is meant for 1 or 6 modes", stacklevel=2)
    M = (float(rho) * sp.csr_matrix(system.I)).tocsr()
    sigma = shift_of(f)
    h = handle if handle is not None else factorize_shifted(system.K, M, sigma)
    if modes is None:
        modes, _ = modes_near(system, rho, f, n_modes, handle=h)
    # -(w^2 rho I + K) c = C  and  K - sigma rho I = K + w^2 rho I
    c1 = -solve(h, np.asarray(C1, dtype=np.float64))
    c2 = -solve(h, np.asarray(C2, dtype=np.float64))
    omega = 2.0 * math.pi * f
    w2s = [-m.mu for m in modes]
    notes = []
    for w2 in w2s:
        if abs(w2 - omega ** 2) < NEAR_RESONANCE * omega ** 2:
            msg = (f"near resonance: w_r^2 = {w2:.9g}, w^2 = {omega ** 2:.9g}, "
                   f"prefactor {1.0 / (w2 - omega ** 2):.3e}")
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ResonanceWave(omega=omega, omega_r_sq=w2s, c1=c1, c2=c2, sign=sign,
                         basis=system.basis, modes=list(modes), warnings=notes)


# ---- sampling and nodal classification ------------------------------------

@dataclass
class SampleSet:
    """Points on the boundary with the tet used to evaluate fields there."""

    points: np.ndarray
    tets: np.ndarray
    bary: np.ndarray
    kind: np.ndarray  # 0 barycenter, 1 vertex

    def __len__(self):
        return len(self.points)

    def evaluation_matrix(self, whitney: WhitneyBasis):
        """Sparse E with ``E @ c_full`` = field values (n_points * 3) of the full family."""
        W = whitney
        V = W.V[self.tets]  # (p, 10, 4, 3)
        vals = np.einsum("pm,psmi->psi", self.bary, V)  # (p, 10, 3)
        p = len(self.points)
        rows = (3 * np.arange(p)[:, None, None] + np.arange(3)[None, None, :])
        rows = np.broadcast_to(rows, (p, 10, 3))
        cols = np.broadcast_to(W.dofs[self.tets][:, :, None], (p, 10, 3))
        E = sp.coo_matrix((vals.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
                          shape=(3 * p, W.n_fields)).tocsr()
        E.sum_duplicates()
        return E


def far_side_samples(whitney: WhitneyBasis, direction):
    """Barycenters and vertices of boundary faces whose exterior normal has a
    positive component along ``direction`` (deduplicated).

    A vertex shared by several such faces is evaluated in the lowest-index
    tet owning one of them.
    """
    d = np.asarray(direction, dtype=np.float64)
    faces, tet, slot, N, area = whitney.boundary_data()
    # side faces have N.d = 0 up to rounding
    far = N @ d > 1e-9
    faces, tet, slot = faces[far], tet[far], slot[far]
    K = whitney.K
    verts = K.tets[tet][np.arange(len(tet))[:, None], TET_FACES[slot]]  # (nf, 3) global ids
    # barycenters
    bpts = K.coords[verts].mean(axis=1)
    bb = np.zeros((len(tet), 4))
    local = TET_FACES[slot]
    np.put_along_axis(bb, local, 1.0 / 3.0, axis=1)
    # vertices: lowest owning tet
    flat_v = verts.reshape(-1)
    flat_t = np.repeat(tet, 3)
    flat_l = local.reshape(-1)
    order = np.lexsort((flat_t, flat_v))
    flat_v, flat_t, flat_l = flat_v[order], flat_t[order], flat_l[order]
    first = np.r_[True, flat_v[1:] != flat_v[:-1]]
    vv, vt, vl = flat_v[first], flat_t[first], flat_l[first]
    vb = np.zeros((len(vv), 4))
    vb[np.arange(len(vv)), vl] = 1.0
    # barycenters in face order of the sorted boundary face list
    border = np.argsort(faces, kind="stable")
    points = np.vstack([bpts[border], K.coords[vv]])
    tets = np.concatenate([tet[border], vt])
    bary = np.vstack([bb[border], vb])
    kind = np.r_[np.zeros(len(border), np.int8), np.ones(len(vv), np.int8)]
    return SampleSet(points=points, tets=tets, bary=bary, kind=kind)


def sample_times(omega, n=10):
    """``t_j = j 2 pi / (10 w)``, j = 1..n."""
    return np.arange(1, n + 1) * 2.0 * math.pi / (10.0 * omega)


@dataclass
class NodalMap:
    points: np.ndarray
    nodal: np.ndarray
    max_t: np.ndarray
    min_t: np.ndarray
    delta_t: np.ndarray
    c_omega: float
    times: np.ndarray
    min_norm: np.ndarray  # per point, over the sample times
    norms: np.ndarray = field(repr=False)  # (n_times, n_points)

    @property
    def count(self):
        return int(self.nodal.sum())

    def flux_time_index(self):
        """Index of the t_j maximizing max/min, or max alone when some min is 0."""
        if np.all(self.min_t > 0):
            return int(np.argmax(self.max_t / self.min_t)), False
        return int(np.argmax(self.max_t)), True


def _wave_norms(wave, samples, whitney, times):
    if hasattr(wave, "values"):
        return np.stack([np.linalg.norm(wave.values(samples.points, t), axis=1) for t in times])
    E = samples.evaluation_matrix(whitney)
    P = wave.basis.P if wave.basis is not None else None
    e1 = E @ (wave.c1 if P is None else P @ wave.c1)
    e2 = E @ (wave.c2 if P is None else P @ wave.c2)
    a, b = wave.weights(times)
    out = []
    for ai, bi in zip(a, b):
        v = (ai * e1 + bi * e2).reshape(-1, 3)
        out.append(np.linalg.norm(v, axis=1))
    return np.stack(out)


def classify_nodal(wave, samples: SampleSet, c_omega=0.05, whitney=None, times=None):
    """Nodal flags: ``|W(t_j, x)| <= min_j + c_omega delta_j`` at every t_j,
    with ``delta_j = (max_j - min_j) / 10``.

    ``wave`` is a :class:`ResonanceWave` (needs ``whitney``) or any object
    with ``omega`` and ``values(points, t) -> (n, 3)``.
    """
    times = sample_times(wave.omega) if times is None else np.asarray(times)
    norms = _wave_norms(wave, samples, whitney, times)
    mx = norms.max(axis=1)
    mn = norms.min(axis=1)
    delta = (mx - mn) / 10.0
    nodal = np.all(norms <= (mn + c_omega * delta)[:, None], axis=0)
    return NodalMap(points=samples.points, nodal=nodal, max_t=mx, min_t=mn, delta_t=delta,
                    c_omega=float(c_omega), times=times, min_norm=norms.min(axis=0), norms=norms)


# ---- fluxes ----------------------------------------------------------------

def flux_functional(whitney: WhitneyBasis):
    """Row vector ``phi`` with ``phi @ c_full`` = exact boundary flux of the field."""
    W = whitney
    faces, tet, slot, N, area = W.boundary_data()
    verts = TET_FACES[slot]
    Vs = W.V[tet]  # (n, 10, 4, 3)
    Vs = np.take_along_axis(Vs, verts[:, None, :, None], axis=2)  # (n, 10, 3, 3)
    # fields are linear on a face: the integral is area times the vertex mean
    loc = (area / 3.0)[:, None] * np.einsum("nsmi,ni->ns", Vs, N)
    phi = np.zeros(W.n_fields)
    np.add.at(phi, W.dofs[tet].reshape(-1), loc.reshape(-1))
    return phi


def boundary_flux(coeffs, whitney: WhitneyBasis, basis=None, phi=None):
    """``int_{dOmega} U . N`` for a coefficient vector (of ``basis`` if given)."""
    c = np.asarray(coeffs, dtype=np.float64)
    if basis is not None:
        c = basis.expand(c)
    if c.shape[0] != whitney.n_fields:
        raise ValueError(f"dimension mismatch: expected {whitney.n_fields}, got {c.shape[0]}")
    phi = flux_functional(whitney) if phi is None else phi
    return float(phi @ c)


def function_flux(K: SimplicialComplex3, F):
    """Flux of an explicit field ``F(points) -> (n, 3)``; exact for quadratics."""
    faces = np.flatnonzero(K.boundary_faces)
    N, area = K.exterior_normals(faces)
    tri = K.coords[K.faces[faces]]
    # edge-midpoint rule
    total = 0.0
    for a, b in ((0, 1), (1, 2), (0, 2)):
        m = 0.5 * (tri[:, a] + tri[:, b])
        total += np.sum(area / 3.0 * np.einsum("ni,ni->n", np.asarray(F(m)), N))
    return float(total)


def wave_flux(wave: ResonanceWave, nodal: NodalMap, whitney: WhitneyBasis, rho, system):
    """Flux of the rho I-normalized wave at the t_j maximizing max/min.

    Returns ``(flux, j, fallback)``, j zero-based into ``nodal.times``.
    """
    j, fallback = nodal.flux_time_index()
    c = wave.coefficients(nodal.times[j])
    nrm = math.sqrt(max(float(c @ (rho * (system.I @ c))), 0.0))
    if nrm == 0.0:
        return 0.0, j, fallback
    return boundary_flux(c / nrm, whitney, wave.basis), j, fallback
