"""Orthotropic Hooke tensors in 6x6 form and the constants derived from them.

Component order of the 6x6 matrices is (11, 22, 33, 23, 31, 12) with axes
(1, 2, 3) = (r, theta, z).  Shear entries are the moduli of rigidity, i.e. the
strain vector carries engineering shear strains, which is the usual Voigt
convention and the one that makes the compliance diagonal ``1/g``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MaterialError",
    "ElasticTensor",
    "tensor_from_engineering",
    "spruce_engelmann",
    "isotropic",
    "get_material",
    "load_material_file",
    "coercivity_spectrum",
    "weighted_divergence_constants",
    "REFERENCE_L_CONSTANTS",
]

VOIGT = [(0, 0), (1, 1), (2, 2), (1, 2), (2, 0), (0, 1)]

# l1, l2, l3 printed for the spruce tensor; kept as an override preset
REFERENCE_L_CONSTANTS = (1.932758876e9, 1.488135884e9, 5.884378014e9)


class MaterialError(ValueError):
    pass


def _voigt_index(i, j):
    return {frozenset((0,)): 0, frozenset((1,)): 1, frozenset((2,)): 2,
            frozenset((1, 2)): 3, frozenset((0, 2)): 4, frozenset((0, 1)): 5}[frozenset((i, j))]


def full_tensor(sym6):
    """Expand a 6x6 Voigt matrix into the 4-index tensor ``W[i, j, k, l]``."""
    W = np.empty((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            a = _voigt_index(i, j)
            for k in range(3):
                for l in range(3):
                    W[i, j, k, l] = sym6[a, _voigt_index(k, l)]
    return W


@dataclass(frozen=True)
class ElasticTensor:
    sym6: np.ndarray
    density: float = 360.0
    name: str = "custom"
    l_override: tuple | None = None
    engineering: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.sym6, dtype=np.float64)
        if s.shape != (6, 6):
            raise MaterialError("moduli matrix must be 6x6")
        if not np.allclose(s, s.T, rtol=1e-12, atol=0.0):
            raise MaterialError("moduli matrix is not symmetric")
        object.__setattr__(self, "sym6", 0.5 * (s + s.T))
        object.__setattr__(self, "tensor", full_tensor(self.sym6))

    @property
    def normal_block(self):
        return self.sym6[:3, :3]

    @property
    def shear_block(self):
        return self.sym6[3:, 3:]

    def compliance(self):
        return np.linalg.inv(self.sym6)

    def stress(self, strain6):
        """Stress vector from a strain vector with engineering shears."""
        return self.sym6 @ np.asarray(strain6)

    def strain(self, stress6):
        return np.linalg.solve(self.sym6, np.asarray(stress6))

    def stress_of_gradient(self, G):
        """sigma(grad u) for velocity-gradient matrices ``G[..., alpha, i] = d_i u^alpha``."""
        return np.einsum("aibj,...bj->...ai", self.tensor, G)

    @property
    def first_derivative_at_identity(self):
        """W'(1) as a matrix ``M[i, alpha] = sum_j W[i, alpha, j, j]``."""
        return np.einsum("iajj->ia", self.tensor)

    def boundary_traction(self, N):
        """W'(1)N for (arrays of) unit normals ``N``."""
        return np.einsum("ia,...i->...a", self.first_derivative_at_identity, N)

    def l_constants(self):
        if self.l_override is not None:
            return tuple(float(x) for x in self.l_override)
        return weighted_divergence_constants(self)

    def with_l_override(self, values):
        return ElasticTensor(self.sym6, self.density, self.name, tuple(values), self.engineering)

    def digest(self):
        h = hashlib.sha256(np.ascontiguousarray(self.sym6, dtype="<f8").tobytes())
        h.update(repr((self.density, self.l_override)).encode())
        return h.hexdigest()[:16]


def tensor_from_engineering(e_r, e_theta, e_z, g_thetaz, g_rz, g_rtheta,
                            mu_rtheta, mu_thetar, mu_rz, mu_zr, mu_thetaz, mu_ztheta,
                            density=360.0, name="custom", repair=True):
    """Moduli tensor from engineering constants of an orthotropic body.

    The compliance matrix is assembled from moduli and Poisson ratios; when
    ``mu_ij/e_i`` and ``mu_ji/e_j`` disagree, both are replaced by their mean
    before inversion.
    """
    e = np.array([e_r, e_theta, e_z], dtype=np.float64)
    g = np.array([g_thetaz, g_rz, g_rtheta], dtype=np.float64)
    if np.any(e <= 0) or np.any(g <= 0):
        raise MaterialError("elastic and shear moduli must be positive")
    mu = np.zeros((3, 3))
    mu[0, 1], mu[1, 0] = mu_rtheta, mu_thetar
    mu[0, 2], mu[2, 0] = mu_rz, mu_zr
    mu[1, 2], mu[2, 1] = mu_thetaz, mu_ztheta

    normal = np.diag(1.0 / e)
    for i in range(3):
        for j in range(3):
            if i != j:
                # row i, column j holds -mu_ji / e_j
                normal[i, j] = -mu[j, i] / e[j]
    if repair:
        normal = 0.5 * (normal + normal.T)
    elif not np.allclose(normal, normal.T, rtol=1e-12):
        raise MaterialError("Poisson ratios violate mu_ij/e_i = mu_ji/e_j")

    if abs(np.linalg.det(normal)) <= 1e-12 * np.prod(np.diag(normal)):
        raise MaterialError("singular compliance: normal (3x3) block is not invertible")
    U = np.zeros((6, 6))
    U[:3, :3] = normal
    U[3:, 3:] = np.diag(1.0 / g)
    W = np.zeros((6, 6))
    W[:3, :3] = np.linalg.inv(normal)
    W[3:, 3:] = np.diag(g)
    eng = dict(e_r=e_r, e_theta=e_theta, e_z=e_z, g_thetaz=g_thetaz, g_rz=g_rz,
               g_rtheta=g_rtheta, mu_rtheta=mu_rtheta, mu_thetar=mu_thetar, mu_rz=mu_rz,
               mu_zr=mu_zr, mu_thetaz=mu_thetaz, mu_ztheta=mu_ztheta)
    return ElasticTensor(W, density=density, name=name, engineering=eng)


def spruce_engelmann():
    """Engelmann spruce at 12% moisture, density 360 kg/m^3."""
    e_z = 9790e6
    return tensor_from_engineering(
        e_r=0.128 * e_z, e_theta=0.059 * e_z, e_z=e_z,
        g_thetaz=0.120 * e_z, g_rz=0.124 * e_z, g_rtheta=0.010 * e_z,
        mu_rtheta=0.530, mu_thetar=0.255, mu_rz=0.083, mu_zr=0.422,
        mu_thetaz=0.058, mu_ztheta=0.462,
        density=360.0, name="spruce-engelmann",
    )


def isotropic(e, g, nu=0.0, density=360.0):
    """Isotropic test material; with ``nu = 0`` the tensor is diag(e,e,e,g,g,g)."""
    return tensor_from_engineering(e, e, e, g, g, g, nu, nu, nu, nu, nu, nu,
                                   density=density, name=f"isotropic({e:g},{g:g})")


def get_material(name):
    if name == "spruce-engelmann":
        return spruce_engelmann()
    if name.startswith("isotropic(") and name.endswith(")"):
        args = [float(x) for x in name[len("isotropic("):-1].split(",")]
        return isotropic(*args)
    raise MaterialError(f"unknown material {name!r}")


_FILE_KEYS = ("e_r", "e_theta", "e_z", "g_thetaz", "g_rz", "g_rtheta", "mu_rtheta",
              "mu_thetar", "mu_rz", "mu_zr", "mu_thetaz", "mu_ztheta")


def load_material_file(path):
    """Read ``key = value`` engineering constants (Pa, ratios, density in kg/m^3)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MaterialError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        try:
            values[k] = float(v)
        except ValueError:
            raise MaterialError(f"{path}:{lineno}: bad number {v!r}") from None
    missing = [k for k in _FILE_KEYS if k not in values]
    if missing:
        raise MaterialError(f"{path}: missing keys {missing}")
    unknown = set(values) - set(_FILE_KEYS) - {"density"}
    if unknown:
        raise MaterialError(f"{path}: unknown keys {sorted(unknown)}")
    return tensor_from_engineering(**{k: values[k] for k in _FILE_KEYS},
                                   density=values.get("density", 360.0),
                                   name=Path(path).stem)


def coercivity_spectrum(W):
    """Sorted eigenvalues of the normal block and the sorted shear diagonal."""
    normal = np.linalg.eigvalsh(W.normal_block)
    shear = np.sort(np.diag(W.shear_block))
    return normal, shear


def weighted_divergence_constants(W):
    """Means of the second-order coefficients of L_1(D), L_2(D), L_3(D).

    The coefficient of d_k^2 in L_i(D) is W_iiii for k = i and
    2 W_kiki + W_kkii otherwise.
    """
    T = W.tensor
    l = []
    for i in range(3):
        coeffs = [T[i, i, i, i] if k == i else 2.0 * T[k, i, k, i] + T[k, k, i, i]
                  for k in range(3)]
        l.append(float(np.mean(coeffs)))
    return tuple(l)
