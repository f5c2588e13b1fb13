"""Eigenmodes of a small spruce slab near a few target frequencies.

A 2 x 0.5 x 4 cm slab keeps the whole run under a minute.  For each
target we ask for the six modes closest to it and print their
frequencies, residuals and boundary fluxes.

Expect some modes with f_r close to zero: the stiffness matrix has a large
exact null space (rows of interior edges vanish), and those modes sit
nearest to any negative shift on a mesh this small.
"""
from plates.assembly import assemble_coarse
from plates.eigensolve import modes_near
from plates.material import spruce_engelmann
from plates.mesh import barycentric_subdivide, generate_slab_mesh
from plates.resonance import boundary_flux

if __name__ == "__main__":
    wood = spruce_engelmann()
    rho = wood.density
    K = barycentric_subdivide(generate_slab_mesh((0.02, 0.005, 0.04), (0.01, 0.005, 0.01)))
    system = assemble_coarse(K, wood)
    print(f"{system.K.shape[0]} unknowns after the gauge")
    for f in (80.0, 147.0, 222.0):
        modes, info = modes_near(system, rho, f, count=6)
        print(f"target {f:g} Hz, shift {info['sigma']:.4g}")
        for m in modes:
            flux = boundary_flux(m.coeffs, system.whitney, system.basis)
            print(f"  f_r {m.f_r:12.6g}  mu {m.mu:+.4e}  residual {m.rel_residual:.1e}  flux {flux:+.2e}")
