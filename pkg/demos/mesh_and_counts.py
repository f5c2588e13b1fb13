"""Build the full spruce slab, subdivide it, and print the simplex counts.

The coarse slab is 10 x 1 x 20 cm cut into 1 x 0.5 x 1 cm blocks, five
tetrahedra per block.  Barycentric subdivision splits every tetrahedron
into 24, which is the mesh the Whitney fields live on.
"""
from plates.mesh import barycentric_subdivide, boundary_euler, euler_characteristic, generate_slab_mesh


def describe(name, K):
    print(f"{name}: vertices {K.n_vertices}, edges {K.n_edges}, faces {K.n_faces}, tets {K.n_tets}")
    print(f"  boundary faces {int(K.boundary_faces.sum())}, "
          f"euler {euler_characteristic(K)}, boundary euler {boundary_euler(K)}")


if __name__ == "__main__":
    Kc = generate_slab_mesh((0.10, 0.01, 0.20), (0.01, 0.005, 0.01))
    describe("coarse", Kc)
    describe("subdivided", barycentric_subdivide(Kc))
