import numpy as np
import pytest

from lorschwarz.lor import assemble_Kh
from lorschwarz.mesh import cartesian_mesh, lor_refine, perturbed_mesh
from lorschwarz.multigrid import (GlobalLevels, build_hierarchy, coarsen_1d, coarsening_chain, normalize_smoother,
                                  smoother_study_run)


def vcycle_matrix(H):
    n = H.n
    return np.column_stack([H.vcycle(e) for e in np.eye(n)])


def test_coarsen_1d_examples():
    np.testing.assert_array_equal(coarsen_1d(np.linspace(0, 1, 5)), [0, 2, 4])
    np.testing.assert_array_equal(coarsen_1d(np.linspace(0, 1, 4)), [0, 2, 3])
    np.testing.assert_array_equal(coarsen_1d([0.0, 1.0]), [0, 1])
    with pytest.raises(ValueError):
        coarsen_1d([0.0])


@pytest.mark.parametrize("p,levels", [(1, 1), (2, 2), (4, 3), (8, 4), (16, 5)])
def test_level_count(p, levels):
    chain = coarsening_chain(np.linspace(0, 1, p + 1))
    assert len(chain) == levels
    assert chain[-1].size == 2


def test_galerkin_coarse_operators():
    topo = lor_refine(perturbed_mesh(2, 2, seed=1), 6)
    H = build_hierarchy(topo, assemble_Kh(topo).K)
    for fine, coarse in zip(H.levels, H.levels[1:]):
        G = (fine.P.T @ fine.A @ fine.P).toarray()
        np.testing.assert_allclose(coarse.A.toarray(), G, atol=1e-12)


def test_prolongation_reproduces_bilinears():
    topo = lor_refine(perturbed_mesh(2, 2, seed=3), 5)
    gl = GlobalLevels(topo)
    for lev, P in enumerate(gl.P):
        c = gl.nodes[lev + 1]
        # functions bilinear in reference coordinates: the coarse-vertex interpolant of x
        from lorschwarz.lor import coarse_injection

        f = coarse_injection(topo) @ topo.parent.vertices[:, 0]
        fc = np.zeros(topo.n_nodes)
        fc[c] = f[c]
        fine = gl.nodes[lev]
        np.testing.assert_allclose((P @ fc)[fine], f[fine], atol=1e-12)


def test_vcycle_of_zero_is_zero_and_checks_size():
    topo = lor_refine(cartesian_mesh(2, 2), 4)
    H = build_hierarchy(topo, assemble_Kh(topo).K)
    np.testing.assert_array_equal(H.vcycle(np.zeros(H.n)), 0)
    with pytest.raises(ValueError):
        H.vcycle(np.zeros(H.n + 1))


def test_single_level_is_exact():
    topo = lor_refine(cartesian_mesh(3, 3), 1)
    H = build_hierarchy(topo, assemble_Kh(topo).K)
    assert H.n_levels == 1
    A = H.levels[0].A.toarray()
    np.testing.assert_allclose(vcycle_matrix(H) @ A, np.eye(H.n), atol=1e-12)


@pytest.mark.parametrize("smoother", ["ilu-mdf", "jacobi", "gauss-seidel", "ilu-line"])
def test_symmetrized_vcycle_is_symmetric(smoother):
    topo = lor_refine(cartesian_mesh(2, 2), 4)
    H = build_hierarchy(topo, assemble_Kh(topo).K, smoother=smoother)
    B = vcycle_matrix(H)
    np.testing.assert_allclose(B, B.T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (B + B.T)).min() > 0


def test_two_level_with_exact_coarse_is_convergent():
    topo = lor_refine(cartesian_mesh(2, 2), 2)
    H = build_hierarchy(topo, assemble_Kh(topo).K)
    assert H.n_levels == 2
    A = H.levels[0].A.toarray()
    E = np.eye(H.n) - vcycle_matrix(H) @ A
    assert np.max(np.abs(np.linalg.eigvals(E))) < 0.2


def test_mdf_vcycle_contraction_at_p8():
    topo = lor_refine(cartesian_mesh(2, 2), 8)
    H = build_hierarchy(topo, assemble_Kh(topo).K, smoother="ilu-mdf")
    A = H.levels[0].A.toarray()
    E = np.eye(H.n) - vcycle_matrix(H) @ A
    assert np.max(np.abs(np.linalg.eigvals(E))) < 0.5


def test_jacobi_degrades_on_gauss_lobatto_points():
    few = smoother_study_run(4, "jacobi", "gauss-lobatto")
    many = smoother_study_run(16, "jacobi", "gauss-lobatto")
    mdf = smoother_study_run(16, "ilu-mdf", "gauss-lobatto")
    assert many > 2 * few
    assert 0 < mdf < many


def test_smoother_names():
    assert normalize_smoother("mdf") == "ilu-mdf"
    with pytest.raises(ValueError):
        normalize_smoother("sor")


def test_perturbed_mesh_hierarchy_with_mirroring():
    # flipped edge orientations force per-element mirroring of the thinning pattern
    mesh = perturbed_mesh(3, 3, seed=8)
    topo = lor_refine(mesh, 5)  # p=5: the thinning pattern is not symmetric
    gl = GlobalLevels(topo)
    assert gl.n_levels == 4
    H = build_hierarchy(topo, assemble_Kh(topo).K, glevels=gl)
    B = vcycle_matrix(H)
    assert np.linalg.eigvalsh(0.5 * (B + B.T)).min() > 0
