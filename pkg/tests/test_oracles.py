"""The dense references are only trustworthy if they pass independent checks of their own."""

import numpy as np
import pytest

from lorschwarz import oracles
from lorschwarz.mesh import cartesian_mesh, lor_refine, perturbed_mesh


def test_gll_points_match_closed_forms():
    np.testing.assert_allclose(oracles.gll_points(2), [0, 0.5, 1])
    a = 0.5 - np.sqrt(5) / 10
    np.testing.assert_allclose(oracles.gll_points(3), [0, a, 1 - a, 1], atol=1e-15)


def test_lagrange_cardinality_and_derivative():
    nodes = oracles.gll_points(4)
    V, D = oracles.lagrange_1d(nodes, nodes)
    np.testing.assert_allclose(V, np.eye(5), atol=1e-13)
    x = np.linspace(0, 1, 7)
    V, D = oracles.lagrange_1d(nodes, x)
    np.testing.assert_allclose(V @ nodes**3, x**3, atol=1e-13)
    np.testing.assert_allclose(D @ nodes**3, 3 * x**2, atol=1e-12)


def test_inverse_map_roundtrip():
    c = np.array([[0.0, 0.0], [1.2, 0.1], [1.0, 0.9], [-0.1, 1.1]])
    for ref in ([0.3, 0.7], [0.0, 1.0], [0.9, 0.05]):
        x, _ = oracles._bilinear(c, *ref)
        np.testing.assert_allclose(oracles.inverse_map(c, x), ref, atol=1e-13)


def test_element_matrices_unit_square():
    c = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    K, M = oracles.element_matrices(c, 1)
    np.testing.assert_allclose(np.diag(K), 2 / 3)
    np.testing.assert_allclose(M.sum(), 1.0)
    # scaling the element by s leaves K unchanged and scales M by s^2
    K2, M2 = oracles.element_matrices(3 * c, 2)
    K1, M1 = oracles.element_matrices(c, 2)
    np.testing.assert_allclose(K2, K1, atol=1e-13)
    np.testing.assert_allclose(M2, 9 * M1, atol=1e-13)


def test_cg_energy_of_linear_function():
    mesh = perturbed_mesh(2, 2, seed=1)
    topo = lor_refine(mesh, 3)
    K, M = oracles.assemble_cg(mesh, 3, topo.elem_node_ids, topo.boundary_nodes, dirichlet=False)
    u = topo.node_coords[:, 0] + 2 * topo.node_coords[:, 1]
    np.testing.assert_allclose(u @ K @ u, 5.0, rtol=1e-12)  # |grad u|^2 over the unit square
    np.testing.assert_allclose(np.ones(len(u)) @ M @ np.ones(len(u)), 1.0, rtol=1e-13)


@pytest.mark.parametrize("disc", ["ip", "br2"])
def test_dg_oracle_consistency(disc):
    mesh = cartesian_mesh(2, 2)
    A = oracles.assemble_dg(mesh, 2, 8.0, disc)
    assert np.allclose(A, A.T, atol=1e-12)
    assert np.linalg.eigvalsh(A).min() > 0
    # linear in a constant coefficient
    np.testing.assert_allclose(oracles.assemble_dg(mesh, 2, 8.0, disc, value=2.0), 2 * A)


def test_dg_oracle_rejects_unknown():
    with pytest.raises(ValueError):
        oracles.assemble_dg(cartesian_mesh(1, 1), 1, 1.0, "ldg")
