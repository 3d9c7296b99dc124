import numpy as np
import pytest

from lorschwarz.highop import HighOrderOperator
from lorschwarz.lor import assemble_coarse, assemble_Kh, coarse_injection, spectral_gap
from lorschwarz.mesh import cartesian_mesh, lor_refine, perturbed_mesh


@pytest.mark.parametrize("p", [1, 3, 6])
def test_row_sums_and_sparsity(p):
    topo = lor_refine(perturbed_mesh(3, 3, seed=1), p)
    K = assemble_Kh(topo).K
    np.testing.assert_allclose(np.asarray(K.sum(axis=1)).ravel(), 0, atol=1e-11)
    assert np.max(np.diff(K.indptr)) <= 9
    assert abs(K - K.T).max() < 1e-13


def test_p1_equals_coarse_operator():
    mesh = perturbed_mesh(3, 2, seed=4)
    topo = lor_refine(mesh, 1)
    Kh = assemble_Kh(topo).K
    K0 = assemble_coarse(mesh).K
    # p=1 refined nodes are the coarse vertices, possibly renumbered
    P = coarse_injection(topo)
    np.testing.assert_allclose((P.T @ Kh @ P).toarray(), K0.toarray(), atol=1e-13)


def test_unit_square_stencil():
    mesh = cartesian_mesh(1, 1)
    K = assemble_coarse(mesh).K.toarray()
    np.testing.assert_allclose(np.diag(K), 2 / 3)
    v = {tuple(c): i for i, c in enumerate(mesh.vertices)}
    o = v[(0.0, 0.0)]
    np.testing.assert_allclose(K[o, v[(1.0, 0.0)]], -1 / 6)
    np.testing.assert_allclose(K[o, v[(0.0, 1.0)]], -1 / 6)
    np.testing.assert_allclose(K[o, v[(1.0, 1.0)]], -1 / 3)


def test_coarse_center_diagonal():
    mesh = cartesian_mesh(2, 2)
    K = assemble_coarse(mesh).K.toarray()
    center = int(np.argmin(np.linalg.norm(mesh.vertices - 0.5, axis=1)))
    np.testing.assert_allclose(K[center, center], 8 / 3)


def test_coarse_injection_properties():
    mesh = perturbed_mesh(3, 3, seed=2)
    topo = lor_refine(mesh, 4)
    P = coarse_injection(topo)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1, atol=1e-14)
    assert P.data.min() >= -1e-14
    # reproduces bilinear functions exactly on each element (here: vertex x coordinate
    # interpolated, compared with the affine-in-reference map)
    x = P @ mesh.vertices[:, 0]
    np.testing.assert_allclose(x, topo.node_coords[:, 0], atol=1e-13)


def test_spectral_gap_p1_is_one():
    mesh = cartesian_mesh(3, 3)
    op = HighOrderOperator(mesh, 1)
    Kh = assemble_Kh(op.topo)
    gap = spectral_gap(lambda v: op.apply_Kp(v, dirichlet=False), Kh.K, op.topo.free_mask, trials=10)
    assert abs(gap["rmin"] - 1) < 1e-12 and abs(gap["rmax"] - 1) < 1e-12


def test_spectral_gap_bounded_at_moderate_p():
    mesh = cartesian_mesh(2, 2)
    op = HighOrderOperator(mesh, 6)
    Kh = assemble_Kh(op.topo)
    gap = spectral_gap(lambda v: op.apply_Kp(v, dirichlet=False), Kh.K, op.topo.free_mask, trials=30)
    assert 0.3 < gap["rmin"] <= gap["rmax"] < 3


def test_linear_in_coefficient_scale():
    from lorschwarz.highop import CoefficientField

    topo = lor_refine(cartesian_mesh(2, 2), 3)
    K1 = assemble_Kh(topo).K
    K3 = assemble_Kh(topo, CoefficientField(value=3.0)).K
    np.testing.assert_allclose((K3 - 3 * K1).toarray(), 0, atol=1e-12)
