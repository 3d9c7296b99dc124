import numpy as np
import pytest

from lorschwarz import oracles
from lorschwarz.highop import CoefficientField, HighOrderOperator, make_coefficient
from lorschwarz.mesh import cartesian_mesh, perturbed_mesh


def dense(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


@pytest.mark.parametrize("p", [1, 2, 4])
def test_cg_matches_dense_oracle(p):
    mesh = perturbed_mesh(2, 2, seed=3)
    op = HighOrderOperator(mesh, p)
    K = dense(op.apply_Kp, op.n_dofs)
    Kref, Mref = oracles.assemble_cg(mesh, p, op.topo.elem_node_ids, op.boundary)
    np.testing.assert_allclose(K, Kref, atol=1e-12)
    M = dense(op.apply_Mp, op.n_dofs)
    np.testing.assert_allclose(M, Mref, atol=1e-13)
    assert np.allclose(K, K.T, atol=1e-12)


def test_stiffness_kills_constants_and_mass_integrates_area():
    mesh = perturbed_mesh(3, 2, seed=1)
    op = HighOrderOperator(mesh, 5)
    one = np.ones(op.n_dofs)
    np.testing.assert_allclose(op.apply_Kp(one, dirichlet=False), 0, atol=1e-11)
    np.testing.assert_allclose(one @ op.apply_Mp(one), mesh.element_areas().sum(), rtol=1e-13)


def test_unit_element_p1():
    op = HighOrderOperator(cartesian_mesh(1, 1), 1)
    K = dense(lambda v: op.apply_Kp(v, dirichlet=False), 4)
    M = dense(op.apply_Mp, 4)
    np.testing.assert_allclose(np.diag(K), 2 / 3)
    np.testing.assert_allclose(np.diag(M), 1 / 9)
    np.testing.assert_allclose(M.sum(), 1.0)


def test_rhs_of_one():
    mesh = cartesian_mesh(2, 2)
    op = HighOrderOperator(mesh, 3)
    b = op.assemble_rhs(lambda x, y: np.ones_like(x))
    assert np.all(b[op.boundary] == 0)
    np.testing.assert_allclose(op.load_total(lambda x, y: np.ones_like(x)), 1.0)
    ones = np.ones(op.n_dofs)
    free = op.topo.free_mask
    np.testing.assert_allclose(b[free], op.apply_Mp(ones)[free])


def test_coefficient_scales_operator():
    mesh = perturbed_mesh(2, 2, seed=5)
    a = HighOrderOperator(mesh, 3)
    b = HighOrderOperator(mesh, 3, CoefficientField(value=2.5))
    u = np.random.default_rng(0).standard_normal(a.n_dofs)
    u[a.boundary] = 0
    np.testing.assert_allclose(b.apply_Kp(u), 2.5 * a.apply_Kp(u), rtol=1e-13)


def test_variable_coefficient_against_oracle():
    mesh = perturbed_mesh(2, 2, seed=2)
    coeff = make_coefficient("b1")
    op = HighOrderOperator(mesh, 3, coeff)
    K = dense(op.apply_Kp, op.n_dofs)
    Kref, _ = oracles.assemble_cg(mesh, 3, op.topo.elem_node_ids, op.boundary, coeff=coeff)
    np.testing.assert_allclose(K, Kref, atol=1e-11)


def test_bad_inputs():
    mesh = cartesian_mesh(1, 1)
    with pytest.raises(ValueError):
        HighOrderOperator(mesh, 2, disc="hdg")
    with pytest.raises(ValueError):
        HighOrderOperator(mesh, 2, disc="ip", eta=0.0)
    with pytest.raises(ValueError):
        HighOrderOperator(mesh, 2, make_coefficient("b1"), disc="ip", eta=4.0)
    with pytest.raises(ValueError):
        make_coefficient("const", value=-1.0)


@pytest.mark.parametrize("disc", ["ip", "br2"])
@pytest.mark.parametrize("p", [1, 3])
def test_dg_matches_dense_oracle(disc, p):
    mesh = perturbed_mesh(2, 2, seed=7)
    op = HighOrderOperator(mesh, p, disc=disc, eta=4.0)
    A = dense(op.apply_dg, op.n_dofs)
    Aref = oracles.assemble_dg(mesh, p, 4.0, disc)
    np.testing.assert_allclose(A, Aref, atol=1e-10 * np.abs(Aref).max())
    assert np.allclose(A, A.T, atol=1e-10 * np.abs(A).max())
    assert np.linalg.eigvalsh(A).min() > 0


def test_dg_restricted_to_conforming_space_is_cg():
    mesh = perturbed_mesh(2, 2, seed=1)
    p = 3
    dg = HighOrderOperator(mesh, p, disc="ip", eta=8.0)
    cg = HighOrderOperator(mesh, p)
    E = dg.conforming_injection().toarray()
    A = dense(dg.apply_dg, dg.n_dofs)
    free = cg.topo.free_mask
    K = dense(cg.apply_Kp, cg.n_dofs)[np.ix_(free, free)]
    np.testing.assert_allclose((E.T @ A @ E)[np.ix_(free, free)], K, atol=1e-11)


def test_penalty_doubling_adds_psd():
    mesh = perturbed_mesh(2, 2, seed=3)
    a = dense(HighOrderOperator(mesh, 2, disc="ip", eta=4.0).apply_dg, 36)
    b = dense(HighOrderOperator(mesh, 2, disc="ip", eta=8.0).apply_dg, 36)
    assert np.linalg.eigvalsh(b - a).min() > -1e-10


def test_br2_and_ip_spectrally_equivalent():
    mesh = perturbed_mesh(2, 2, seed=3)
    ip = dense(HighOrderOperator(mesh, 3, disc="ip", eta=10.0).apply_dg, 64)
    br = dense(HighOrderOperator(mesh, 3, disc="br2", eta=10.0).apply_dg, 64)
    L = np.linalg.cholesky(ip)
    Li = np.linalg.inv(L)
    lam = np.linalg.eigvalsh(Li @ br @ Li.T)
    assert 0.01 < lam.min() and lam.max() < 100


def test_dg_diagonal_probe():
    mesh = perturbed_mesh(2, 2, seed=3)
    op = HighOrderOperator(mesh, 2, disc="br2", eta=6.0)
    A = dense(op.apply_dg, op.n_dofs)
    np.testing.assert_allclose(op.dg_diagonal(), np.diag(A), atol=1e-12)


def test_l2_error_of_interpolated_polynomial():
    mesh = perturbed_mesh(2, 2, seed=3)
    op = HighOrderOperator(mesh, 3)
    f = lambda x, y: x**2 * y - y**3
    u = f(op.topo.node_coords[:, 0], op.topo.node_coords[:, 1])
    # x^2 y on a perturbed mesh is not in the mapped Q3 space exactly, y^3 alone is
    assert op.l2_error(u, f) < 1e-3
    g = lambda x, y: x + 2 * y
    assert op.l2_error(g(*op.topo.node_coords.T), g) < 1e-13


def test_flop_counter_increases():
    op = HighOrderOperator(cartesian_mesh(2, 2), 4)
    f0 = op.flops
    op.apply_Kp(np.zeros(op.n_dofs))
    assert op.flops > f0
