import numpy as np
import pytest

from lorschwarz.highop import HighOrderOperator
from lorschwarz.lor import assemble_coarse, assemble_Kh
from lorschwarz.mesh import anisotropic_strip_mesh, cartesian_mesh, lor_refine, perturbed_mesh
from lorschwarz.schwarz import SchwarzPreconditioner, build_dg_schwarz, extend_patches, partition_vertices
from lorschwarz.sparse import pcg


def dense(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


def make_B(mesh, p, strategy="vertex", local_solver="mg", layers=0, **kw):
    topo = lor_refine(mesh, p)
    d = extend_patches(partition_vertices(mesh, strategy, **kw), layers)
    B = SchwarzPreconditioner(d, topo, assemble_Kh(topo), assemble_coarse(mesh), local_solver=local_solver)
    return B, topo


def test_vertex_patches_on_2x2():
    mesh = cartesian_mesh(2, 2)
    d = partition_vertices(mesh, "vertex")
    assert d.n_patches == 9
    sizes = sorted(len(e) for e in d.elements)
    assert sizes == [1, 1, 1, 1, 2, 2, 2, 2, 4]
    assert d.element_multiplicity().max() <= 4
    np.testing.assert_array_equal(d.element_multiplicity(), 4)


def test_single_and_subdomains():
    mesh = cartesian_mesh(4, 4)
    assert partition_vertices(mesh, "single").n_patches == 1
    d = partition_vertices(mesh, "subdomains", k=4)
    assert d.n_patches == 4
    allv = np.sort(np.concatenate(d.vertex_sets))
    np.testing.assert_array_equal(allv, np.arange(mesh.n_vertices))
    with pytest.raises(ValueError):
        partition_vertices(mesh, "subdomains")
    with pytest.raises(ValueError):
        partition_vertices(mesh, "bogus")


def test_seeded_validation():
    mesh = cartesian_mesh(1, 1)
    d = partition_vertices(mesh, "seeded", sets=[[0, 1], [2, 3]])
    assert d.n_patches == 2
    with pytest.raises(ValueError):
        partition_vertices(mesh, "seeded", sets=[[0, 1], [1, 2, 3]])
    with pytest.raises(ValueError):
        partition_vertices(mesh, "seeded", sets=[[0, 1]])


def test_extension_grows_and_saturates():
    mesh = cartesian_mesh(4, 4)
    d = partition_vertices(mesh, "vertex")
    d1 = extend_patches(d, 1)
    assert all(set(a) <= set(b) for a, b in zip(d.elements, d1.elements))
    assert d1.layers == 1
    big = extend_patches(d, 20)
    assert all(e.size == mesh.n_elements for e in big.elements)
    with pytest.raises(ValueError):
        extend_patches(d, -1)


def test_triggered_extension_only_touches_stretched_patches():
    mesh = anisotropic_strip_mesh(8.0, 4)
    d = partition_vertices(mesh, "vertex")
    full = extend_patches(d, 1)
    trig = extend_patches(d, 1, aspect_trigger=1e9)
    assert all(np.array_equal(a, b) for a, b in zip(d.elements, trig.elements))
    assert sum(e.size for e in full.elements) > sum(e.size for e in d.elements)


@pytest.mark.parametrize("strategy", ["vertex", "single"])
def test_preconditioner_symmetric_positive(strategy):
    mesh = perturbed_mesh(2, 2, seed=2)
    B, topo = make_B(mesh, 3, strategy)
    M = dense(B.apply, topo.n_nodes)
    np.testing.assert_allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0
    assert B.info["coarse_term"] == (strategy == "vertex")


def test_exact_single_patch_p1_converges_in_one_iteration():
    mesh = cartesian_mesh(3, 3)
    B, topo = make_B(mesh, 1, "single", local_solver="exact")
    op = HighOrderOperator(mesh, 1, topo=topo)
    b = op.assemble_rhs(lambda x, y: np.ones_like(x))
    _, rep = pcg(op.apply, B, b, tol=1e-10)
    assert rep.iterations == 1


def test_vertex_schwarz_iterations_level_off_in_p():
    mesh = cartesian_mesh(3, 3)
    its = []
    for p in (12, 16):
        B, topo = make_B(mesh, p)
        op = HighOrderOperator(mesh, p, topo=topo)
        b = op.assemble_rhs(lambda x, y: np.ones_like(x))
        _, rep = pcg(op.apply, B, b)
        assert rep.converged
        its.append(rep.iterations)
    assert its[1] <= its[0] + 2


def test_wrong_vector_size():
    B, topo = make_B(cartesian_mesh(2, 2), 2)
    with pytest.raises(ValueError):
        B.apply(np.zeros(topo.n_nodes + 1))
    with pytest.raises(ValueError):
        make_B(cartesian_mesh(2, 2), 2, local_solver="direct")


def test_dg_preconditioner_spd_and_injection_multiplicity():
    mesh = perturbed_mesh(2, 2, seed=4)
    p = 2
    B, topo = make_B(mesh, p, "single")
    op = HighOrderOperator(mesh, p, disc="ip", eta=10.0, topo=topo)
    D = build_dg_schwarz(B, op)
    M = dense(D.apply, op.n_dofs)
    np.testing.assert_allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0
    EtE = (D.E.T @ D.E).diagonal()
    counts = np.bincount(topo.elem_node_ids.ravel(), minlength=topo.n_nodes)
    free = topo.free_mask
    np.testing.assert_array_equal(EtE[free], counts[free])
    np.testing.assert_array_equal(EtE[~free], 0)


def test_dg_preconditioner_rejects_nonpositive_diagonal():
    mesh = cartesian_mesh(2, 2)
    B, topo = make_B(mesh, 1, "single")
    op = HighOrderOperator(mesh, 1, disc="ip", eta=10.0, topo=topo)
    with pytest.raises(ValueError):
        build_dg_schwarz(B, op, diag=-np.ones(op.n_dofs))


def test_dg_p1_solve():
    mesh = perturbed_mesh(3, 3, seed=1)
    B, topo = make_B(mesh, 1, "single")
    op = HighOrderOperator(mesh, 1, disc="ip", eta=10.0, topo=topo)
    D = build_dg_schwarz(B, op)
    b = op.assemble_rhs(lambda x, y: np.ones_like(x))
    _, rep = pcg(op.apply, D, b)
    assert rep.converged and rep.iterations < 40
