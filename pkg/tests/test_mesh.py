import numpy as np
import pytest

from lorschwarz.basis import gll_rule
from lorschwarz.mesh import (MeshError, anisotropic_strip_mesh, cartesian_mesh, lor_refine, perturbed_mesh,
                             read_mesh, refine_uniform, write_mesh)


@pytest.mark.parametrize("nx,ny,ne,nv,nb", [(1, 1, 1, 4, 4), (2, 2, 4, 9, 8), (2, 3, 6, 12, 10)])
def test_cartesian_counts(nx, ny, ne, nv, nb):
    m = cartesian_mesh(nx, ny)
    assert (m.n_elements, m.n_vertices, len(m.boundary_edges)) == (ne, nv, nb)


def test_interior_edges_shared_with_opposite_orientation():
    m = perturbed_mesh(4, 3, 0.2, 5)
    inner = np.flatnonzero(m.edge_elems[:, 1] >= 0)
    f0 = m.elem_edge_flip[m.edge_elems[inner, 0], m.edge_faces[inner, 0]]
    f1 = m.elem_edge_flip[m.edge_elems[inner, 1], m.edge_faces[inner, 1]]
    # the two local CCW traversals run in opposite global directions
    loc = lambda e, f: (f in (0, 1)) ^ bool(m.elem_edge_flip[e, f])
    for k in inner:
        a = loc(m.edge_elems[k, 0], m.edge_faces[k, 0])
        b = loc(m.edge_elems[k, 1], m.edge_faces[k, 1])
        assert a != b
    assert f0.shape == f1.shape


def _write(tmp_path, text):
    f = tmp_path / "m.txt"
    f.write_text(text)
    return f


def test_read_single_element(tmp_path):
    m = read_mesh(_write(tmp_path, "nodes 4\n0 0\n1 0\n1 1\n0 1\nquads 1\n0 1 2 3\n"))
    assert m.n_elements == 1 and len(m.boundary_edges) == 4


def test_read_clockwise_rejected(tmp_path):
    with pytest.raises(MeshError):
        read_mesh(_write(tmp_path, "nodes 4\n0 0\n1 0\n1 1\n0 1\nquads 1\n0 3 2 1\n"))


def test_read_nonconforming_rejected(tmp_path):
    text = ("nodes 8\n0 0\n1 0\n1 1\n0 1\n2 0\n2 1\n1 -1\n0 -1\n"
            "quads 3\n0 1 2 3\n1 4 5 2\n7 6 1 0\n")
    m_ok = read_mesh(_write(tmp_path, text))
    assert m_ok.n_elements == 3
    bad = "nodes 6\n0 0\n1 0\n1 1\n0 1\n2 0\n2 1\nquads 3\n0 1 2 3\n1 4 5 2\n0 1 2 3\n"
    with pytest.raises(MeshError):
        read_mesh(_write(tmp_path, bad))


def test_read_malformed(tmp_path):
    with pytest.raises(MeshError):
        read_mesh(_write(tmp_path, "nodes 2\n0 0\n"))
    with pytest.raises(MeshError):
        read_mesh(_write(tmp_path, "nodes 4\n0 0\n1 0\n1 1\n0 1\nquads 1\n0 1 2\n"))


def test_roundtrip(tmp_path):
    m = perturbed_mesh(3, 3, 0.2, 1)
    write_mesh(m, tmp_path / "a.txt")
    r = read_mesh(tmp_path / "a.txt")
    np.testing.assert_array_equal(r.vertices, m.vertices)
    np.testing.assert_array_equal(r.elements, m.elements)


@pytest.mark.parametrize("aspect", [1.0, 15.0, 1500.0])
def test_strip_aspect(aspect):
    m = anisotropic_strip_mesh(aspect)
    assert abs(m.aspect_ratios().max() - aspect) < 1e-9
    assert np.all(m.element_areas() > 0)


def test_strip_rejects_bad_input():
    with pytest.raises(MeshError):
        anisotropic_strip_mesh(0.5)
    with pytest.raises(MeshError):
        anisotropic_strip_mesh(10.0, base_n=2)


def test_refine_uniform_counts():
    m = refine_uniform(perturbed_mesh(2, 2, 0.2, 0))
    assert m.n_elements == 16 and m.n_vertices == 25
    assert abs(m.element_areas().sum() - 1) < 1e-12


@pytest.mark.parametrize("nx,ny,p", [(1, 1, 1), (2, 3, 3), (3, 2, 6)])
def test_lor_node_count(nx, ny, p):
    t = lor_refine(cartesian_mesh(nx, ny), p)
    assert t.n_nodes == (nx * p + 1) * (ny * p + 1)
    assert t.subcells.shape[0] == nx * ny * p * p
    # Euler: V - E + F = 1 for a planar refined quad mesh
    c = t.subcells
    e = np.sort(np.stack([c, np.roll(c, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
    assert t.n_nodes - len(np.unique(e, axis=0)) + len(c) == 1


def test_lor_small_elements():
    t = lor_refine(cartesian_mesh(1, 1), 2)
    assert t.n_nodes == 9 and len(t.subcells) == 4
    centre = t.node_coords[t.elem_node_ids[0, 1, 1]]
    np.testing.assert_allclose(centre, [0.5, 0.5])
    t4 = lor_refine(cartesian_mesh(1, 1), 4)
    gaps = np.diff(t4.nodes1d)
    assert abs(gaps[0] - 0.172673164646011) < 1e-12
    assert abs(gaps[1] - 0.327326835353989) < 1e-12
    assert abs(gaps[1] / gaps[0] - 1.8957) < 1e-4


def test_lor_shared_edges_merge_geometrically():
    m = perturbed_mesh(3, 3, 0.25, 2)
    t = lor_refine(m, 5)
    ids = t.elem_node_ids.ravel()
    coords = np.zeros((t.n_nodes, 2))
    # each element's own map images must agree with the stored global coordinates
    from lorschwarz.mesh import map_points
    x = t.nodes1d
    XI, ETA = np.meshgrid(x, x, indexing="ij")
    pts = map_points(m.corners, XI, ETA).reshape(-1, 2)
    coords[ids] = pts
    np.testing.assert_allclose(pts, t.node_coords[ids], atol=1e-13)
    assert np.all(t.subcell_ref_corners is not None)


@pytest.mark.parametrize("p", [4, 8, 16, 32])
def test_gl_spacing_scaling(p):
    g = np.diff(gll_rule(p)[0])
    assert 2.0 <= g.min() * p * p <= 6.0
    # on [0, 1] the widest gap is about pi / (2p)
    assert 1.0 <= g.max() * p <= 2.0


def test_p1_refinement_is_coarse_mesh():
    m = perturbed_mesh(3, 2, 0.2, 0)
    t = lor_refine(m, 1)
    assert t.n_nodes == m.n_vertices
    np.testing.assert_allclose(t.node_coords, m.vertices)
    np.testing.assert_array_equal(np.sort(t.boundary_nodes), np.sort(m.boundary_vertices))
