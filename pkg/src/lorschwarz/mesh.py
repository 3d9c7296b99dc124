"""Coarse quadrilateral meshes and their Gauss-Lobatto low-order refinement.

Reference element is the unit square with counterclockwise corners
``v0=(0,0), v1=(1,0), v2=(1,1), v3=(0,1)``. Local faces are numbered

* f0: eta = 0, from v0 to v1 (tangent is xi)
* f1: xi = 1,  from v1 to v2 (tangent is eta)
* f2: eta = 1, from v3 to v2 (tangent is xi)
* f3: xi = 0,  from v0 to v3 (tangent is eta)

where "from a to b" is the direction of increasing tangential reference
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .basis import gll_rule

# (start, end) local corners per face in increasing tangential coordinate
FACE_CORNERS = np.array([[0, 1], [1, 2], [3, 2], [0, 3]])
# counterclockwise traversal of each face, used for the conformity check
FACE_CCW = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class MeshError(ValueError):
    """Invalid mesh input: parse failure, inversion, or non-conformity."""


def bilinear_shape(xi, eta):
    """Q1 shape functions and their reference gradients, stacked on a trailing axis."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)
    dN_dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1)
    dN_deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1)
    return N, dN_dxi, dN_deta


def map_points(corners: np.ndarray, xi, eta) -> np.ndarray:
    """Images of reference points under the bilinear maps of ``corners`` (ne, 4, 2)."""
    N, _, _ = bilinear_shape(xi, eta)
    return np.einsum("...a,ead->e...d", N, corners)


def map_jacobian(corners: np.ndarray, xi, eta) -> np.ndarray:
    """Jacobians ``J[e, ..., i, j] = d x_i / d xi_j`` of the bilinear maps."""
    _, dxi, deta = bilinear_shape(xi, eta)
    jx = np.einsum("...a,ead->e...d", dxi, corners)
    je = np.einsum("...a,ead->e...d", deta, corners)
    return np.stack([jx, je], axis=-1)


@dataclass
class CoarseMesh:
    vertices: np.ndarray
    elements: np.ndarray
    edges: np.ndarray = field(init=False, repr=False)
    elem_edges: np.ndarray = field(init=False, repr=False)
    elem_edge_flip: np.ndarray = field(init=False, repr=False)
    edge_elems: np.ndarray = field(init=False, repr=False)
    edge_faces: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 4)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= len(self.vertices)):
            raise MeshError("element references a vertex index out of range")
        self._build_edges()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def corners(self) -> np.ndarray:
        return self.vertices[self.elements]

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_elems[:, 1] < 0)

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    def _build_edges(self):
        ne = self.n_elements
        local = self.elements[:, FACE_CORNERS]  # (ne, 4, 2)
        key = np.sort(local, axis=2).reshape(-1, 2)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            bad = edges[np.argmax(counts)]
            raise MeshError(f"non-conforming mesh: edge {tuple(bad)} shared by {counts.max()} elements")
        self.edges = edges
        self.elem_edges = inverse.reshape(ne, 4)
        self.elem_edge_flip = (local[:, :, 0] != edges[self.elem_edges][:, :, 0])
        edge_elems = -np.ones((len(edges), 2), dtype=np.int64)
        edge_faces = -np.ones((len(edges), 2), dtype=np.int64)
        # first and second incidence, in element order
        order = np.argsort(inverse, kind="stable")
        flat_e = np.repeat(np.arange(ne), 4)[order]
        flat_f = np.tile(np.arange(4), ne)[order]
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_elems[sorted_edges[first], 0] = flat_e[first]
        edge_faces[sorted_edges[first], 0] = flat_f[first]
        edge_elems[sorted_edges[~first], 1] = flat_e[~first]
        edge_faces[sorted_edges[~first], 1] = flat_f[~first]
        self.edge_elems = edge_elems
        self.edge_faces = edge_faces

    def validate(self, tol: float = 1e-12):
        """Raise :class:`MeshError` unless the mesh satisfies all invariants."""
        J = map_jacobian(self.corners, REF_CORNERS[:, 0], REF_CORNERS[:, 1])
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        bad = np.flatnonzero(np.any(det <= 0.0, axis=1))
        if bad.size:
            raise MeshError(f"inverted element {bad[0]} (non-positive Jacobian at a corner)")
        interior = np.flatnonzero(self.edge_elems[:, 1] >= 0)
        ccw = self.elements[:, FACE_CCW]
        e0, e1 = self.edge_elems[interior].T
        f0, f1 = self.edge_faces[interior].T
        same = ccw[e0, f0, 0] != ccw[e1, f1, 1]
        if np.any(same):
            ed = interior[np.argmax(same)]
            raise MeshError(f"non-conforming mesh: edge {ed} has matching orientation in both elements")
        if len(self.vertices) > 1:
            pairs = cKDTree(self.vertices).query_pairs(tol)
            if pairs:
                a, b = sorted(pairs)[0]
                raise MeshError(f"duplicate vertices {a} and {b}")
        return self

    def element_areas(self) -> np.ndarray:
        x = self.corners
        # shoelace formula, exact for bilinear quads
        return 0.5 * np.abs(
            np.sum(x[:, :, 0] * np.roll(x[:, :, 1], -1, axis=1) - np.roll(x[:, :, 0], -1, axis=1) * x[:, :, 1], axis=1)
        )

    def edge_lengths(self) -> np.ndarray:
        v = self.vertices[self.edges]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)

    def aspect_ratios(self) -> np.ndarray:
        """Longest over shortest side of every element."""
        lengths = self.edge_lengths()[self.elem_edges]
        return lengths.max(axis=1) / lengths.min(axis=1)

    def element_neighbors(self) -> list[list[int]]:
        """Edge-adjacent elements of each element."""
        nbrs: list[list[int]] = [[] for _ in range(self.n_elements)]
        for a, b in self.edge_elems[self.edge_elems[:, 1] >= 0]:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return nbrs


def cartesian_mesh(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0)) -> CoarseMesh:
    """Axis-aligned ``nx`` by ``ny`` quad mesh with x-fastest vertex numbering."""
    x0, x1, y0, y1 = domain
    if nx < 1 or ny < 1:
        raise MeshError("grid needs at least one element in each direction")
    if not (x1 > x0 and y1 > y0):
        raise MeshError("domain must have positive area")
    return _tensor_mesh(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))


def _tensor_mesh(xs: np.ndarray, ys: np.ndarray) -> CoarseMesh:
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1])
    return CoarseMesh(vertices, elements)


def perturbed_mesh(nx: int, ny: int, amplitude: float = 0.2, seed: int = 0, domain=(0.0, 1.0, 0.0, 1.0)) -> CoarseMesh:
    """Cartesian mesh with interior vertices moved randomly by up to ``amplitude`` cells."""
    mesh = cartesian_mesh(nx, ny, domain)
    hx = (domain[1] - domain[0]) / nx
    hy = (domain[3] - domain[2]) / ny
    rng = np.random.default_rng(seed)
    interior = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices)
    shift = rng.uniform(-amplitude, amplitude, size=(interior.size, 2)) * [hx, hy]
    verts = mesh.vertices.copy()
    verts[interior] += shift
    return CoarseMesh(verts, mesh.elements).validate()


def anisotropic_strip_mesh(aspect: float, base_n: int = 10) -> CoarseMesh:
    """Unit-square mesh whose middle element row has the requested aspect ratio.

    The two rows adjacent to the strip absorb the removed height, so the
    element count does not depend on ``aspect``.
    """
    if aspect < 1.0:
        raise MeshError(f"aspect ratio must be >= 1, got {aspect}")
    if base_n < 3:
        raise MeshError("strip mesh needs base_n >= 3 so the strip has two neighbour rows")
    h = 1.0 / base_n
    strip = h / aspect
    if strip < 1e-10:
        raise MeshError(f"aspect {aspect} degenerates the strip (height {strip:.3e})")
    heights = np.full(base_n, h)
    k = base_n // 2
    heights[k] = strip
    heights[k - 1] += 0.5 * (h - strip)
    heights[k + 1] += 0.5 * (h - strip)
    ys = np.concatenate(([0.0], np.cumsum(heights)))
    ys[-1] = 1.0
    return _tensor_mesh(np.linspace(0.0, 1.0, base_n + 1), ys).validate()


def refine_uniform(mesh: CoarseMesh) -> CoarseMesh:
    """Split every quad into four through edge midpoints and the reference centre."""
    nv, ned, nel = mesh.n_vertices, mesh.n_edges, mesh.n_elements
    edge_mid = 0.5 * mesh.vertices[mesh.edges].sum(axis=1)
    centre = map_points(mesh.corners, 0.5, 0.5)
    verts = np.vstack([mesh.vertices, edge_mid, centre])
    c = mesh.elements
    m = nv + mesh.elem_edges  # midpoints of f0..f3
    z = nv + ned + np.arange(nel)
    children = np.stack(
        [
            np.column_stack([c[:, 0], m[:, 0], z, m[:, 3]]),
            np.column_stack([m[:, 0], c[:, 1], m[:, 1], z]),
            np.column_stack([z, m[:, 1], c[:, 2], m[:, 2]]),
            np.column_stack([m[:, 3], z, m[:, 2], c[:, 3]]),
        ],
        axis=1,
    ).reshape(-1, 4)
    return CoarseMesh(verts, children)


def read_mesh(path) -> CoarseMesh:
    """Parse the plain-text mesh format (``nodes N`` / coordinates / ``quads E`` / connectivity)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def header(word):
        nonlocal pos
        if pos >= len(rows):
            raise MeshError(f"unexpected end of file, expected '{word} <count>'")
        lineno, tok = rows[pos]
        if len(tok) != 2 or tok[0] != word:
            raise MeshError(f"line {lineno}: expected '{word} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"line {lineno}: bad count {tok[1]!r}") from None
        pos += 1
        return count

    def block(count, width, conv):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(rows):
                raise MeshError("unexpected end of file")
            lineno, tok = rows[pos]
            if len(tok) != width:
                raise MeshError(f"line {lineno}: expected {width} values, got {len(tok)}")
            try:
                out.append([conv(t) for t in tok])
            except ValueError:
                raise MeshError(f"line {lineno}: cannot parse {' '.join(tok)!r}") from None
            pos += 1
        return out

    nn = header("nodes")
    verts = block(nn, 2, float)
    ne = header("quads")
    quads = block(ne, 4, int)
    if pos != len(rows):
        raise MeshError(f"line {rows[pos][0]}: trailing content")
    return CoarseMesh(np.array(verts, dtype=float).reshape(-1, 2), np.array(quads, dtype=np.int64).reshape(-1, 4)).validate()


def write_mesh(mesh: CoarseMesh, path) -> None:
    out = [f"nodes {mesh.n_vertices}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(f"quads {mesh.n_elements}")
    out += [" ".join(str(int(v)) for v in q) for q in mesh.elements]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


@dataclass
class RefinedTopology:
    """Low-order refinement of a coarse mesh at a symmetric 1D point set.

    Global node ids: coarse vertices first (id = vertex id), then the
    ``p - 1`` interior points of each edge ordered from the lower to the
    higher vertex id, then the ``(p - 1)^2`` interior points per element.
    """

    parent: CoarseMesh
    p: int
    nodes1d: np.ndarray
    node_coords: np.ndarray
    elem_node_ids: np.ndarray  # (ne, p+1, p+1), indexed [i_xi, j_eta]
    boundary_nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def subcells(self) -> np.ndarray:
        """Counterclockwise node ids of every subcell, shape (ne * p * p, 4)."""
        ids = self.elem_node_ids
        sc = np.stack([ids[:, :-1, :-1], ids[:, 1:, :-1], ids[:, 1:, 1:], ids[:, :-1, 1:]], axis=-1)
        return sc.reshape(-1, 4)

    @property
    def subcell_parent(self) -> np.ndarray:
        return np.repeat(np.arange(self.parent.n_elements), self.p * self.p)

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return mask

    def subcell_ref_corners(self) -> np.ndarray:
        """Reference-coordinate corners of each subcell within its parent, (ne*p*p, 4, 2)."""
        t = self.nodes1d
        a, b = t[:-1], t[1:]
        A, Bj = np.meshgrid(np.arange(self.p), np.arange(self.p), indexing="ij")
        x0, x1 = a[A], b[A]
        y0, y1 = a[Bj], b[Bj]
        c = np.stack(
            [np.stack([x0, y0], -1), np.stack([x1, y0], -1), np.stack([x1, y1], -1), np.stack([x0, y1], -1)], axis=-2
        ).reshape(-1, 4, 2)
        return np.tile(c, (self.parent.n_elements, 1, 1))


def edge_position(flip: np.ndarray, s: np.ndarray, p: int) -> np.ndarray:
    """Index along the global edge direction of local tangential index ``s`` (1..p-1)."""
    return np.where(flip, p - s, s) - 1


def lor_refine(mesh: CoarseMesh, p: int, nodes1d: np.ndarray | None = None) -> RefinedTopology:
    """Refine every element at the tensor grid of ``nodes1d`` (default: GLL nodes of degree ``p``)."""
    if p < 1:
        raise MeshError(f"refinement degree must be >= 1, got {p}")
    t = gll_rule(p)[0] if nodes1d is None else np.asarray(nodes1d, dtype=float)
    if t.size != p + 1 or t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
        raise MeshError("1D refinement points must be increasing from 0 to 1 with p + 1 entries")
    if np.max(np.abs(t + t[::-1] - 1.0)) > 1e-13:
        raise MeshError("1D refinement points must be symmetric about 1/2")
    nv, ned, nel = mesh.n_vertices, mesh.n_edges, mesh.n_elements
    m = p - 1
    n_nodes = nv + ned * m + nel * m * m
    ids = np.empty((nel, p + 1, p + 1), dtype=np.int64)
    el = mesh.elements
    ids[:, 0, 0], ids[:, p, 0], ids[:, p, p], ids[:, 0, p] = el[:, 0], el[:, 1], el[:, 2], el[:, 3]
    if m > 0:
        s = np.arange(1, p)
        base = nv + mesh.elem_edges * m  # (nel, 4)
        flip = mesh.elem_edge_flip
        ids[:, 1:p, 0] = base[:, [0]] + edge_position(flip[:, [0]], s, p)
        ids[:, p, 1:p] = base[:, [1]] + edge_position(flip[:, [1]], s, p)
        ids[:, 1:p, p] = base[:, [2]] + edge_position(flip[:, [2]], s, p)
        ids[:, 0, 1:p] = base[:, [3]] + edge_position(flip[:, [3]], s, p)
        ids[:, 1:p, 1:p] = (nv + ned * m + np.arange(nel)[:, None, None] * m * m
                            + np.arange(m)[:, None] * m + np.arange(m)[None, :])
    coords = np.empty((n_nodes, 2))
    coords[:nv] = mesh.vertices
    if m > 0:
        va, vb = mesh.vertices[mesh.edges[:, 0]], mesh.vertices[mesh.edges[:, 1]]
        s = t[1:p]
        edge_pts = va[:, None, :] * (1 - s)[None, :, None] + vb[:, None, :] * s[None, :, None]
        coords[nv: nv + ned * m] = edge_pts.reshape(-1, 2)
        XI, ETA = np.meshgrid(t[1:p], t[1:p], indexing="ij")
        coords[nv + ned * m:] = map_points(mesh.corners, XI, ETA).reshape(-1, 2)
    bnd_edges = mesh.boundary_edges
    bnodes = [mesh.edges[bnd_edges].ravel()]
    if m > 0:
        bnodes.append((nv + bnd_edges[:, None] * m + np.arange(m)[None, :]).ravel())
    boundary = np.unique(np.concatenate(bnodes))
    return RefinedTopology(mesh, p, t, coords, ids, boundary)
