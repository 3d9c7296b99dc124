"""Sparse low-order refined operators: bilinear K_h on the Gauss-Lobatto refined
mesh, the coarse bilinear K_0, and the coarse-to-fine interpolation P_0."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import gauss_rule
from .mesh import CoarseMesh, RefinedTopology, bilinear_shape
from .highop import CoefficientField
from .sparse import as_csr, eliminate_dirichlet


@dataclass
class AssembledSystem:
    """Assembled bilinear operator with its boundary mask (no constraints applied to ``K``)."""

    K: sp.csr_matrix
    boundary: np.ndarray
    M: sp.csr_matrix | None = None

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def free_mask(self) -> np.ndarray:
        m = np.ones(self.n, dtype=bool)
        m[self.boundary] = False
        return m

    def eliminated(self) -> sp.csr_matrix:
        """``K`` with constrained rows and columns replaced by identity."""
        return eliminate_dirichlet(self.K, self.boundary)


def _q1_kernels(cell_xy: np.ndarray, coeff: CoefficientField, parent: np.ndarray, with_mass: bool):
    """Local 4x4 stiffness (and mass) of bilinear cells via 2x2 Gauss quadrature."""
    g, w = gauss_rule(2)
    xi, eta = np.meshgrid(g, g, indexing="ij")
    xi, eta, wq = xi.ravel(), eta.ravel(), np.outer(w, w).ravel()
    N, dxi, deta = bilinear_shape(xi, eta)  # each (4, 4): point, vertex
    x = np.einsum("qa,cad->cqd", N, cell_xy)
    jx = np.einsum("qa,cad->cqd", dxi, cell_xy)
    je = np.einsum("qa,cad->cqd", deta, cell_xy)
    det = jx[..., 0] * je[..., 1] - jx[..., 1] * je[..., 0]
    bad = np.flatnonzero(np.any(det <= 0, axis=1))
    if bad.size:
        c = int(bad[0])
        raise ValueError(f"degenerate subcell {c} in element {int(parent[c])}")
    # physical gradients: grad N = J^{-T} (dN/dxi, dN/deta)
    gx = (je[..., 1, None] * dxi[None] - jx[..., 1, None] * deta[None]) / det[..., None]
    gy = (-je[..., 0, None] * dxi[None] + jx[..., 0, None] * deta[None]) / det[..., None]
    b = coeff(x[..., 0], x[..., 1], np.broadcast_to(parent[:, None], det.shape))
    if np.any(b <= 0):
        raise ValueError("coefficient must be positive at subcell quadrature points")
    wt = wq[None] * det
    K = np.einsum("cq,cqa,cqb->cab", wt * b, gx, gx) + np.einsum("cq,cqa,cqb->cab", wt * b, gy, gy)
    M = np.einsum("cq,qa,qb->cab", wt, N, N) if with_mass else None
    return K, M


def _assemble(cells: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return as_csr(A)


def assemble_Kh(topo: RefinedTopology, coeff: CoefficientField | None = None,
                with_mass: bool = False) -> AssembledSystem:
    """Bilinear stiffness (and optionally mass) on the refined mesh, sharing CG node numbering."""
    coeff = coeff if coeff is not None else CoefficientField()
    cells = topo.subcells
    K, M = _q1_kernels(topo.node_coords[cells], coeff, topo.subcell_parent, with_mass)
    n = topo.n_nodes
    return AssembledSystem(_assemble(cells, K, n), topo.boundary_nodes,
                           _assemble(cells, M, n) if with_mass else None)


def assemble_coarse(mesh: CoarseMesh, coeff: CoefficientField | None = None,
                    with_mass: bool = False) -> AssembledSystem:
    """Bilinear stiffness on the coarse mesh vertices (the p=1 space)."""
    coeff = coeff if coeff is not None else CoefficientField()
    cells = mesh.elements
    K, M = _q1_kernels(mesh.corners, coeff, np.arange(mesh.n_elements), with_mass)
    n = mesh.n_vertices
    return AssembledSystem(_assemble(cells, K, n), mesh.boundary_vertices,
                           _assemble(cells, M, n) if with_mass else None)


def coarse_injection(topo: RefinedTopology) -> sp.csr_matrix:
    """Interpolation ``P_0`` from coarse vertex values to refined node values."""
    x = topo.nodes1d
    XI, ETA = np.meshgrid(x, x, indexing="ij")
    W = bilinear_shape(XI, ETA)[0]  # (n, n, 4)
    ids = topo.elem_node_ids
    ne = ids.shape[0]
    gid = ids.reshape(ne, -1)
    # keep the first occurrence of each node; shared nodes have identical rows
    _, first = np.unique(gid.ravel(), return_index=True)
    e_of, loc = np.divmod(first, gid.shape[1])
    verts = topo.parent.elements[e_of]  # (n_nodes, 4)
    w = W.reshape(-1, 4)[loc]
    rows = np.repeat(np.arange(topo.n_nodes), 4)
    P = sp.coo_matrix((w.ravel(), (rows, verts.ravel())), shape=(topo.n_nodes, topo.parent.n_vertices)).tocsr()
    P.data[np.abs(P.data) < 1e-15] = 0.0
    P.eliminate_zeros()
    return as_csr(P)


def spectral_gap(Kp_apply, Kh: sp.spmatrix, free: np.ndarray, trials: int = 100, seed: int = 0,
                 Mp_apply=None, Mh: sp.spmatrix | None = None) -> dict:
    """Extreme Rayleigh ratios of ``(K_p, K_h)`` (and ``(M_p, M_h)``) over random free vectors."""
    rng = np.random.default_rng(seed)
    n = Kh.shape[0]
    free = np.asarray(free, dtype=bool)
    ratios, mratios = [], []
    while len(ratios) < trials:
        v = np.zeros(n)
        v[free] = rng.standard_normal(int(free.sum()))
        den = v @ (Kh @ v)
        if not den > 1e-300:
            continue
        ratios.append(float(v @ Kp_apply(v)) / den)
        if Mp_apply is not None and Mh is not None:
            mratios.append(float(v @ Mp_apply(v)) / float(v @ (Mh @ v)))
    out = {"rmin": min(ratios), "rmax": max(ratios)}
    if mratios:
        out["mass_rmin"], out["mass_rmax"] = min(mratios), max(mratios)
    return out


def dump_coo(A: sp.spmatrix, path) -> None:
    """Write ``i j value`` lines (0-based) for offline inspection."""
    C = A.tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v:.17g}\n")
