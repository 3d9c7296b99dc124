"""Overlapping additive Schwarz preconditioners built from vertex patches.

Each patch is the union of the coarse elements touching a set of coarse
vertices; its local problem lives on the refined nodes strictly inside the
patch and is solved approximately by one multigrid V-cycle. All patches share
one stacked hierarchy. With several patches a coarse bilinear correction is
added; with a single patch the coarse mesh is the bottom of the V-cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .highop import HighOrderOperator
from .lor import AssembledSystem, coarse_injection
from .mesh import CoarseMesh, RefinedTopology
from .multigrid import GlobalLevels, MGHierarchy, build_hierarchy, patch_free_nodes
from .sparse import as_csr, chol_solve, cholesky

STRATEGIES = ("single", "vertex", "subdomains", "seeded")


@dataclass
class PatchDecomposition:
    mesh: CoarseMesh
    vertex_sets: list[np.ndarray]
    elements: list[np.ndarray]
    strategy: str = "vertex"
    layers: int = 0

    @property
    def n_patches(self) -> int:
        return len(self.elements)

    def element_multiplicity(self) -> np.ndarray:
        return np.bincount(np.concatenate(self.elements), minlength=self.mesh.n_elements)


def _vertex_element_incidence(mesh: CoarseMesh) -> sp.csr_matrix:
    ne = mesh.n_elements
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(ne), 4)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(mesh.n_vertices, ne))


def _element_adjacency(mesh: CoarseMesh) -> sp.csr_matrix:
    inner = mesh.edge_elems[mesh.edge_elems[:, 1] >= 0]
    a, b = inner[:, 0], inner[:, 1]
    ne = mesh.n_elements
    A = sp.csr_matrix((np.ones(2 * a.size), (np.r_[a, b], np.r_[b, a])), shape=(ne, ne))
    return A


def _rcb(coords: np.ndarray, ids: np.ndarray, k: int) -> list[np.ndarray]:
    """Recursive coordinate bisection into ``k`` parts of near-equal size."""
    if k <= 1 or ids.size <= 1:
        return [ids]
    pts = coords[ids]
    axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
    order = ids[np.lexsort((ids, pts[:, 1 - axis], pts[:, axis]))]
    k1 = k // 2
    cut = int(round(ids.size * k1 / k))
    return _rcb(coords, order[:cut], k1) + _rcb(coords, order[cut:], k - k1)


def partition_vertices(mesh: CoarseMesh, strategy: str = "vertex", k: int | None = None,
                       sets: list | None = None) -> PatchDecomposition:
    """Split the coarse vertices into disjoint sets and form the element patches."""
    nv = mesh.n_vertices
    if strategy == "single":
        vsets = [np.arange(nv)]
    elif strategy == "vertex":
        vsets = [np.array([v]) for v in range(nv)]
    elif strategy == "subdomains":
        if k is None or k < 1:
            raise ValueError("subdomains strategy needs k >= 1")
        vsets = [np.sort(s) for s in _rcb(mesh.vertices, np.arange(nv), min(k, nv))]
    elif strategy == "seeded":
        if sets is None:
            raise ValueError("seeded strategy needs vertex sets")
        vsets = [np.unique(np.asarray(s, dtype=np.int64)) for s in sets]
        allv = np.concatenate(vsets) if vsets else np.empty(0, dtype=np.int64)
        if allv.size != np.unique(allv).size:
            raise ValueError("seeded vertex sets overlap")
        if allv.size != nv or np.any(np.sort(allv) != np.arange(nv)):
            raise ValueError("seeded vertex sets do not cover every vertex")
    else:
        raise ValueError(f"unknown patch strategy {strategy!r}")
    inc = _vertex_element_incidence(mesh)
    elems = [np.unique(inc[s].indices) for s in vsets]
    return PatchDecomposition(mesh, vsets, elems, strategy, 0)


def extend_patches(decomp: PatchDecomposition, layers: int, aspect_trigger: float | None = None) -> PatchDecomposition:
    """Grow patches by ``layers`` rings of edge-neighbours.

    With ``aspect_trigger`` only patches containing an element whose aspect
    ratio exceeds the trigger are grown.
    """
    if layers < 0:
        raise ValueError("layers must be non-negative")
    mesh = decomp.mesh
    if layers == 0:
        return PatchDecomposition(mesh, decomp.vertex_sets, decomp.elements, decomp.strategy, decomp.layers)
    adj = _element_adjacency(mesh)
    aspect = mesh.aspect_ratios() if aspect_trigger is not None else None
    out = []
    for el in decomp.elements:
        if aspect is not None and not np.any(aspect[el] > aspect_trigger):
            out.append(el)
            continue
        mask = np.zeros(mesh.n_elements, dtype=bool)
        mask[el] = True
        for _ in range(layers):
            mask |= (adj @ mask.astype(float)) > 0
        out.append(np.flatnonzero(mask))
    return PatchDecomposition(mesh, decomp.vertex_sets, out, decomp.strategy, decomp.layers + layers)


class SchwarzPreconditioner:
    """Additive Schwarz ``B = P0 K0^{-1} P0^T + sum_j R_j^T V_j R_j`` on CG node vectors.

    ``local_solver`` is ``"mg"`` (one V-cycle per patch) or ``"exact"``
    (Cholesky on each patch). Constrained dofs are passed through unchanged.
    """

    def __init__(self, decomp: PatchDecomposition, topo: RefinedTopology, Kh: AssembledSystem,
                 K0: AssembledSystem | None = None, smoother: str = "ilu-mdf", symmetrize: bool = True,
                 local_solver: str = "mg", coarse: bool | None = None):
        self.decomp = decomp
        self.topo = topo
        self.n = topo.n_nodes
        self.boundary = topo.boundary_nodes
        counts = np.bincount(topo.elem_node_ids.ravel(), minlength=self.n)
        free_sets = [patch_free_nodes(topo, e, counts) for e in decomp.elements]
        self.patch_sizes = [f.size for f in free_sets]
        if local_solver == "mg":
            self.hierarchy: MGHierarchy | None = build_hierarchy(
                topo, Kh.K, decomp.elements, smoother, symmetrize, GlobalLevels(topo), free_sets)
            self.stack_nodes = self.hierarchy.levels[0].nodes
            self._local = self.hierarchy.vcycle
        elif local_solver == "exact":
            self.hierarchy = None
            self.stack_nodes = np.concatenate(free_sets)
            K = as_csr(Kh.K)
            blocks = [K[f][:, f] for f in free_sets]
            F = cholesky(sp.block_diag(blocks, format="csr"))
            self._local = lambda r: chol_solve(F, r)
        else:
            raise ValueError(f"unknown local solver {local_solver!r}")
        self.local_solver = local_solver
        self.use_coarse = decomp.n_patches > 1 if coarse is None else coarse
        self.coarse_factor = None
        if self.use_coarse:
            if K0 is None:
                raise ValueError("multi-patch preconditioner needs the coarse operator")
            fv = np.flatnonzero(K0.free_mask)
            fn = np.flatnonzero(topo.free_mask)
            P0 = coarse_injection(topo)
            self.P0 = as_csr(P0[fn][:, fv])
            self.free_nodes = fn
            self.coarse_factor = cholesky(as_csr(K0.K)[fv][:, fv])
        self.info = {"patches": decomp.n_patches, "strategy": decomp.strategy, "layers": decomp.layers,
                     "local_solver": local_solver, "smoother": smoother, "symmetrize": symmetrize,
                     "coarse_term": bool(self.use_coarse), "coarse_solver": "sparse-cholesky",
                     "stacked_dofs": int(self.stack_nodes.size)}
        if self.hierarchy is not None:
            self.info.update({"levels": self.hierarchy.n_levels})

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError(f"vector has shape {r.shape}, expected ({self.n},)")
        zs = self._local(r[self.stack_nodes])
        z = np.bincount(self.stack_nodes, weights=zs, minlength=self.n)
        if self.use_coarse:
            rc = self.P0.T @ r[self.free_nodes]
            z[self.free_nodes] += self.P0 @ chol_solve(self.coarse_factor, rc)
        z[self.boundary] = r[self.boundary]
        return z

    __call__ = apply


def build_schwarz(decomp: PatchDecomposition, topo: RefinedTopology, Kh: AssembledSystem,
                  K0: AssembledSystem | None = None, smoother: str = "ilu-mdf", symmetrize: bool = True,
                  local_solver: str = "mg") -> SchwarzPreconditioner:
    return SchwarzPreconditioner(decomp, topo, Kh, K0, smoother, symmetrize, local_solver)


def apply_B(B, r: np.ndarray) -> np.ndarray:
    return B.apply(r)


@dataclass
class DGSchwarzPreconditioner:
    """``B_DG r = E B_conf(E^T r) + S_B D_B^{-1} S_B^T r``."""

    conf: SchwarzPreconditioner
    E: sp.csr_matrix
    SB: np.ndarray
    dB: np.ndarray
    info: dict = field(default_factory=dict)

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.E.shape[0],):
            raise ValueError(f"vector has shape {r.shape}, expected ({self.E.shape[0]},)")
        z = self.E @ self.conf.apply(self.E.T @ r)
        z[self.SB] += r[self.SB] / self.dB
        return z

    __call__ = apply


def build_dg_schwarz(conf: SchwarzPreconditioner, op: HighOrderOperator,
                     diag: np.ndarray | None = None) -> DGSchwarzPreconditioner:
    """Two-space DG preconditioner; ``diag`` defaults to the probed DG diagonal at boundary nodes."""
    E = op.conforming_injection(free_only=True)
    SB = op.element_boundary_dofs()
    if diag is None:
        n2 = (op.p + 1) ** 2
        diag = op.dg_diagonal(np.unique(SB % n2))
    dB = np.asarray(diag)[SB]
    if np.any(dB <= 0):
        raise ValueError("nonpositive DG diagonal entry: penalty below the coercivity threshold")
    return DGSchwarzPreconditioner(conf, E, SB, dB, {"dg_diagonal": "probing", "dg_space_split": "boundary-jacobi"})
