"""Element-structured geometric multigrid on (patches of) the low-order refined mesh.

Levels are obtained by thinning the 1D refinement points of every element,
prolongation is tensor-product linear interpolation in reference
coordinates, and coarse operators are Galerkin products. Several patches can
share one hierarchy: their level operators are stacked block-diagonally, so
orderings and factorizations act patch by patch.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import CoarseMesh, MeshError, RefinedTopology, cartesian_mesh, lor_refine
from .sparse import (ILUFactorization, Ordering, ZeroPivotError, _diag_positions, _tri_lower, _tri_upper,
                     as_csr, chol_solve, cholesky, ilu0, ilu_apply, make_ordering, order_line, pcg, rap)

SMOOTHERS = ("jacobi", "gauss-seidel", "ilu-natural", "ilu-rcm", "ilu-mdf", "ilu-line")
_ALIASES = {"mdf": "ilu-mdf", "rcm": "ilu-rcm", "natural": "ilu-natural", "line": "ilu-line",
            "ilu": "ilu-mdf", "gs": "gauss-seidel"}
JACOBI_POWER_ITERS = 30


def normalize_smoother(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in SMOOTHERS + ("none",):
        raise ValueError(f"unknown smoother {kind!r}")
    return kind


def coarsen_1d(nodes) -> np.ndarray:
    """Indices kept after deleting every other interior point, starting with the leftmost."""
    n = len(nodes)
    if n < 2:
        raise ValueError("need at least the two endpoints")
    interior = np.arange(1, n - 1)
    return np.concatenate(([0], interior[1::2], [n - 1])).astype(np.int64)


def coarsening_chain(nodes) -> list[np.ndarray]:
    """Index subsets of ``nodes`` for every level, finest first, ending at the endpoints."""
    nodes = np.asarray(nodes)
    chain = [np.arange(nodes.size)]
    while chain[-1].size > 2:
        cur = chain[-1]
        chain.append(cur[coarsen_1d(nodes[cur])])
    return chain


# ----------------------------------------------------------- orientation
def chord_orientation(mesh: CoarseMesh) -> np.ndarray:
    """Per element and reference direction, whether to mirror the thinning pattern.

    Neighbouring elements must delete the same points on their shared edge. A
    bit ``r[e, d]`` mirrors the pattern in direction ``d`` of element ``e``;
    the bits are propagated across edges so that the pattern, read in the
    global edge direction, agrees on both sides.
    """
    ne = mesh.n_elements
    r = -np.ones((ne, 2), dtype=np.int64)
    fdir = np.array([0, 1, 0, 1])
    adj: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for ed in np.flatnonzero(mesh.edge_elems[:, 1] >= 0):
        (ea, eb), (fa, fb) = mesh.edge_elems[ed], mesh.edge_faces[ed]
        par = int(mesh.elem_edge_flip[ea, fa]) ^ int(mesh.elem_edge_flip[eb, fb])
        a, b = (int(ea), int(fdir[fa])), (int(eb), int(fdir[fb]))
        adj.setdefault(a, []).append((b[0], b[1], par))
        adj.setdefault(b, []).append((a[0], a[1], par))
    for e in range(ne):
        for d in range(2):
            if r[e, d] >= 0:
                continue
            r[e, d] = 0
            queue = deque([(e, d)])
            while queue:
                u = queue.popleft()
                for ve, vd, par in adj.get(u, []):
                    want = r[u] ^ par
                    if r[ve, vd] < 0:
                        r[ve, vd] = want
                        queue.append((ve, vd))
                    elif r[ve, vd] != want:
                        raise MeshError("mesh chords cannot be oriented consistently")
    return r.astype(bool)


def _level_local(chain_idx: np.ndarray, p: int, mirror: np.ndarray) -> np.ndarray:
    """Kept 1D indices per element for one direction, (ne, k)."""
    base = np.sort(chain_idx)
    return np.where(mirror[:, None], np.sort(p - base)[None, :], base[None, :])


def _prolong_1d(x: np.ndarray, fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    """Linear interpolation weights from coarse indices to fine indices, (len(fine), len(coarse))."""
    xf, xc = x[fine], x[coarse]
    W = np.zeros((fine.size, coarse.size))
    seg = np.clip(np.searchsorted(xc, xf, side="right") - 1, 0, xc.size - 2)
    t = (xf - xc[seg]) / (xc[seg + 1] - xc[seg])
    rows = np.arange(fine.size)
    W[rows, seg] = 1.0 - t
    W[rows, seg + 1] += t
    W[np.abs(W) < 1e-15] = 0.0
    return W


class GlobalLevels:
    """Level node sets and prolongations of the whole refined mesh, indexed by fine node id."""

    def __init__(self, topo: RefinedTopology):
        self.topo = topo
        p = topo.p
        x = topo.nodes1d
        chain = coarsening_chain(x)
        self.chain = chain
        symmetric = all(np.array_equal(np.sort(p - c), c) for c in chain)
        mesh = topo.parent
        self.mirror = np.zeros((mesh.n_elements, 2), dtype=bool) if symmetric else chord_orientation(mesh)
        ids = topo.elem_node_ids
        ne = ids.shape[0]
        self.local = []  # per level: (kx (ne, k), ky (ne, k))
        self.nodes = []
        for c in chain:
            kx = _level_local(c, p, self.mirror[:, 0])
            ky = _level_local(c, p, self.mirror[:, 1])
            self.local.append((kx, ky))
            g = ids[np.arange(ne)[:, None, None], kx[:, :, None], ky[:, None, :]]
            self.nodes.append(np.unique(g))
        self.P = []
        n = topo.n_nodes
        for lev in range(len(chain) - 1):
            self.P.append(self._prolongation(lev, n))

    @property
    def n_levels(self) -> int:
        return len(self.chain)

    def _prolongation(self, lev: int, n: int) -> sp.csr_matrix:
        topo, x = self.topo, self.topo.nodes1d
        ids = topo.elem_node_ids
        (fx, fy), (cx, cy) = self.local[lev], self.local[lev + 1]
        rows, cols, vals = [], [], []
        # elements share the same pattern up to mirroring; cache 1D weights per pattern
        cache = {}
        for e in range(ids.shape[0]):
            key = (self.mirror[e, 0], self.mirror[e, 1])
            if key not in cache:
                Wx = _prolong_1d(x, fx[e], cx[e])
                Wy = _prolong_1d(x, fy[e], cy[e])
                W = np.einsum("ac,bd->abcd", Wx, Wy).reshape(fx.shape[1] * fy.shape[1], -1)
                r, c = np.nonzero(W)
                cache[key] = (r, c, W[r, c])
            r, c, w = cache[key]
            fid = ids[e][fx[e][:, None], fy[e][None, :]].ravel()
            cid = ids[e][cx[e][:, None], cy[e][None, :]].ravel()
            rows.append(fid[r])
            cols.append(cid[c])
            vals.append(w)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        # shared nodes receive identical rows from every element; keep one copy
        key = rows * n + cols
        _, first = np.unique(key, return_index=True)
        return sp.csr_matrix((vals[first], (rows[first], cols[first])), shape=(n, n))


# -------------------------------------------------------------- smoothers
class JacobiSmoother:
    def __init__(self, A: sp.csr_matrix, seed: int = 0):
        self.d = A.diagonal()
        if np.any(self.d <= 0):
            raise ValueError("Jacobi smoother needs a positive diagonal")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(A.shape[0])
        lam = 1.0
        for _ in range(JACOBI_POWER_ITERS):
            w = (A @ v) / self.d
            lam = float(np.linalg.norm(w) / np.linalg.norm(v))
            v = w / np.linalg.norm(w)
        self.lam_max = lam
        self.omega = 4.0 / (3.0 * lam)

    def apply(self, r, A=None):
        return self.omega * r / self.d

    apply_adjoint = apply


class GaussSeidelSmoother:
    def __init__(self, A: sp.csr_matrix):
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        self.data = A.data
        self.diag = _diag_positions(self.indptr, self.indices)

    def apply(self, r, A=None):
        return _tri_lower(self.indptr, self.indices, self.data, self.diag, np.ascontiguousarray(r))

    def apply_adjoint(self, r, A=None):
        return _tri_upper(self.indptr, self.indices, self.data, self.diag, np.ascontiguousarray(r))


class ILUSmoother:
    def __init__(self, F: ILUFactorization):
        self.F = F

    def apply(self, r, A=None):
        return ilu_apply(self.F, r)

    def apply_adjoint(self, r, A=None):
        return ilu_apply(self.F, r, adjoint=True)


class LineILUSmoother:
    """x-line ILU followed by y-line ILU; the adjoint runs the transposes in reverse."""

    def __init__(self, Fx: ILUFactorization, Fy: ILUFactorization):
        self.Fx, self.Fy = Fx, Fy

    def apply(self, r, A):
        z = ilu_apply(self.Fx, r)
        return z + ilu_apply(self.Fy, r - A @ z)

    def apply_adjoint(self, r, A):
        z = ilu_apply(self.Fy, r, adjoint=True)
        return z + ilu_apply(self.Fx, r - A @ z, adjoint=True)


class NoSmoother:
    def apply(self, r, A=None):
        return np.zeros_like(r)

    apply_adjoint = apply


def _block_ordering(A: sp.csr_matrix, kind: str, blocks: np.ndarray, coords: np.ndarray, direction: str) -> Ordering:
    if kind != "line":
        return make_ordering(A, kind)
    perm = []
    starts = np.flatnonzero(np.r_[True, blocks[1:] != blocks[:-1]])
    ends = np.r_[starts[1:], blocks.size]
    for s, e in zip(starts, ends):
        perm.append(s + order_line(coords[s:e], direction).perm)
    return Ordering("line", np.concatenate(perm))


def make_smoother(kind: str, A: sp.csr_matrix, blocks: np.ndarray | None = None,
                  coords: np.ndarray | None = None):
    kind = normalize_smoother(kind)
    if kind == "none":
        return NoSmoother()
    if kind == "jacobi":
        return JacobiSmoother(A)
    if kind == "gauss-seidel":
        return GaussSeidelSmoother(A)
    order = kind.split("-", 1)[1]
    blocks = np.zeros(A.shape[0], dtype=np.int64) if blocks is None else blocks
    if order == "line":
        Fx = ilu0(A, _block_ordering(A, "line", blocks, coords, "x"))
        Fy = ilu0(A, _block_ordering(A, "line", blocks, coords, "y"))
        return LineILUSmoother(Fx, Fy)
    return ILUSmoother(ilu0(A, _block_ordering(A, order, blocks, coords, "auto")))


# -------------------------------------------------------------- hierarchy
@dataclass
class Level:
    A: sp.csr_matrix
    nodes: np.ndarray  # fine-mesh node id of every stacked entry
    patch: np.ndarray  # patch id of every stacked entry
    P: sp.csr_matrix | None = None  # prolongation from the next level
    smoother: object = None


@dataclass
class MGHierarchy:
    levels: list[Level]
    coarse: object
    smoother_kind: str
    symmetrize: bool = True
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.levels[0].A.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def vcycle(self, r: np.ndarray, level: int = 0) -> np.ndarray:
        """One V-cycle for ``A_level x = r`` from a zero initial guess."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.levels[level].A.shape[0],):
            raise ValueError("residual size does not match the level")
        if level == len(self.levels) - 1:
            return chol_solve(self.coarse, r)
        L = self.levels[level]
        A, S = L.A, L.smoother
        x = S.apply(r, A)
        x = x + L.P @ self.vcycle(L.P.T @ (r - A @ x), level + 1)
        res = r - A @ x
        x = x + (S.apply_adjoint(res, A) if self.symmetrize else S.apply(res, A))
        return x


def patch_free_nodes(topo: RefinedTopology, elems: np.ndarray, counts: np.ndarray | None = None) -> np.ndarray:
    """Nodes whose every containing element lies in ``elems``, minus the Dirichlet boundary."""
    ids = topo.elem_node_ids
    if counts is None:
        counts = np.bincount(ids.ravel(), minlength=topo.n_nodes)
    u, c = np.unique(ids[np.asarray(elems)].ravel(), return_counts=True)
    keep = (c == counts[u]) & topo.free_mask[u]
    return u[keep]


def _stacked_submatrix(M: sp.csr_matrix, row_sets: list[np.ndarray], col_sets: list[np.ndarray]) -> sp.csr_matrix:
    M = sp.csr_matrix(M)
    blocks = [M[r][:, c] for r, c in zip(row_sets, col_sets)]
    return as_csr(sp.block_diag(blocks, format="csr")) if len(blocks) > 1 else as_csr(blocks[0])


def build_hierarchy(topo: RefinedTopology, K: sp.spmatrix, patches: list[np.ndarray] | None = None,
                    smoother: str = "ilu-mdf", symmetrize: bool = True,
                    glevels: GlobalLevels | None = None, free_sets: list[np.ndarray] | None = None) -> MGHierarchy:
    """Hierarchy for the patch problems of ``K`` (unconstrained K_h on ``topo``).

    ``patches`` lists coarse element sets (default: one patch with every
    element). Each patch keeps its free nodes (homogeneous Dirichlet on the
    patch boundary and on the domain boundary).
    """
    smoother = normalize_smoother(smoother)
    if patches is None:
        patches = [np.arange(topo.parent.n_elements)]
    gl = glevels if glevels is not None else GlobalLevels(topo)
    if free_sets is None:
        counts = np.bincount(topo.elem_node_ids.ravel(), minlength=topo.n_nodes)
        free_sets = [patch_free_nodes(topo, e, counts) for e in patches]
    K = as_csr(K)
    sets = [free_sets]
    for lev in range(1, gl.n_levels):
        sets.append([np.intersect1d(f, gl.nodes[lev], assume_unique=True) for f in free_sets])
    levels = []
    A = _stacked_submatrix(K, sets[0], sets[0])
    for lev in range(gl.n_levels):
        nodes = np.concatenate(sets[lev]) if sets[lev] else np.empty(0, dtype=np.int64)
        patch = np.repeat(np.arange(len(sets[lev])), [s.size for s in sets[lev]])
        L = Level(A, nodes, patch)
        levels.append(L)
        if lev == gl.n_levels - 1:
            break
        L.P = _stacked_submatrix(gl.P[lev], sets[lev], sets[lev + 1])
        L.P.eliminate_zeros()
        try:
            L.smoother = make_smoother(smoother, A, patch, topo.node_coords[nodes])
        except ZeroPivotError as exc:
            raise ZeroPivotError(exc.row, lev) from exc
        A = rap(L.P, A)
    coarse = cholesky(levels[-1].A)
    info = {"levels": gl.n_levels, "smoother": smoother, "symmetrize": symmetrize,
            "coarse_operator": "galerkin", "ilu_variant": "ikj",
            "level_sizes": [lv.A.shape[0] for lv in levels]}
    return MGHierarchy(levels, coarse, smoother, symmetrize, info)


# ---------------------------------------------------------- smoother study
REFINE_POINTS = (4, 8, 16, 32, 64)


def study_topology(points: int, mode: str) -> RefinedTopology:
    """2x2 Cartesian coarse grid refined with ``points`` 1D points per element."""
    p = points - 1
    mesh = cartesian_mesh(2, 2)
    if mode == "uniform":
        return lor_refine(mesh, p, np.linspace(0.0, 1.0, p + 1))
    if mode in ("gauss-lobatto", "gl"):
        return lor_refine(mesh, p)
    raise ValueError(f"unknown refinement mode {mode!r}")


def smoother_study_run(points: int, smoother: str, mode: str, tol: float = 1e-12, seed: int = 0,
                       maxit: int = 2000) -> int:
    from .lor import assemble_Kh

    topo = study_topology(points, mode)
    K = assemble_Kh(topo).K
    H = build_hierarchy(topo, K, smoother=smoother)
    A = H.levels[0].A
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(A.shape[0])
    _, rep = pcg(lambda v: A @ v, H.vcycle, b, tol=tol, maxit=maxit)
    return rep.iterations if rep.converged else -rep.iterations


def smoother_study(smoothers=SMOOTHERS, modes=("uniform", "gauss-lobatto"), points=REFINE_POINTS,
                   tol: float = 1e-12, seed: int = 0) -> tuple[list[dict], str]:
    """Iteration counts of MG-preconditioned CG; returns rows and CSV text."""
    rows = []
    for mode in modes:
        for sm in smoothers:
            for n in points:
                rows.append({"refine_points": n, "smoother": sm, "refinement_mode": mode,
                             "iterations": smoother_study_run(n, sm, mode, tol, seed)})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["refine_points", "smoother", "refinement_mode", "iterations"])
    w.writeheader()
    w.writerows(rows)
    return rows, buf.getvalue()
