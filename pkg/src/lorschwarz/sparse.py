"""Sparse kernels: CSR helpers, Galerkin triple products, PCG, ILU(0) with
orderings (natural, RCM, MDF, line) and a sparse direct SPD solver.

Matrices are ``scipy.sparse.csr_matrix`` in canonical form (sorted column
indices, no duplicates). The ILU and MDF loops are compiled with numba.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from .report import SolveReport, estimate_condition

ORDERINGS = ("natural", "rcm", "mdf", "line")


class ZeroPivotError(ArithmeticError):
    """ILU(0) met a zero pivot; ``row`` is the index in the permuted system."""

    def __init__(self, row: int, level: int | None = None):
        self.row = row
        self.level = level
        where = f" on level {level}" if level is not None else ""
        super().__init__(f"zero pivot at permuted row {row}{where}")


class NotSPDError(ArithmeticError):
    pass


# ---------------------------------------------------------------- CSR helpers
def as_csr(A) -> sp.csr_matrix:
    """Canonical float CSR copy: duplicates summed, indices sorted."""
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_canonical(A: sp.csr_matrix) -> bool:
    for i in range(A.shape[0]):
        cols = A.indices[A.indptr[i]: A.indptr[i + 1]]
        if np.any(np.diff(cols) <= 0):
            return False
    return True


def spmv(A: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} times {x.shape}")
    return A @ x


def rap(P: sp.spmatrix, A: sp.spmatrix) -> sp.csr_matrix:
    """Galerkin product ``P^T A P``."""
    if A.shape[0] != A.shape[1] or A.shape[1] != P.shape[0]:
        raise ValueError(f"dimension mismatch: A {A.shape}, P {P.shape}")
    P = sp.csr_matrix(P)
    return as_csr(P.T.tocsr() @ (sp.csr_matrix(A) @ P))


def eliminate_dirichlet(K: sp.spmatrix, boundary: np.ndarray) -> sp.csr_matrix:
    """Zero constrained rows/columns and put ones on their diagonal."""
    n = K.shape[0]
    keep = np.ones(n)
    keep[np.asarray(boundary, dtype=np.int64)] = 0.0
    D = sp.diags(keep)
    A = D @ sp.csr_matrix(K) @ D + sp.diags(1.0 - keep)
    A = as_csr(A)
    A.eliminate_zeros()
    return A


# ---------------------------------------------------------------------- PCG
def pcg(A_apply, B_apply, b: np.ndarray, tol: float = 1e-8, maxit: int = 1000,
        x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients stopping on ``||b - Ax|| <= tol ||b||``."""
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    rep = SolveReport(dofs=b.size)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        rep.converged = True
        rep.residuals = [0.0]
        rep.seconds = time.perf_counter() - t0
        return np.zeros_like(b), rep
    r = b - A_apply(x) if x0 is not None else b.copy()
    rel = float(np.linalg.norm(r)) / nb
    rep.residuals.append(rel)
    z = B_apply(r)
    rz = float(r @ z)
    p = z.copy()
    while rel > tol and rep.iterations < maxit:
        if not rz > 0:
            rep.breakdown = f"preconditioner not positive definite (r'Br = {rz:.3e})"
            break
        Ap = A_apply(p)
        pAp = float(p @ Ap)
        if not pAp > 0:
            rep.breakdown = f"nonpositive curvature (p'Ap = {pAp:.3e})"
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rep.iterations += 1
        rep.alphas.append(alpha)
        rel = float(np.linalg.norm(r)) / nb
        rep.residuals.append(rel)
        if rel <= tol:
            break
        z = B_apply(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rep.betas.append(beta)
        rz = rz_new
        p = z + beta * p
    rep.converged = rel <= tol
    rep.kappa = estimate_condition(rep.alphas, rep.betas)
    rep.seconds = time.perf_counter() - t0
    return x, rep


# ------------------------------------------------------------------ ILU(0)
@numba.njit(cache=True)
def _diag_positions(indptr, indices):
    n = indptr.size - 1
    d = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                d[i] = k
                break
    return d


@numba.njit(cache=True)
def _ilu0_ikj(indptr, indices, data, diag):
    """In-place IKJ ILU(0). Returns -1 on success, else the failing row."""
    n = indptr.size - 1
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if diag[i] < 0:
            return i
        for k in range(indptr[i], indptr[i + 1]):
            pos[indices[k]] = k
        for kk in range(indptr[i], diag[i]):
            k = indices[kk]
            piv = data[diag[k]]
            if piv == 0.0:
                return k
            data[kk] /= piv
            lik = data[kk]
            for jj in range(diag[k] + 1, indptr[k + 1]):
                t = pos[indices[jj]]
                if t >= 0:
                    data[t] -= lik * data[jj]
        for k in range(indptr[i], indptr[i + 1]):
            pos[indices[k]] = -1
        if data[diag[i]] == 0.0 or not np.isfinite(data[diag[i]]):
            return i
    return -1


@numba.njit(cache=True)
def _lu_solve(indptr, indices, data, diag, y):
    n = y.size
    z = y.copy()
    for i in range(n):
        s = z[i]
        for k in range(indptr[i], diag[i]):
            s -= data[k] * z[indices[k]]
        z[i] = s
    for i in range(n - 1, -1, -1):
        s = z[i]
        for k in range(diag[i] + 1, indptr[i + 1]):
            s -= data[k] * z[indices[k]]
        z[i] = s / data[diag[i]]
    return z


@numba.njit(cache=True)
def _lu_solve_transpose(indptr, indices, data, diag, y):
    """Solve (LU)^T z = y, i.e. U^T w = y then L^T z = w, column-oriented."""
    n = y.size
    w = y.copy()
    for i in range(n):
        w[i] /= data[diag[i]]
        wi = w[i]
        for k in range(diag[i] + 1, indptr[i + 1]):
            w[indices[k]] -= data[k] * wi
    for i in range(n - 1, -1, -1):
        zi = w[i]
        for k in range(indptr[i], diag[i]):
            w[indices[k]] -= data[k] * zi
    return w


@dataclass
class Ordering:
    kind: str
    perm: np.ndarray

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        n = self.perm.size
        if not np.array_equal(np.sort(self.perm), np.arange(n)):
            raise ValueError("ordering is not a permutation")


@dataclass
class ILUFactorization:
    """ILU(0) of ``A[perm][:, perm]``; L (unit lower) and U share one CSR array."""

    ordering: Ordering
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    diag: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    def pattern(self) -> sp.csr_matrix:
        return sp.csr_matrix((np.ones_like(self.data), self.indices, self.indptr), shape=(self.n, self.n))


def ilu0(A: sp.spmatrix, ordering: Ordering | np.ndarray | str | None = None, **order_kw) -> ILUFactorization:
    """Incomplete LU with zero fill of the permuted matrix (IKJ variant)."""
    A = as_csr(A)
    n = A.shape[0]
    if ordering is None:
        ordering = Ordering("natural", np.arange(n))
    elif isinstance(ordering, str):
        ordering = make_ordering(A, ordering, **order_kw)
    elif not isinstance(ordering, Ordering):
        ordering = Ordering("user", ordering)
    perm = ordering.perm
    Ap = as_csr(A[perm][:, perm])
    indptr = Ap.indptr.astype(np.int64)
    indices = Ap.indices.astype(np.int64)
    data = Ap.data.copy()
    diag = _diag_positions(indptr, indices)
    bad = _ilu0_ikj(indptr, indices, data, diag)
    if bad >= 0:
        raise ZeroPivotError(int(bad))
    return ILUFactorization(ordering, indptr, indices, data, diag, {"variant": "ikj", "ordering": ordering.kind})


def ilu_apply(F: ILUFactorization, r: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """``z = P^T (LU)^{-1} P r``, or the transpose solve when ``adjoint`` is set."""
    perm = F.ordering.perm
    y = np.ascontiguousarray(r[perm], dtype=float)
    if adjoint:
        z = _lu_solve_transpose(F.indptr, F.indices, F.data, F.diag, y)
    else:
        z = _lu_solve(F.indptr, F.indices, F.data, F.diag, y)
    out = np.empty_like(z)
    out[perm] = z
    return out


# --------------------------------------------------------------- orderings
def order_natural(A) -> Ordering:
    return Ordering("natural", np.arange(A.shape[0]))


def order_rcm(A: sp.spmatrix) -> Ordering:
    """Reverse Cuthill-McKee on the symmetrized graph of ``A``."""
    A = sp.csr_matrix(A)
    G = as_csr(abs(A) + abs(A.T))
    return Ordering("rcm", reverse_cuthill_mckee(G, symmetric_mode=True).astype(np.int64))


@numba.njit(cache=True)
def _find(indptr, indices, i, j):
    lo, hi = indptr[i], indptr[i + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        c = indices[mid]
        if c == j:
            return mid
        if c < j:
            lo = mid + 1
        else:
            hi = mid
    return -1


@numba.njit(cache=True)
def _discard(m, indptr, indices, data, diag, active):
    """Squared Frobenius norm of the fill ILU(0) would drop when eliminating m."""
    amm = data[diag[m]]
    s = 0.0
    for ii in range(indptr[m], indptr[m + 1]):
        i = indices[ii]
        if i == m or not active[i]:
            continue
        # a_im from row i (value of the current, possibly updated, matrix)
        pim = _find(indptr, indices, i, m)
        aim = data[pim]
        for jj in range(indptr[m], indptr[m + 1]):
            j = indices[jj]
            if j == m or j == i or not active[j]:
                continue
            if _find(indptr, indices, i, j) < 0:
                f = aim * data[jj] / amm
                s += f * f
    return s


@numba.njit(cache=True)
def _heap_less(w, a, b):
    return w[a] < w[b] or (w[a] == w[b] and a < b)


@numba.njit(cache=True)
def _sift_up(heap, where, w, k):
    while k > 0:
        parent = (k - 1) // 2
        if _heap_less(w, heap[k], heap[parent]):
            heap[k], heap[parent] = heap[parent], heap[k]
            where[heap[k]] = k
            where[heap[parent]] = parent
            k = parent
        else:
            break


@numba.njit(cache=True)
def _sift_down(heap, where, w, k, size):
    while True:
        l = 2 * k + 1
        if l >= size:
            break
        c = l
        if l + 1 < size and _heap_less(w, heap[l + 1], heap[l]):
            c = l + 1
        if _heap_less(w, heap[c], heap[k]):
            heap[k], heap[c] = heap[c], heap[k]
            where[heap[k]] = k
            where[heap[c]] = c
            k = c
        else:
            break


@numba.njit(cache=True)
def _mdf(indptr, indices, data, diag):
    n = indptr.size - 1
    active = np.ones(n, dtype=np.bool_)
    w = np.empty(n)
    for m in range(n):
        w[m] = _discard(m, indptr, indices, data, diag, active)
    heap = np.arange(n)
    where = np.arange(n)
    for k in range(n // 2 - 1, -1, -1):
        _sift_down(heap, where, w, k, n)
    size = n
    order = np.empty(n, dtype=np.int64)
    for step in range(n):
        k = heap[0]
        size -= 1
        heap[0] = heap[size]
        where[heap[0]] = 0
        where[k] = -1
        if size > 0:
            _sift_down(heap, where, w, 0, size)
        order[step] = k
        active[k] = False
        akk = data[diag[k]]
        # ILU(0) update of the remaining neighbours
        for ii in range(indptr[k], indptr[k + 1]):
            i = indices[ii]
            if not active[i]:
                continue
            pik = _find(indptr, indices, i, k)
            lik = data[pik] / akk
            for jj in range(indptr[k], indptr[k + 1]):
                j = indices[jj]
                if not active[j]:
                    continue
                t = _find(indptr, indices, i, j)
                if t >= 0:
                    data[t] -= lik * data[jj]
        for ii in range(indptr[k], indptr[k + 1]):
            i = indices[ii]
            if not active[i]:
                continue
            w[i] = _discard(i, indptr, indices, data, diag, active)
            _sift_up(heap, where, w, where[i])
            _sift_down(heap, where, w, where[i], size)
    return order


def mdf_weights(A: sp.spmatrix) -> np.ndarray:
    """Initial discard weights (squared Frobenius norms) of every node."""
    A = as_csr(A)
    indptr, indices = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    diag = _diag_positions(indptr, indices)
    active = np.ones(A.shape[0], dtype=np.bool_)
    return np.array([_discard(m, indptr, indices, A.data, diag, active) for m in range(A.shape[0])])


def order_mdf(A: sp.spmatrix) -> Ordering:
    """Minimum discarded fill ordering with lowest-index tie breaking."""
    A = as_csr(A)
    indptr, indices = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    diag = _diag_positions(indptr, indices)
    if np.any(diag < 0):
        raise ValueError("MDF ordering needs a structurally nonzero diagonal")
    return Ordering("mdf", _mdf(indptr, indices, A.data.copy(), diag))


def order_line(coords: np.ndarray, direction: str = "auto", tol: float = 1e-10) -> Ordering:
    """Order tensor-grid nodes line by line along ``direction`` ('x', 'y' or 'auto').

    ``auto`` picks lines along the direction with the smaller minimum spacing
    (the strongly coupled one). Nodes that do not form a full tensor grid are
    rejected.
    """
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    xs = _grid_axis(coords[:, 0], tol)
    ys = _grid_axis(coords[:, 1], tol)
    ix = np.searchsorted(xs, coords[:, 0] - tol)
    iy = np.searchsorted(ys, coords[:, 1] - tol)
    key = ix * ys.size + iy
    if xs.size * ys.size != n or np.unique(key).size != n:
        raise ValueError("line ordering requires nodes on a tensor-product grid")
    if direction == "auto":
        dx = np.min(np.diff(xs)) if xs.size > 1 else np.inf
        dy = np.min(np.diff(ys)) if ys.size > 1 else np.inf
        direction = "x" if dx <= dy else "y"
    if direction == "x":
        perm = np.lexsort((ix, iy))
    elif direction == "y":
        perm = np.lexsort((iy, ix))
    else:
        raise ValueError(f"unknown line direction {direction!r}")
    return Ordering("line", perm)


def _grid_axis(v: np.ndarray, tol: float) -> np.ndarray:
    s = np.sort(v)
    keep = np.concatenate(([True], np.diff(s) > tol))
    return s[keep]


def make_ordering(A: sp.spmatrix, kind: str, coords: np.ndarray | None = None, direction: str = "auto") -> Ordering:
    if kind == "natural":
        return order_natural(A)
    if kind == "rcm":
        return order_rcm(A)
    if kind == "mdf":
        return order_mdf(A)
    if kind == "line":
        if coords is None:
            raise ValueError("line ordering needs node coordinates")
        return order_line(coords, direction)
    raise ValueError(f"unknown ordering {kind!r}")


# ----------------------------------------------------------------- Cholesky
@dataclass
class CholeskyFactor:
    perm: np.ndarray
    lu: object
    n: int

    def solve(self, b: np.ndarray) -> np.ndarray:
        return chol_solve(self, b)


def cholesky(A: sp.spmatrix) -> CholeskyFactor:
    """Sparse SPD factorization in RCM order (LU without pivoting, positivity checked)."""
    A = as_csr(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("cholesky needs a square matrix")
    if n == 0:
        return CholeskyFactor(np.empty(0, dtype=np.int64), None, 0)
    if abs(A - A.T).max() > 1e-12 * max(1.0, abs(A).max()):
        raise NotSPDError("matrix is not symmetric")
    perm = order_rcm(A).perm
    Ap = sp.csc_matrix(A[perm][:, perm])
    try:
        lu = splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NotSPDError(str(exc)) from exc
    d = lu.U.diagonal()
    if np.any(d <= 0) or not np.array_equal(lu.perm_r, np.arange(n)):
        raise NotSPDError("nonpositive pivot: matrix is not positive definite")
    return CholeskyFactor(perm, lu, n)


def chol_solve(F: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise ValueError("right-hand side size mismatch")
    if F.n == 0:
        return b.copy()
    out = np.empty_like(b)
    out[F.perm] = F.lu.solve(b[F.perm])
    return out


# ------------------------------------------------------- triangular sweeps
@numba.njit(cache=True)
def _tri_lower(indptr, indices, data, diag, y):
    n = y.size
    z = np.empty(n)
    for i in range(n):
        s = y[i]
        for k in range(indptr[i], diag[i]):
            s -= data[k] * z[indices[k]]
        z[i] = s / data[diag[i]]
    return z


@numba.njit(cache=True)
def _tri_upper(indptr, indices, data, diag, y):
    n = y.size
    z = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(diag[i] + 1, indptr[i + 1]):
            s -= data[k] * z[indices[k]]
        z[i] = s / data[diag[i]]
    return z


def triangular_solve(A: sp.csr_matrix, y: np.ndarray, lower: bool = True, diag: np.ndarray | None = None) -> np.ndarray:
    """Solve with the lower (D + L) or upper (D + U) triangle of canonical CSR ``A``."""
    indptr, indices = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    if diag is None:
        diag = _diag_positions(indptr, indices)
    y = np.ascontiguousarray(y, dtype=float)
    if lower:
        return _tri_lower(indptr, indices, A.data, diag, y)
    return _tri_upper(indptr, indices, A.data, diag, y)
