"""Dense reference assemblers used to check the matrix-free operators.

Nothing here shares code with the sum-factorized kernels: nodes come from
numpy's Legendre module, basis functions from explicit products, face points
from Newton inversion of the bilinear map, normals from edge geometry and the
BR2 lifting from dense element mass matrices. Only intended for small meshes.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as npleg

from .mesh import CoarseMesh


def gll_points(p: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [0, 1] as roots of ``(1 - x^2) P_p'(x)``."""
    if p == 1:
        return np.array([0.0, 1.0])
    inner = npleg.legroots(npleg.legder(np.eye(p + 1)[p]))
    return (np.concatenate(([-1.0], np.sort(inner.real), [1.0])) + 1) / 2


def gauss_points(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = npleg.leggauss(q)
    return (x + 1) / 2, w / 2


def lagrange_1d(nodes: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the Lagrange polynomials, each shaped (len(x), n)."""
    n = nodes.size
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.ones((x.size, n))
    D = np.zeros((x.size, n))
    for i in range(n):
        others = [k for k in range(n) if k != i]
        den = np.prod([nodes[i] - nodes[k] for k in others])
        for k in others:
            V[:, i] *= x - nodes[k]
        for m in others:
            term = np.ones_like(x)
            for k in others:
                if k != m:
                    term = term * (x - nodes[k])
            D[:, i] += term
        V[:, i] /= den
        D[:, i] /= den
    return V, D


def _bilinear(corners: np.ndarray, xi: float, eta: float):
    c0, c1, c2, c3 = corners
    x = (1 - xi) * (1 - eta) * c0 + xi * (1 - eta) * c1 + xi * eta * c2 + (1 - xi) * eta * c3
    dxi = (1 - eta) * (c1 - c0) + eta * (c2 - c3)
    deta = (1 - xi) * (c3 - c0) + xi * (c2 - c1)
    return x, np.column_stack([dxi, deta])


def inverse_map(corners: np.ndarray, x: np.ndarray, tol: float = 1e-14, maxit: int = 50) -> np.ndarray:
    """Reference coordinates of physical point ``x`` by Newton iteration."""
    r = np.array([0.5, 0.5])
    for _ in range(maxit):
        y, J = _bilinear(corners, *r)
        step = np.linalg.solve(J, y - x)
        r = r - step
        if np.max(np.abs(step)) < tol:
            break
    return r


def _basis_2d(nodes, xi, eta):
    """Tensor basis values and reference gradients at one point, local index ``i * n + j``."""
    vx, dx = lagrange_1d(nodes, [xi])
    vy, dy = lagrange_1d(nodes, [eta])
    val = np.outer(vx[0], vy[0]).ravel()
    gxi = np.outer(dx[0], vy[0]).ravel()
    geta = np.outer(vx[0], dy[0]).ravel()
    return val, np.stack([gxi, geta])


def element_matrices(corners: np.ndarray, p: int, coeff=None, q: int | None = None):
    """Dense local stiffness and mass of one element."""
    nodes = gll_points(p)
    g, w = gauss_points(q or p + 1)
    n2 = (p + 1) ** 2
    K = np.zeros((n2, n2))
    M = np.zeros((n2, n2))
    for a, xa in enumerate(g):
        for b, yb in enumerate(g):
            val, gref = _basis_2d(nodes, xa, yb)
            x, J = _bilinear(corners, xa, yb)
            det = np.linalg.det(J)
            grad = np.linalg.solve(J.T, gref)
            c = 1.0 if coeff is None else float(coeff(x[0], x[1]))
            wt = w[a] * w[b] * det
            K += wt * c * grad.T @ grad
            M += wt * np.outer(val, val)
    return K, M


def assemble_cg(mesh: CoarseMesh, p: int, elem_node_ids: np.ndarray, boundary: np.ndarray,
                coeff=None, q: int | None = None, dirichlet: bool = True):
    """Dense global ``K_p`` and ``M_p``; with ``dirichlet`` boundary rows/cols of K become identity."""
    n = int(elem_node_ids.max()) + 1
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for e in range(mesh.n_elements):
        Ke, Me = element_matrices(mesh.vertices[mesh.elements[e]], p, coeff, q)
        ids = elem_node_ids[e].ravel()
        K[np.ix_(ids, ids)] += Ke
        M[np.ix_(ids, ids)] += Me
    if dirichlet:
        K[boundary, :] = 0.0
        K[:, boundary] = 0.0
        K[boundary, boundary] = 1.0
    return K, M


def _perimeter_h(mesh: CoarseMesh) -> np.ndarray:
    out = np.zeros(mesh.n_elements)
    for e in range(mesh.n_elements):
        c = mesh.vertices[mesh.elements[e]]
        x, y = c[:, 0], c[:, 1]
        area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        perim = np.sum(np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1))
        out[e] = area / perim
    return out


def _faces(mesh: CoarseMesh):
    """Unique edges as (v0, v1, [elements])."""
    table: dict = {}
    for e, quad in enumerate(mesh.elements):
        for k in range(4):
            a, b = int(quad[k]), int(quad[(k + 1) % 4])
            table.setdefault((min(a, b), max(a, b)), []).append(e)
    return [(a, b, els) for (a, b), els in sorted(table.items())]


def assemble_dg(mesh: CoarseMesh, p: int, eta: float, disc: str = "ip", value: float = 1.0,
                q: int | None = None) -> np.ndarray:
    """Dense SIPG or BR2 matrix with weak homogeneous Dirichlet data and penalty ``eta p^2 / h``.

    ``h`` on a face is the smallest ``|K| / |dK|`` over its elements.
    """
    nodes = gll_points(p)
    n2 = (p + 1) ** 2
    ne = mesh.n_elements
    A = np.zeros((ne * n2, ne * n2))
    masses = []
    for e in range(ne):
        Ke, Me = element_matrices(mesh.vertices[mesh.elements[e]], p, q=q)
        A[e * n2:(e + 1) * n2, e * n2:(e + 1) * n2] += Ke
        masses.append(Me)
    hK = _perimeter_h(mesh)
    s, ws = gauss_points(p + 1)
    centroid = mesh.vertices[mesh.elements].mean(axis=1)
    for a, b, els in _faces(mesh):
        xa, xb = mesh.vertices[a], mesh.vertices[b]
        length = np.linalg.norm(xb - xa)
        t = (xb - xa) / length
        nrm = np.array([t[1], -t[0]])
        if np.dot(nrm, xa - centroid[els[0]]) < 0:
            nrm = -nrm  # outward from the first element
        signs = [1.0, -1.0][: len(els)]
        avg = 0.5 if len(els) == 2 else 1.0
        h = min(hK[e] for e in els)
        sigma = eta * p * p / h
        # trace values and normal derivatives of every basis function of each side
        vals, dns = [], []
        for e in els:
            corners = mesh.vertices[mesh.elements[e]]
            V = np.zeros((s.size, n2))
            DN = np.zeros((s.size, n2))
            for k, sk in enumerate(s):
                ref = inverse_map(corners, xa + sk * (xb - xa))
                val, gref = _basis_2d(nodes, *ref)
                _, J = _bilinear(corners, *ref)
                V[k] = val
                DN[k] = nrm @ np.linalg.solve(J.T, gref)
            vals.append(V)
            dns.append(DN)
        wds = ws * length
        idx = [np.arange(e * n2, (e + 1) * n2) for e in els]
        for i, ei in enumerate(els):
            for j, ej in enumerate(els):
                si, sj = signs[i], signs[j]
                # - <{du/dn}, [v]> - <[u], {dv/dn}>
                blk = -(si * vals[i]).T @ (wds[:, None] * avg * dns[j])
                blk = blk - (avg * dns[i]).T @ (wds[:, None] * sj * vals[j])
                if disc == "ip":
                    blk = blk + sigma * (si * vals[i]).T @ (wds[:, None] * sj * vals[j])
                A[np.ix_(idx[i], idx[j])] += blk
        if disc == "br2":
            # lifting moments on each element K of the face: G[c] maps jump dofs to (1/2)int [u] n_c tau
            for K_pos, eK in enumerate(els):
                tau = vals[K_pos]
                Minv = np.linalg.inv(masses[eK])
                G = []
                for c in range(2):
                    Gc = np.zeros((n2, len(els) * n2))
                    for j in range(len(els)):
                        Gc[:, j * n2:(j + 1) * n2] = avg * tau.T @ (wds[:, None] * signs[j] * nrm[c] * vals[j])
                    G.append(Gc)
                P = eta * sum(Gc.T @ Minv @ Gc for Gc in G)
                allidx = np.concatenate(idx)
                A[np.ix_(allidx, allidx)] += P
        elif disc != "ip":
            raise ValueError(f"unknown discretization {disc!r}")
    return value * A
