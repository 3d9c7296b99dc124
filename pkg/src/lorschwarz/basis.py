"""One-dimensional Gauss-Lobatto-Legendre machinery on the reference interval [0, 1].

Everything downstream (sum-factorized operators, low-order refinement,
element-structured multigrid) is seeded from the objects built here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_NEWTON = 100
NEWTON_STAGNATION = 1e-15


def _legendre_and_derivative(p: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return P_p(x), P_p'(x), P_p''(x) on [-1, 1] by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if p == 0:
        z = np.zeros_like(x)
        return p0, z, z
    p1 = x.copy()
    dp0, dp1 = np.zeros_like(x), np.ones_like(x)
    for k in range(2, p + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp0, dp1 = dp1, dp0 + (2 * k - 1) * p0
    # (1 - x^2) P'' = 2x P' - p(p+1) P, only meaningful away from the endpoints
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = (2.0 * x * dp1 - p * (p + 1) * p1) / (1.0 - x * x)
    return p1, dp1, d2


def gll_rule(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto-Legendre nodes and weights on [0, 1].

    Interior nodes are the roots of P_p', found by Newton's method from
    Chebyshev-Lobatto initial guesses. The rule is exact for polynomials of
    degree ``2p - 1``.
    """
    if p < 1:
        raise ValueError(f"GLL rule needs p >= 1, got {p}")
    if p == 1:
        return np.array([0.0, 1.0]), np.array([0.5, 0.5])
    k = np.arange(1, p)
    x = -np.cos(np.pi * k / p)
    for _ in range(MAX_NEWTON):
        _, dp, d2 = _legendre_and_derivative(p, x)
        dx = dp / d2
        x = x - dx
        if np.max(np.abs(dx)) < NEWTON_STAGNATION:
            break
    x = np.sort(x)
    # enforce exact symmetry about the midpoint
    x = 0.5 * (x - x[::-1])
    t = np.concatenate(([-1.0], x, [1.0]))
    pp, _, _ = _legendre_and_derivative(p, t)
    w = 2.0 / (p * (p + 1) * pp**2)
    w = 0.5 * (w + w[::-1])
    return 0.5 * (t + 1.0), 0.5 * w


def gauss_rule(q: int) -> tuple[np.ndarray, np.ndarray]:
    """q-point Gauss-Legendre rule on [0, 1], exact to degree 2q - 1."""
    if q < 1:
        raise ValueError(f"Gauss rule needs q >= 1, got {q}")
    t, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (t + 1.0), 0.5 * w


def lagrange_matrices(nodes: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the nodal Lagrange basis at ``points``.

    Returns ``(V, dV)`` of shape ``(len(points), len(nodes))`` with
    ``V[q, i] = l_i(points[q])``.
    """
    nodes = np.asarray(nodes, dtype=float)
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    n = nodes.size
    V = np.empty((pts.size, n))
    dV = np.empty((pts.size, n))
    diff = pts[:, None] - nodes[None, :]
    for j in range(n):
        others = np.delete(np.arange(n), j)
        denom = np.prod(nodes[j] - nodes[others])
        a = diff[:, others]
        V[:, j] = np.prod(a, axis=1) / denom
        # sum over m of prod_{k != m} a_k via prefix/suffix products
        pre = np.ones_like(a)
        suf = np.ones_like(a)
        pre[:, 1:] = np.cumprod(a, axis=1)[:, :-1]
        suf[:, :-1] = np.cumprod(a[:, ::-1], axis=1)[:, ::-1][:, 1:]
        dV[:, j] = np.sum(pre * suf, axis=1) / denom
    return V, dV


@dataclass(frozen=True)
class TensorBasis1D:
    """Nodal GLL basis of degree ``p`` with its volume quadrature and 1D matrices.

    ``B[q, i]`` and ``D[q, i]`` hold basis values and derivatives at the
    volume quadrature points. ``M1D`` and ``K1D`` are always integrated
    exactly, independent of the volume quadrature choice.
    """

    degree: int
    gll_nodes: np.ndarray
    gll_weights: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    B: np.ndarray
    D: np.ndarray
    M1D: np.ndarray
    K1D: np.ndarray
    quadrature: str = "gauss"

    @property
    def n(self) -> int:
        return self.degree + 1

    @property
    def q(self) -> int:
        return self.quad_nodes.size

    def evaluate(self, points) -> tuple[np.ndarray, np.ndarray]:
        return lagrange_matrices(self.gll_nodes, points)


def build_basis(p: int, quadrature: str = "gauss") -> TensorBasis1D:
    """Build the degree-``p`` GLL basis.

    ``quadrature`` selects the volume rule used by the matrix-free operators:
    ``"gauss"`` (``p+1`` Gauss-Legendre points) or ``"gll"`` (collocation at
    the GLL nodes).
    """
    nodes, weights = gll_rule(p)
    if quadrature == "gauss":
        qn, qw = gauss_rule(p + 1)
    elif quadrature == "gll":
        qn, qw = nodes.copy(), weights.copy()
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    B, D = lagrange_matrices(nodes, qn)
    if quadrature == "gll":
        B = np.eye(p + 1)
    en, ew = gauss_rule(p + 1)
    Be, De = lagrange_matrices(nodes, en)
    M1D = Be.T @ (ew[:, None] * Be)
    K1D = De.T @ (ew[:, None] * De)
    M1D = 0.5 * (M1D + M1D.T)
    K1D = 0.5 * (K1D + K1D.T)
    for arr in (nodes, weights, qn, qw, B, D, M1D, K1D):
        arr.setflags(write=False)
    return TensorBasis1D(p, nodes, weights, qn, qw, B, D, M1D, K1D, quadrature)
