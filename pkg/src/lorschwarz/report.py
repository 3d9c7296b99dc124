"""Solve reports and Lanczos condition estimates from CG coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal


@dataclass
class SolveReport:
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    kappa: float = math.nan
    seconds: float = 0.0
    dofs: int = 0
    converged: bool = False
    breakdown: str | None = None
    alphas: list[float] = field(default_factory=list, repr=False)
    betas: list[float] = field(default_factory=list, repr=False)
    info: dict = field(default_factory=dict)
    solution: np.ndarray | None = field(default=None, repr=False)

    def lanczos_eigenvalues(self) -> np.ndarray:
        return lanczos_eigenvalues(self.alphas, self.betas)


def lanczos_eigenvalues(alphas, betas) -> np.ndarray:
    """Ritz values of the preconditioned operator from the CG step lengths.

    ``betas[j]`` is the coefficient used to form search direction ``j + 1``.
    """
    a = np.asarray(alphas, dtype=float)
    k = a.size
    if k == 0:
        return np.empty(0)
    b = np.asarray(betas[: k - 1], dtype=float)
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    if k == 1:
        return diag
    return eigvalsh_tridiagonal(diag, off)


def estimate_condition(alphas, betas, min_iterations: int = 1) -> float:
    """Extreme-eigenvalue ratio of the CG Lanczos matrix, ``nan`` when unavailable."""
    if len(alphas) < min_iterations or len(alphas) == 0:
        return math.nan
    ev = lanczos_eigenvalues(alphas, betas)
    if ev[0] <= 0:
        return math.nan
    return float(ev[-1] / ev[0])
