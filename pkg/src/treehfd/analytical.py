"""Gaussian benchmark with a closed-form Hoeffding decomposition.

Six equicorrelated standard normal inputs and

    m(x) = sin(2 pi x1) + x1 x2 + x3 x4,    y = m(x) + noise.

Variables are 0-based here: ``x1`` is column 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

P = 6
# subsets with a nonzero exact component (exogenous x5, x6 listed for scoring)
SUBSETS = ((0,), (1,), (2,), (3,), (4,), (5,), (0, 1), (2, 3))


@dataclass(frozen=True)
class CaseConfig:
    n: int
    rho: float = 0.5
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (1 + (P - 1) * self.rho > 0 and 1 - self.rho > 0):
            raise ValueError(f"rho={self.rho} does not give a positive definite equicorrelation")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


def equicorrelation(rho: float, p: int = P) -> np.ndarray:
    return (1 - rho) * np.eye(p) + rho * np.ones((p, p))


def m_true(x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    out = np.sin(2 * np.pi * x[..., 0]) + x[..., 0] * x[..., 1] + x[..., 2] * x[..., 3]
    return float(out) if out.ndim == 0 else out


def sample_case(cfg: CaseConfig) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(X, y)``; uses numpy's PCG64 stream seeded with ``cfg.seed``."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    L = np.linalg.cholesky(equicorrelation(cfg.rho))
    Z = rng.standard_normal((cfg.n, P))
    X = Z @ L.T
    y = m_true(X) + cfg.noise_sd * rng.standard_normal(cfg.n)
    return X, y


def hfd_true(J, x, rho: float = 0.5) -> np.ndarray | float:
    """Exact Hoeffding component over ``J`` (0-based), evaluated at ``x``.

    ``x`` holds full input rows (length 6 or ``n x 6``).
    """
    J = tuple(sorted(J))
    x = np.asarray(x, dtype=float)
    c = rho / (1 + rho ** 2)
    if J == ():
        out = np.full(x.shape[:-1], 2 * rho)
    elif J == (0,):
        out = np.sin(2 * np.pi * x[..., 0]) + c * (x[..., 0] ** 2 - 1)
    elif J in ((1,), (2,), (3,)):
        out = c * (x[..., J[0]] ** 2 - 1)
    elif J in ((0, 1), (2, 3)):
        a, b = x[..., J[0]], x[..., J[1]]
        out = rho * (1 - rho ** 2) / (1 + rho ** 2) - c * (a ** 2 + b ** 2) + a * b
    else:
        out = np.zeros(x.shape[:-1])
    return float(out) if np.ndim(out) == 0 else out


def reference(rho: float = 0.5):
    """Evaluator ``(J, X) -> values`` of the exact decomposition."""
    def ref(J, X):
        return hfd_true(J, np.atleast_2d(X), rho)
    ref.subsets = SUBSETS
    return ref
