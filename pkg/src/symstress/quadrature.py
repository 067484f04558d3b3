"""Quadrature on the reference triangle and the unit interval."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = ["QuadratureRule", "quadrature_rule", "interval_rule", "MAX_DEGREE"]

MAX_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights; for triangles the weights sum to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return self.weights.size


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule exact for polynomials of total ``degree``.

    The square ``(s, t)`` maps onto the reference triangle by
    ``x = s, y = t (1 - s)``; the Jacobian ``1 - s`` is absorbed into a
    Gauss-Jacobi rule in ``s`` so all weights stay positive.
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"quadrature degree must be an integer in [1, {MAX_DEGREE}]")
    n = (degree + 2) // 2
    a, wa = roots_jacobi(n, 1.0, 0.0)
    b, wb = roots_legendre(n)
    s = 0.5 * (a + 1.0)
    t = 0.5 * (b + 1.0)
    ws = 0.25 * wa
    wt = 0.5 * wb
    S, T = np.meshgrid(s, t, indexing="ij")
    points = np.stack([S.ravel(), (T * (1.0 - S)).ravel()], axis=1)
    weights = np.outer(ws, wt).ravel()
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, int(degree))


@lru_cache(maxsize=None)
def interval_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on ``[0, 1]`` exact to ``degree``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    points = 0.5 * (x + 1.0)
    weights = 0.5 * w
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, int(degree))
