"""Scalar search helpers: golden-section minimization and log-grid bracketing."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(f: Callable[[float], float], a: float, b: float,
                       rel_tol: float = 1e-4, max_iter: int = 200) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``(a, b)``; endpoints are never evaluated.

    Stops once the bracket is narrower than ``rel_tol`` times the midpoint.
    Returns ``(x, f(x))`` for the best interior point seen.
    """
    if not b > a:
        raise ValueError(f"empty bracket ({a}, {b})")
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= rel_tol * abs(0.5 * (a + b)):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def bracket_then_golden(f: Callable[[float], float], lo: float, hi: float, points: int = 64,
                        rel_tol: float = 1e-4) -> tuple[float, float]:
    """Minimize ``f`` on ``(lo, hi)`` with a log-spaced scan followed by golden section.

    The scan guards against a golden-section bracket that misses the basin.
    ``lo`` may be 0, in which case the scan starts at ``hi * 1e-6``.
    """
    start = lo if lo > 0 else hi * 1e-6
    grid = np.geomspace(start, hi, points + 2)[1:-1] if lo > 0 else np.geomspace(start, hi, points + 1)[:-1]
    values = [f(float(t)) for t in grid]
    i = int(np.argmin(values))
    left = lo if i == 0 else float(grid[i - 1])
    right = hi if i == len(grid) - 1 else float(grid[i + 1])
    x, fx = golden_section_min(f, left, right, rel_tol)
    if values[i] < fx:
        return float(grid[i]), values[i]
    return x, fx
